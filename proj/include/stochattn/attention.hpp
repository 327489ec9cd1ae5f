#pragma once

// Multi-head self-attention in three interchangeable forms:
//
//   deterministic   A = softmax(Q K^T / alpha),                 H = A V
//   stochastic      A ~ gumbel_softmax(Q K^T, tau),             H = A V
//   hierarchical    A_c ~ gumbel_softmax(K C, tau1)      (l x c)
//                   K^  = A_c C^T                        (l x d_h)
//                   A_v ~ gumbel_softmax(Q K^^T, tau2)   (l x l),  H = A_v V
//
// Inputs are [l, d] or batched [batch, l, d]; the output has the same shape.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stochattn/errors.hpp"
#include "stochattn/ops.hpp"
#include "stochattn/sampling.hpp"
#include "stochattn/tensor.hpp"

namespace stochattn {

enum class AttentionMode { deterministic, stochastic, hierarchical };

inline std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::deterministic:
      return "deterministic";
    case AttentionMode::stochastic:
      return "stochastic";
    case AttentionMode::hierarchical:
      return "hierarchical";
  }
  return "?";
}

inline AttentionMode parse_attention_mode(const std::string& name) {
  if (name == "deterministic") return AttentionMode::deterministic;
  if (name == "stochastic") return AttentionMode::stochastic;
  if (name == "hierarchical") return AttentionMode::hierarchical;
  throw ConfigError("unknown attention mode '" + name + "' (expected deterministic, stochastic or hierarchical)");
}

struct StochasticConfig {
  AttentionMode mode = AttentionMode::deterministic;
  double tau = 1.0;
  double tau1 = 1.0;
  double tau2 = 1.0;

  void validate() const {
    for (double t : {tau, tau1, tau2}) {
      if (!(t > 0.0) || !std::isfinite(t)) throw ParameterError("attention temperatures must be positive");
    }
  }
};

/// Query/key/value projections of one attention layer.
struct AttentionParams {
  Tensor w_q;  // [d, d]
  Tensor w_k;
  Tensor w_v;
  std::size_t heads = 1;
  double alpha = 1.0;

  std::size_t model_dim() const { return w_q.dim(0); }
  std::size_t head_dim() const { return model_dim() / heads; }

  static double default_alpha(std::size_t model_dim, std::size_t heads) {
    return std::sqrt(static_cast<double>(model_dim) / static_cast<double>(heads));
  }

  void validate() const {
    if (heads == 0) throw ShapeError("attention needs at least one head");
    const Shape square{w_q.dim(0), w_q.dim(0)};
    if (w_q.shape() != square || w_k.shape() != square || w_v.shape() != square) {
      throw ShapeError("W_q, W_k, W_v must all be d x d, got " + shape_string(w_q.shape()) + ", " +
                       shape_string(w_k.shape()) + ", " + shape_string(w_v.shape()));
    }
    if (model_dim() % heads != 0) {
      throw ShapeError("model dimension " + std::to_string(model_dim()) + " is not divisible by " +
                       std::to_string(heads) + " heads");
    }
    if (!(alpha > 0.0)) throw ParameterError("attention scale alpha must be positive");
  }
};

/// Learnable centroids, stored column-wise as a [d_h, c] matrix.
struct CentroidSet {
  Tensor centroids;

  std::size_t head_dim() const { return centroids.dim(0); }
  std::size_t count() const { return centroids.dim(1); }
};

/// Attention matrices captured during a forward pass, one entry per layer call.
struct AttentionTrace {
  std::vector<Tensor> value_attention;     // [batch, heads, l, l]
  std::vector<Tensor> centroid_attention;  // [batch, heads, l, c], hierarchical only
};

namespace detail {

struct Projected {
  Tensor q, k, v;  // [batch, heads, l, d_h]
  bool unbatched = false;
};

inline Projected project(const Tensor& x, const AttentionParams& params) {
  params.validate();
  const bool unbatched = x.rank() == 2;
  if ((x.rank() != 2 && x.rank() != 3) || x.dim(x.rank() - 1) != params.model_dim()) {
    throw ShapeError("attention input must be [l, " + std::to_string(params.model_dim()) + "] or [batch, l, " +
                     std::to_string(params.model_dim()) + "], got " + shape_string(x.shape()));
  }
  const Tensor x3 = unbatched ? reshape(x, {1, x.dim(0), x.dim(1)}) : x;
  return {split_heads(matmul(x3, params.w_q), params.heads), split_heads(matmul(x3, params.w_k), params.heads),
          split_heads(matmul(x3, params.w_v), params.heads), unbatched};
}

inline Tensor masked(const Tensor& scores, const PaddingMask* mask) {
  if (mask == nullptr) return scores;
  if (mask->batch != scores.dim(0) || mask->length != scores.dim(3)) {
    throw ShapeError("padding mask [" + std::to_string(mask->batch) + "," + std::to_string(mask->length) +
                     "] does not match attention scores " + shape_string(scores.shape()));
  }
  return add(scores, key_mask_bias(*mask, scores.dim(1), scores.dim(2)));
}

inline Tensor finish(const Tensor& attention, const Projected& p) {
  Tensor out = merge_heads(matmul(attention, p.v));
  if (p.unbatched) out = reshape(out, {out.dim(1), out.dim(2)});
  return out;
}

}  // namespace detail

inline Tensor deterministic_mhsa(const Tensor& x, const AttentionParams& params, const PaddingMask* mask = nullptr,
                                 AttentionTrace* trace = nullptr) {
  const auto p = detail::project(x, params);
  const Tensor scores = detail::masked(matmul(p.q, transpose(p.k)), mask);
  Tensor attention = softmax(scores, 3, params.alpha);
  if (trace) trace->value_attention.push_back(attention);
  return detail::finish(attention, p);
}

/// Gumbel-softmax attention over values; `tau` takes the place of alpha.
inline Tensor stochastic_mhsa(const Tensor& x, const AttentionParams& params, double tau, NoiseSource& noise,
                              const PaddingMask* mask = nullptr, AttentionTrace* trace = nullptr) {
  const auto p = detail::project(x, params);
  const Tensor scores = detail::masked(matmul(p.q, transpose(p.k)), mask);
  Tensor attention = gumbel_softmax(scores, tau, noise, 3);
  if (trace) trace->value_attention.push_back(attention);
  return detail::finish(attention, p);
}

/// Keys first attend stochastically to the centroids, are rebuilt as centroid
/// mixtures, and only then scored against the queries.
inline Tensor hierarchical_mhsa(const Tensor& x, const AttentionParams& params, const CentroidSet& centroids,
                                double tau1, double tau2, NoiseSource& noise, const PaddingMask* mask = nullptr,
                                AttentionTrace* trace = nullptr) {
  if (centroids.centroids.rank() != 2 || centroids.head_dim() != params.head_dim()) {
    throw ShapeError("centroids must be [" + std::to_string(params.head_dim()) + ", c], got " +
                     shape_string(centroids.centroids.shape()));
  }
  const auto p = detail::project(x, params);
  Tensor centroid_attention = gumbel_softmax(matmul(p.k, centroids.centroids), tau1, noise, 3);
  const Tensor rebuilt_keys = matmul(centroid_attention, transpose(centroids.centroids));
  const Tensor scores = detail::masked(matmul(p.q, transpose(rebuilt_keys)), mask);
  Tensor attention = gumbel_softmax(scores, tau2, noise, 3);
  if (trace) {
    trace->centroid_attention.push_back(centroid_attention);
    trace->value_attention.push_back(attention);
  }
  return detail::finish(attention, p);
}

/// Dispatches on `config.mode`. `centroids` is required in hierarchical mode.
inline Tensor self_attention(const Tensor& x, const AttentionParams& params, const StochasticConfig& config,
                             const CentroidSet* centroids, NoiseSource& noise, const PaddingMask* mask = nullptr,
                             AttentionTrace* trace = nullptr) {
  config.validate();
  switch (config.mode) {
    case AttentionMode::deterministic:
      return deterministic_mhsa(x, params, mask, trace);
    case AttentionMode::stochastic:
      return stochastic_mhsa(x, params, config.tau, noise, mask, trace);
    case AttentionMode::hierarchical:
      if (centroids == nullptr) throw ContractError("hierarchical attention requires a centroid set");
      return hierarchical_mhsa(x, params, *centroids, config.tau1, config.tau2, noise, mask, trace);
  }
  throw ContractError("unreachable attention mode");
}

/// Largest singular value of a [rows, cols] row-major matrix by power
/// iteration on M^T M.
inline double spectral_norm(std::span<const double> m, std::size_t rows, std::size_t cols,
                            std::size_t max_iterations = 10000) {
  if (m.size() != rows * cols) throw ShapeError("spectral_norm: data does not match dimensions");
  std::vector<double> v(cols), mv(rows);
  for (std::size_t j = 0; j < cols; ++j) v[j] = 1.0 + 0.01 * static_cast<double>(j);
  double sigma = 0.0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    double vnorm = 0.0;
    for (double e : v) vnorm += e * e;
    vnorm = std::sqrt(vnorm);
    if (vnorm == 0.0) return 0.0;
    for (double& e : v) e /= vnorm;
    for (std::size_t i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) acc += m[i * cols + j] * v[j];
      mv[i] = acc;
    }
    double next = 0.0;
    for (double e : mv) next += e * e;
    next = std::sqrt(next);
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < rows; ++i) acc += m[i * cols + j] * mv[i];
      v[j] = acc;
    }
    const bool converged = std::abs(next - sigma) <= 1e-15 * next;
    sigma = next;
    if (converged) break;
  }
  return sigma;
}

struct CentroidBoundCheck {
  double lhs = 0.0;      // ||G(k_i C / tau) - G(k_j C / tau)||_2
  double rhs = 0.0;      // epsilon * ||C||_2 / tau
  double epsilon = 0.0;
  bool holds = false;
};

/// Checks that two keys within `epsilon` of each other get centroid-attention
/// rows within epsilon * ||C||_2 / tau, with the same Gumbel draw `shared_noise`
/// (length c) applied to both. `epsilon` defaults to ||k_i - k_j||_2.
inline CentroidBoundCheck check_centroid_attention_bound(std::span<const double> key_i, std::span<const double> key_j,
                                                         const CentroidSet& centroids, double tau,
                                                         std::span<const double> shared_noise,
                                                         std::optional<double> epsilon = std::nullopt) {
  const std::size_t dh = centroids.head_dim();
  const std::size_t c = centroids.count();
  if (key_i.size() != dh || key_j.size() != dh || shared_noise.size() != c) {
    throw ShapeError("centroid bound check: keys must have length " + std::to_string(dh) + " and noise length " +
                     std::to_string(c));
  }
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  double distance = 0.0;
  for (std::size_t i = 0; i < dh; ++i) distance += (key_i[i] - key_j[i]) * (key_i[i] - key_j[i]);
  distance = std::sqrt(distance);
  const double eps = epsilon.value_or(distance);
  if (distance > eps * (1.0 + 1e-12)) throw ContractError("keys are farther apart than epsilon");

  const auto cd = centroids.centroids.data();
  const auto centroid_row = [&](std::span<const double> key) {
    std::vector<double> scores(c, 0.0);
    for (std::size_t p = 0; p < dh; ++p)
      for (std::size_t j = 0; j < c; ++j) scores[j] += key[p] * cd[p * c + j];
    for (std::size_t j = 0; j < c; ++j) scores[j] += shared_noise[j];
    return softmax(Tensor({c}, std::move(scores)), 0, tau);
  };
  const Tensor a = centroid_row(key_i);
  const Tensor b = centroid_row(key_j);
  double lhs = 0.0;
  for (std::size_t j = 0; j < c; ++j) lhs += (a[j] - b[j]) * (a[j] - b[j]);

  CentroidBoundCheck out;
  out.lhs = std::sqrt(lhs);
  out.epsilon = eps;
  out.rhs = eps * spectral_norm(cd, dh, c) / tau;
  out.holds = out.lhs <= out.rhs + 1e-9;
  return out;
}

}  // namespace stochattn
