#pragma once

// Differentiable tensor operations. Each op computes its output eagerly and,
// when a tape is active and some input requires gradients, records the
// matching backward rule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "stochattn/errors.hpp"
#include "stochattn/rng.hpp"
#include "stochattn/tensor.hpp"

namespace stochattn {

/// Padding positions of a [batch, length] token grid; nonzero means padded.
struct PaddingMask {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> padded;

  static PaddingMask none(std::size_t batch, std::size_t length) {
    return {batch, length, std::vector<std::uint8_t>(batch * length, 0)};
  }
  bool is_padded(std::size_t b, std::size_t t) const { return padded[b * length + t] != 0; }
};

// Additive score for masked keys.
inline constexpr double kMaskedScore = -1e9;

namespace detail {

inline void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

inline bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                          std::initializer_list<const Tensor*> inputs) {
  check_finite(data, op);
  return Tensor(std::move(shape), std::move(data), tracking(inputs));
}

// c[m,n] += a[m,k] * b[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m,k] += dc[m,n] * b[k,n]^T
inline void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* drow = dc + i * n;
    double* arow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
      arow[p] += acc;
    }
  }
}

// db[k,n] += a[m,k]^T * dc[m,n]
inline void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* drow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* brow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += av * drow[j];
    }
  }
}

inline bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

}  // namespace detail

/// Matrix product over the last two dimensions.
///
/// `a` is [..., m, k]. `b` is either [k, n], shared by every leading index of
/// `a`, or [..., k, n] with the same leading dimensions as `a`.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch();
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != k) throw mismatch();
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw mismatch();
    }
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);

  std::vector<double> out(batch * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    detail::gemm_nn(ad + s * m * k, bd + (shared_b ? 0 : s * k * n), out.data() + s * m * n, m, k, n);
  }
  Tensor result = detail::make_result(std::move(out_shape), std::move(out), "matmul", {&a, &b});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [an = a.node(), bn = b.node(), on = result.node(), batch, m, k, n, shared_b] {
      const double* dc = on->grad.data();
      for (std::size_t s = 0; s < batch; ++s) {
        const double* bs = bn->data.data() + (shared_b ? 0 : s * k * n);
        const double* as = an->data.data() + s * m * k;
        if (an->requires_grad) detail::gemm_nt(dc + s * m * n, bs, an->ensure_grad().data() + s * m * k, m, k, n);
        if (bn->requires_grad) {
          detail::gemm_tn(as, dc + s * m * n, bn->ensure_grad().data() + (shared_b ? 0 : s * k * n), m, k, n);
        }
      }
    });
  }
  return result;
}

/// Swaps the last two dimensions.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_string(x.shape()));
  const std::size_t r = x.dim(x.rank() - 2);
  const std::size_t c = x.dim(x.rank() - 1);
  const std::size_t batch = x.numel() / (r * c);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[s * r * c + j * r + i] = xd[s * r * c + i * c + j];
  Tensor result = detail::make_result(std::move(out_shape), std::move(out), "transpose", {&x});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), on = result.node(), batch, r, c] {
      auto& g = xn->ensure_grad();
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[s * r * c + i * c + j] += on->grad[s * r * c + j * r + i];
    });
  }
  return result;
}

/// Same data under a new shape with equal element count.
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  Tensor result = detail::make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                                      "reshape", {&x});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), on = result.node()] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    });
  }
  return result;
}

/// Elementwise sum. `b` may have the shape of `a` or any trailing suffix of it,
/// in which case it is broadcast over the leading dimensions.
inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!detail::is_suffix(a.shape(), b.shape())) {
    throw ShapeError("add: cannot broadcast " + shape_string(b.shape()) + " onto " + shape_string(a.shape()));
  }
  const std::size_t inner = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % inner];
  Tensor result = detail::make_result(a.shape(), std::move(out), "add", {&a, &b});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [an = a.node(), bn = b.node(), on = result.node(), inner] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) g[i % inner] += on->grad[i];
      }
    });
  }
  return result;
}

/// Elementwise product of equally shaped tensors.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor result = detail::make_result(a.shape(), std::move(out), "mul", {&a, &b});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [an = a.node(), bn = b.node(), on = result.node()] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return result;
}

inline Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  Tensor result = detail::make_result(x.shape(), std::move(out), "scale", {&x});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), on = result.node(), factor] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * factor;
    });
  }
  return result;
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Tensor result = detail::make_result(x.shape(), std::move(out), "relu", {&x});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), on = result.node()] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xn->data[i] > 0.0) g[i] += on->grad[i];
    });
  }
  return result;
}

/// Sum of all elements, as a one-element tensor.
inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor result = detail::make_result({1}, {total}, "sum", {&x});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), on = result.node()] {
      auto& g = xn->ensure_grad();
      for (double& v : g) v += on->grad[0];
    });
  }
  return result;
}

/// softmax(x / temperature) along `axis`, stabilized by max subtraction.
inline Tensor softmax(const Tensor& x, std::size_t axis, double temperature = 1.0) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("softmax temperature must be positive and finite, got " + std::to_string(temperature));
  }
  if (axis >= x.rank()) throw ShapeError("softmax axis out of range for shape " + shape_string(x.shape()));
  const std::size_t n = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t outer = x.numel() / (n * inner);

  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) peak = std::max(peak, xd[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp((xd[base + j * inner] - peak) / temperature);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  Tensor result = detail::make_result(x.shape(), std::move(out), "softmax", {&x});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), on = result.node(), outer, inner, n, temperature] {
      auto& g = xn->ensure_grad();
      const auto& y = on->data;
      const auto& dy = on->grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += dy[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            g[idx] += y[idx] * (dy[idx] - dot) / temperature;
          }
        }
      }
    });
  }
  return result;
}

/// Layer normalization over the last dimension with affine gamma/beta of that size.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t width = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(width) + "], got " +
                     shape_string(gamma.shape()) + " and " + shape_string(beta.shape()));
  }
  const std::size_t rows = x.numel() / width;
  std::vector<double> out(x.numel());
  std::vector<double> normalized(x.numel());
  std::vector<double> inv_std(rows);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * width;
    double mean = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += row[j];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) {
      const double xh = (row[j] - mean) * inv_std[r];
      normalized[r * width + j] = xh;
      out[r * width + j] = xh * gamma[j] + beta[j];
    }
  }
  Tensor result = detail::make_result(x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = result.node(),
                                          xhat = std::move(normalized), inv_std = std::move(inv_std), rows, width] {
      const auto& dy = on->grad;
      if (gn->requires_grad) {
        auto& dg = gn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < width; ++j) dg[j] += dy[r * width + j] * xhat[r * width + j];
      }
      if (bn->requires_grad) {
        auto& db = bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < width; ++j) db[j] += dy[r * width + j];
      }
      if (xn->requires_grad) {
        auto& dx = xn->ensure_grad();
        const double w = static_cast<double>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_d = 0.0;
          double sum_dx = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            const double d = dy[r * width + j] * gn->data[j];
            sum_d += d;
            sum_dx += d * xhat[r * width + j];
          }
          for (std::size_t j = 0; j < width; ++j) {
            const double d = dy[r * width + j] * gn->data[j];
            dx[r * width + j] += inv_std[r] / w * (w * d - sum_d - xhat[r * width + j] * sum_dx);
          }
        }
      }
    });
  }
  return result;
}

/// Row lookup: table [vocab, d], ids of a [batch, length] grid -> [batch, length, d].
inline Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids, std::size_t batch,
                        std::size_t length) {
  if (table.rank() != 2) throw ShapeError("embedding table must be rank 2, got " + shape_string(table.shape()));
  if (ids.size() != batch * length) throw ShapeError("embedding: id count does not match batch x length");
  const std::size_t vocab = table.dim(0);
  const std::size_t width = table.dim(1);
  std::vector<double> out(ids.size() * width);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw ContractError("token id " + std::to_string(ids[i]) + " out of range for vocabulary of " +
                          std::to_string(vocab));
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width, out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  Tensor result = detail::make_result({batch, length, width}, std::move(out), "embedding", {&table});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [tn = table.node(), on = result.node(), ids, width] {
      auto& g = tn->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) g[ids[i] * width + j] += on->grad[i * width + j];
    });
  }
  return result;
}

/// Inverted dropout: when active, zero each element with probability `rate`
/// and scale survivors by 1/(1 - rate). When inactive (or rate == 0) the
/// input handle itself is returned.
inline Tensor dropout(const Tensor& x, double rate, bool active, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!active || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  Tensor result = detail::make_result(x.shape(), std::move(out), "dropout", {&x});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), on = result.node(), mask = std::move(mask)] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * mask[i];
    });
  }
  return result;
}

/// [batch, length, heads * head_dim] -> [batch, heads, length, head_dim]
inline Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 3 || x.dim(2) % heads != 0) {
    throw ShapeError("split_heads: cannot split " + shape_string(x.shape()) + " into " + std::to_string(heads) +
                     " heads");
  }
  const std::size_t batch = x.dim(0), length = x.dim(1), width = x.dim(2), hd = width / heads;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < length; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < hd; ++j)
          out[((b * heads + h) * length + t) * hd + j] = xd[(b * length + t) * width + h * hd + j];
  Tensor result = detail::make_result({batch, heads, length, hd}, std::move(out), "split_heads", {&x});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), on = result.node(), batch, length, width, heads, hd] {
      auto& g = xn->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < length; ++t)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < hd; ++j)
              g[(b * length + t) * width + h * hd + j] += on->grad[((b * heads + h) * length + t) * hd + j];
    });
  }
  return result;
}

/// [batch, heads, length, head_dim] -> [batch, length, heads * head_dim]
inline Tensor merge_heads(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("merge_heads expects rank 4, got " + shape_string(x.shape()));
  const std::size_t batch = x.dim(0), heads = x.dim(1), length = x.dim(2), hd = x.dim(3), width = heads * hd;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < length; ++t)
        for (std::size_t j = 0; j < hd; ++j)
          out[(b * length + t) * width + h * hd + j] = xd[((b * heads + h) * length + t) * hd + j];
  Tensor result = detail::make_result({batch, length, width}, std::move(out), "merge_heads", {&x});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), on = result.node(), batch, length, width, heads, hd] {
      auto& g = xn->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t t = 0; t < length; ++t)
            for (std::size_t j = 0; j < hd; ++j)
              g[((b * heads + h) * length + t) * hd + j] += on->grad[(b * length + t) * width + h * hd + j];
    });
  }
  return result;
}

/// Mean over non-padded positions: [batch, length, d] -> [batch, d].
inline Tensor masked_mean(const Tensor& x, const PaddingMask& mask) {
  if (x.rank() != 3 || mask.batch != x.dim(0) || mask.length != x.dim(1)) {
    throw ShapeError("masked_mean: mask does not match input " + shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), length = x.dim(1), width = x.dim(2);
  std::vector<double> weight(batch * length, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t live = 0;
    for (std::size_t t = 0; t < length; ++t) live += mask.is_padded(b, t) ? 0 : 1;
    if (live == 0) throw ContractError("masked_mean: sequence " + std::to_string(b) + " is entirely padding");
    for (std::size_t t = 0; t < length; ++t) {
      weight[b * length + t] = mask.is_padded(b, t) ? 0.0 : 1.0 / static_cast<double>(live);
    }
  }
  std::vector<double> out(batch * width, 0.0);
  const auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < length; ++t) {
      const double w = weight[b * length + t];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < width; ++j) out[b * width + j] += w * xd[(b * length + t) * width + j];
    }
  Tensor result = detail::make_result({batch, width}, std::move(out), "masked_mean", {&x});
  if (result.requires_grad()) {
    active_tape()->record(result.node(), [xn = x.node(), on = result.node(), weight = std::move(weight), batch, length,
                                          width] {
      auto& g = xn->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < length; ++t)
          for (std::size_t j = 0; j < width; ++j)
            g[(b * length + t) * width + j] += weight[b * length + t] * on->grad[b * width + j];
    });
  }
  return result;
}

/// Constant additive bias of shape [batch, 1, 1, length] expanded to
/// [batch, heads, rows, length], putting kMaskedScore on padded key columns.
/// Throws if some sequence has no unpadded key.
inline Tensor key_mask_bias(const PaddingMask& mask, std::size_t heads, std::size_t rows) {
  std::vector<double> bias(mask.batch * heads * rows * mask.length, 0.0);
  for (std::size_t b = 0; b < mask.batch; ++b) {
    bool any_live = false;
    for (std::size_t t = 0; t < mask.length; ++t) any_live = any_live || !mask.is_padded(b, t);
    if (!any_live) throw ContractError("attention row " + std::to_string(b) + " has every key masked");
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < mask.length; ++t)
          if (mask.is_padded(b, t)) bias[((b * heads + h) * rows + r) * mask.length + t] = kMaskedScore;
  }
  return Tensor({mask.batch, heads, rows, mask.length}, std::move(bias));
}

}  // namespace stochattn
