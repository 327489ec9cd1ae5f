#pragma once

// Property battery run by `stochattn verify`.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "stochattn/attention.hpp"
#include "stochattn/gradcheck.hpp"
#include "stochattn/model.hpp"
#include "stochattn/ops.hpp"
#include "stochattn/rng.hpp"
#include "stochattn/sampling.hpp"

namespace stochattn {

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t bound_trials = 1000;
  std::size_t sweep_forwards = 10000;  // per attention mode
  std::size_t gumbel_max_samples = 100000;
  std::size_t gumbel_mean_samples = 1000000;
  std::size_t entropy_draws = 1000;
};

struct PropertyResult {
  std::string name;
  std::string statistic;
  bool passed = false;
  double seconds = 0.0;
};

namespace detail {

inline std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

inline Tensor random_tensor(Shape shape, double stddev, RngStream& rng, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& e : v) e = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline AttentionParams random_attention(std::size_t d, std::size_t heads, double stddev, RngStream& rng) {
  AttentionParams p;
  p.w_q = random_tensor({d, d}, stddev, rng, true);
  p.w_k = random_tensor({d, d}, stddev, rng, true);
  p.w_v = random_tensor({d, d}, stddev, rng, true);
  p.heads = heads;
  p.alpha = AttentionParams::default_alpha(d, heads);
  return p;
}

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace detail

/// Fraction of Gumbel-max draws on scores [ln 2, 0] that pick index 0; 2/3 in law.
inline PropertyResult verify_gumbel_max_law(const VerifyOptions& o) {
  RngStream rng = RngStream::for_component(o.seed, "gumbel_max_law");
  const double scores[2] = {std::log(2.0), 0.0};
  std::size_t hits = 0;
  for (std::size_t i = 0; i < o.gumbel_max_samples; ++i) hits += sample_categorical(scores, rng) == 0 ? 1 : 0;
  const double freq = static_cast<double>(hits) / static_cast<double>(o.gumbel_max_samples);
  return {"gumbel_max_law", detail::fmt("freq(index 0)=%.4f, expected 0.6667 +- 0.01", freq),
          std::abs(freq - 2.0 / 3.0) <= 0.01};
}

/// Total-variation distance between Gumbel-max frequencies and softmax(scores).
inline PropertyResult verify_gumbel_max_consistency(const VerifyOptions& o) {
  RngStream rng = RngStream::for_component(o.seed, "gumbel_max_consistency");
  std::vector<double> scores(5);
  for (double& s : scores) s = rng.normal();
  const Tensor p = softmax(Tensor({scores.size()}, scores), 0, 1.0);
  std::vector<double> freq(scores.size(), 0.0);
  for (std::size_t i = 0; i < o.gumbel_max_samples; ++i) freq[sample_categorical(scores, rng)] += 1.0;
  double tv = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j)
    tv += std::abs(freq[j] / static_cast<double>(o.gumbel_max_samples) - p[j]);
  tv *= 0.5;
  return {"gumbel_max_consistency", detail::fmt("total variation=%.4f, limit 0.02", tv), tv <= 0.02};
}

inline PropertyResult verify_gumbel_mean(const VerifyOptions& o) {
  RngStream rng = RngStream::for_component(o.seed, "gumbel_mean");
  const Tensor g = gumbel_noise({o.gumbel_mean_samples}, rng);
  double mean = 0.0;
  for (double v : g.data()) mean += v;
  mean /= static_cast<double>(g.numel());
  return {"gumbel_mean", detail::fmt("mean=%.4f, expected 0.5772 +- 0.01", mean),
          std::abs(mean - std::numbers::egamma) <= 0.01};
}

/// Mean entropy of gumbel_softmax over fixed scores must not decrease with tau.
/// The same noise draws are reused for every temperature.
inline PropertyResult verify_temperature_monotonicity(const VerifyOptions& o) {
  RngStream rng = RngStream::for_component(o.seed, "temperature_monotonicity");
  const std::size_t n = 16;
  const Tensor scores = detail::random_tensor({n}, 2.0, rng);
  const double taus[4] = {0.1, 1.0, 10.0, 100.0};
  NoiseSource recorder = NoiseSource::recording(rng.split(1));
  std::vector<Tensor> noise;
  for (std::size_t k = 0; k < o.entropy_draws; ++k) noise.push_back(recorder.draw(Shape{n}));
  double mean[4] = {0, 0, 0, 0};
  for (int t = 0; t < 4; ++t) {
    for (const auto& g : noise) mean[t] += detail::entropy(softmax(add(scores, g), 0, taus[t]).data());
    mean[t] /= static_cast<double>(o.entropy_draws);
  }
  const bool ok = mean[0] <= mean[1] && mean[1] <= mean[2] && mean[2] <= mean[3];
  char buf[200];
  std::snprintf(buf, sizeof buf, "mean entropy tau{0.1,1,10,100}=%.4f,%.4f,%.4f,%.4f (max ln16=%.4f)", mean[0],
                mean[1], mean[2], mean[3], std::log(16.0));
  return {"temperature_monotonicity", buf, ok};
}

/// Randomized trials of the shared-noise centroid attention bound.
inline PropertyResult verify_centroid_bound(const VerifyOptions& o) {
  RngStream rng = RngStream::for_component(o.seed, "centroid_bound");
  const std::size_t dh = 16, c = 16;
  const double taus[3] = {0.5, 1.0, 2.0};
  std::size_t held = 0;
  double worst_ratio = 0.0;
  for (std::size_t t = 0; t < o.bound_trials; ++t) {
    const double c_scale = std::pow(10.0, rng.uniform() * 2.0 - 1.0);
    const CentroidSet centroids{detail::random_tensor({dh, c}, c_scale / std::sqrt(static_cast<double>(dh)), rng)};
    std::vector<double> ki(dh), kj(dh), noise(c);
    const double k_scale = std::pow(10.0, rng.uniform() * 2.0 - 1.0);
    const double gap = std::pow(10.0, rng.uniform() * 4.0 - 3.0);
    for (std::size_t i = 0; i < dh; ++i) {
      ki[i] = k_scale * rng.normal();
      kj[i] = t % 2 == 0 ? ki[i] + gap * rng.normal() : k_scale * rng.normal();
    }
    for (double& g : noise) g = gumbel_from_uniform(rng.uniform());
    const auto r = check_centroid_attention_bound(ki, kj, centroids, taus[t % 3], noise);
    held += r.holds ? 1 : 0;
    if (r.rhs > 0.0) worst_ratio = std::max(worst_ratio, r.lhs / r.rhs);
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu/%zu trials hold, max lhs/rhs=%.4f", held, o.bound_trials, worst_ratio);
  return {"centroid_attention_bound", buf, held == o.bound_trials};
}

/// Finite-difference gradient check of one attention mode on a d=8, h=2,
/// l=4, c=4 instance with noise frozen by replay.
inline PropertyResult verify_attention_gradients(const VerifyOptions& o, AttentionMode mode) {
  RngStream rng = RngStream::for_component(o.seed, "gradients_" + to_string(mode));
  const std::size_t d = 8, heads = 2, l = 4, c = 4;
  const Tensor x = detail::random_tensor({l, d}, 1.0, rng);
  const AttentionParams params = detail::random_attention(d, heads, 0.5, rng);
  const CentroidSet centroids{detail::random_tensor({d / heads, c}, 0.7, rng, true)};
  const Tensor weights = detail::random_tensor({l, d}, 1.0, rng);
  StochasticConfig config{mode, 1.0, 1.0, 1.0};

  NoiseSource recorder = NoiseSource::recording(rng.split(1));
  self_attention(x, params, config, &centroids, recorder);
  const auto loss = [&]() {
    NoiseSource frozen = recorder.replay();
    return sum(mul(self_attention(x, params, config, &centroids, frozen), weights));
  };
  std::vector<NamedParameter> leaves{{"w_q", params.w_q}, {"w_k", params.w_k}, {"w_v", params.w_v}};
  if (mode == AttentionMode::hierarchical) leaves.push_back({"centroids", centroids.centroids});
  const auto result = check_gradients(leaves, loss, 1e-5);
  const double err = result.max_relative_error();
  return {"gradients_" + to_string(mode), detail::fmt("max relative error=%.3e over all weights, limit 1e-4", err),
          err < 1e-4};
}

/// Random small-model forwards in one mode: every attention row and every
/// class-probability row must sum to 1 and padded keys must get no weight.
inline PropertyResult verify_normalization(const VerifyOptions& o, AttentionMode mode) {
  RngStream rng = RngStream::for_component(o.seed, "normalization_" + to_string(mode));
  double worst = 0.0, worst_masked = 0.0;
  std::size_t rows = 0;
  std::optional<TransformerClassifier> model;
  for (std::size_t f = 0; f < o.sweep_forwards; ++f) {
    if (f % 500 == 0) {
      ModelConfig cfg;
      cfg.num_layers = 1 + rng.below(2);
      cfg.num_heads = 2;
      cfg.emb_dim = 8;
      cfg.ffn_hidden_dim = 8;
      cfg.vocab_size = 20;
      cfg.max_seq_len = 8;
      cfg.centroid_count = 4;
      cfg.attention.mode = mode;
      cfg.attention.tau = std::pow(10.0, rng.uniform() * 5.0 - 2.0);
      cfg.attention.tau1 = std::pow(10.0, rng.uniform() * 5.0 - 2.0);
      cfg.attention.tau2 = std::pow(10.0, rng.uniform() * 5.0 - 2.0);
      RngStream init = rng.split(f);
      model = TransformerClassifier::init(cfg, init);
      // Spread the weights so attention is far from uniform.
      for (auto& p : model->parameters()) {
        Tensor t = p.tensor;
        for (double& v : t.mutable_data()) v += 0.5 * rng.normal();
      }
    }
    Batch batch;
    batch.size = 1 + rng.below(3);
    batch.length = 1 + rng.below(8);
    batch.mask = PaddingMask{batch.size, batch.length, std::vector<std::uint8_t>(batch.size * batch.length, 0)};
    for (std::size_t s = 0; s < batch.size; ++s) {
      const std::size_t len = 1 + rng.below(batch.length);
      for (std::size_t t = 0; t < batch.length; ++t) {
        batch.tokens.push_back(t < len ? 2 + rng.below(18) : 0);
        batch.mask.padded[s * batch.length + t] = t < len ? 0 : 1;
      }
      batch.labels.push_back(0);
    }
    AttentionTrace trace;
    const Tensor probs = class_probabilities(model->forward(batch, ForwardOptions{.trace = &trace}, rng));
    const auto check_rows = [&](const Tensor& t, bool key_masked) {
      const std::size_t width = t.dim(t.rank() - 1);
      const auto data = t.data();
      for (std::size_t r = 0; r < t.numel() / width; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          const double v = data[r * width + j];
          if (v < 0.0) worst = std::max(worst, 1.0);
          s += v;
          if (key_masked && batch.mask.is_padded(r / (t.dim(1) * t.dim(2)), j)) worst_masked = std::max(worst_masked, v);
        }
        worst = std::max(worst, std::abs(s - 1.0));
        ++rows;
      }
    };
    for (const auto& a : trace.value_attention) check_rows(a, true);
    for (const auto& a : trace.centroid_attention) check_rows(a, false);
    check_rows(probs, false);
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu forwards, %zu rows, max |row sum - 1|=%.2e, max masked weight=%.2e",
                o.sweep_forwards, rows, worst, worst_masked);
  return {"normalization_" + to_string(mode), buf, worst <= 1e-9 && worst_masked < 1e-12};
}

/// Stochastic attention with zero noise and tau = alpha against deterministic attention.
inline PropertyResult verify_mode_collapse(const VerifyOptions& o) {
  RngStream rng = RngStream::for_component(o.seed, "mode_collapse");
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2, l = 6, d = 16, heads = 4;
    const Tensor x = detail::random_tensor({b, l, d}, 1.0, rng);
    const AttentionParams params = detail::random_attention(d, heads, 0.3, rng);
    PaddingMask mask{b, l, std::vector<std::uint8_t>(b * l, 0)};
    mask.padded[l - 1] = 1;
    mask.padded[l - 2] = 1;
    NoiseSource zero = NoiseSource::zero();
    const Tensor a = deterministic_mhsa(x, params, &mask);
    const Tensor s = stochastic_mhsa(x, params, params.alpha, zero, &mask);
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - s[i]));
  }
  return {"mode_collapse", detail::fmt("max |stochastic - deterministic|=%.2e, limit 1e-12", worst), worst <= 1e-12};
}

/// Runs the full battery in a fixed order, timing each property.
inline std::vector<PropertyResult> run_verification(const VerifyOptions& o) {
  std::vector<std::function<PropertyResult()>> battery{
      [&] { return verify_gumbel_max_law(o); },
      [&] { return verify_gumbel_max_consistency(o); },
      [&] { return verify_gumbel_mean(o); },
      [&] { return verify_temperature_monotonicity(o); },
      [&] { return verify_centroid_bound(o); },
      [&] { return verify_attention_gradients(o, AttentionMode::deterministic); },
      [&] { return verify_attention_gradients(o, AttentionMode::stochastic); },
      [&] { return verify_attention_gradients(o, AttentionMode::hierarchical); },
      [&] { return verify_normalization(o, AttentionMode::deterministic); },
      [&] { return verify_normalization(o, AttentionMode::stochastic); },
      [&] { return verify_normalization(o, AttentionMode::hierarchical); },
      [&] { return verify_mode_collapse(o); },
  };
  std::vector<PropertyResult> out;
  for (const auto& run : battery) {
    const auto start = std::chrono::steady_clock::now();
    PropertyResult r = run();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace stochattn
