#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "stochattn/errors.hpp"
#include "stochattn/ops.hpp"
#include "stochattn/rng.hpp"
#include "stochattn/tensor.hpp"

namespace stochattn {

inline constexpr double kUniformClamp = 1e-12;

/// Gumbel(0,1) transform g = -log(-log(u)), with u clamped to [1e-12, 1 - 1e-12].
inline double gumbel_from_uniform(double u) {
  u = std::clamp(u, kUniformClamp, 1.0 - kUniformClamp);
  return -std::log(-std::log(u));
}

/// Tensor of i.i.d. Gumbel(0,1) draws. Never tracked by autodiff.
inline Tensor gumbel_noise(const Shape& shape, RngStream& rng) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = gumbel_from_uniform(rng.uniform());
  return Tensor(shape, std::move(values));
}

/// Where Gumbel perturbations come from.
///
/// live()      fresh draws from an owned stream.
/// zero()      all-zero noise; Gumbel-softmax collapses to a tempered softmax.
/// recording() fresh draws that are also remembered, so replay() can hand
///             back exactly the same sequence. Used to freeze noise across
///             repeated forward passes (finite differences, shared-noise checks).
class NoiseSource {
 public:
  static NoiseSource live(RngStream rng) { return NoiseSource(Kind::live, std::move(rng)); }
  static NoiseSource zero() { return NoiseSource(Kind::zero, RngStream(0)); }
  static NoiseSource recording(RngStream rng) { return NoiseSource(Kind::recording, std::move(rng)); }

  /// A source that replays everything recorded so far, from the beginning.
  NoiseSource replay() const {
    NoiseSource copy(Kind::replay, RngStream(0));
    copy.tape_ = tape_;
    return copy;
  }

  bool is_zero() const noexcept { return kind_ == Kind::zero; }

  std::vector<double> draw(std::size_t count) {
    std::vector<double> out(count, 0.0);
    switch (kind_) {
      case Kind::zero:
        break;
      case Kind::live:
      case Kind::recording:
        for (double& v : out) v = gumbel_from_uniform(rng_.uniform());
        if (kind_ == Kind::recording) tape_.insert(tape_.end(), out.begin(), out.end());
        break;
      case Kind::replay:
        if (cursor_ + count > tape_.size()) throw ContractError("noise replay exhausted");
        std::copy_n(tape_.begin() + static_cast<std::ptrdiff_t>(cursor_), count, out.begin());
        cursor_ += count;
        break;
    }
    return out;
  }

  Tensor draw(const Shape& shape) { return Tensor(shape, draw(shape_numel(shape))); }

 private:
  enum class Kind { live, zero, recording, replay };
  NoiseSource(Kind kind, RngStream rng) : kind_(kind), rng_(std::move(rng)) {}

  Kind kind_;
  RngStream rng_;
  std::vector<double> tape_;
  std::size_t cursor_ = 0;
};

/// Relaxed categorical sample softmax((scores + g) / temperature) along `axis`.
///
/// Scores are treated as unnormalized log-weights. The noise carries no
/// gradient, so the result is differentiable in `scores` alone.
inline Tensor gumbel_softmax(const Tensor& scores, double temperature, NoiseSource& noise, std::size_t axis) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("gumbel_softmax temperature must be positive and finite, got " +
                         std::to_string(temperature));
  }
  if (noise.is_zero()) return softmax(scores, axis, temperature);
  return softmax(add(scores, noise.draw(scores.shape())), axis, temperature);
}

inline Tensor gumbel_softmax(const Tensor& scores, double temperature, RngStream& rng, std::size_t axis) {
  auto noise = NoiseSource::live(rng.split(rng.next_u64()));
  return gumbel_softmax(scores, temperature, noise, axis);
}

/// Gumbel-max draw: argmax_i (scores_i + g_i). Test utility only; the
/// argmax has no gradient and is never used on the training path.
inline std::size_t sample_categorical(std::span<const double> scores, RngStream& rng) {
  if (scores.empty()) throw ContractError("sample_categorical needs at least one score");
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double v = scores[i] + gumbel_from_uniform(rng.uniform());
    if (v > best_value) {
      best_value = v;
      best = i;
    }
  }
  return best;
}

}  // namespace stochattn
