#pragma once

// Central finite-difference checks of tape gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stochattn/errors.hpp"
#include "stochattn/model.hpp"
#include "stochattn/tensor.hpp"

namespace stochattn {

struct GradientComparison {
  std::string name;
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

struct GradientCheckResult {
  std::vector<GradientComparison> parameters;

  double max_relative_error() const {
    double m = 0.0;
    for (const auto& p : parameters) m = std::max(m, p.relative_error);
    return m;
  }
};

/// Compares the tape gradient of `loss` with central differences of step `h`
/// for every element of every listed leaf. `loss` must be a deterministic
/// function of the leaves; stochastic code should replay frozen noise.
inline GradientCheckResult check_gradients(std::span<const NamedParameter> leaves, const std::function<Tensor()>& loss,
                                           double h = 1e-5) {
  for (const auto& p : leaves) {
    if (!p.tensor.requires_grad()) throw ContractError("gradient check leaf '" + p.name + "' does not track gradients");
    Tensor(p.tensor).zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss());
  }
  GradientCheckResult result;
  for (const auto& p : leaves) {
    Tensor t = p.tensor;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<double> numeric(t.numel());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    GradientComparison c{p.name, 0.0, std::sqrt(na), std::sqrt(nn)};
    const double scale = std::max(c.analytic_norm, c.numeric_norm);
    c.relative_error = scale < 1e-12 ? 0.0 : std::sqrt(diff) / scale;
    result.parameters.push_back(c);
  }
  return result;
}

}  // namespace stochattn
