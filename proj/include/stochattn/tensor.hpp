#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stochattn/errors.hpp"

namespace stochattn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Storage behind a Tensor handle. `grad` stays empty until a backward pass
// writes into it.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

/// Dense row-major float64 tensor with optional gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage, the way
/// framework variables do. Use clone() for an independent copy. Tensors
/// that do not require gradients are never mutated by any operation and can
/// be shared freely between threads.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<TensorNode>()) {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor filled(Shape shape, double value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Independent deep copy (data, requires_grad; the gradient is not copied).
  Tensor clone() const { return Tensor(shape(), node_->data, requires_grad()); }

  /// Deep copy with gradient tracking off.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  const std::shared_ptr<TensorNode>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Entries are appended as operations execute, so the order is topological.
/// backward() walks them once in reverse. A tape can be consumed only once;
/// calling backward() a second time is an error rather than a silent
/// doubling of accumulated gradients.
class Tape {
 public:
  struct Entry {
    std::shared_ptr<TensorNode> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<TensorNode> output, std::function<void()> backward) {
    if (consumed_) throw ContractError("recording onto a tape that has already run backward");
    entries_.push_back({std::move(output), std::move(backward)});
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void backward(const Tensor& loss) {
    if (consumed_) throw ContractError("backward called twice on the same tape");
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) throw ContractError("loss is not connected to any tracked tensor");
    consumed_ = true;
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output->grad.empty()) it->backward();
    }
  }

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

namespace detail {
inline thread_local Tape* current_tape = nullptr;
}

inline Tape* active_tape() noexcept { return detail::current_tape; }

/// Makes `tape` the recording target for operations on this thread for the
/// lifetime of the scope. Without an active tape operations still run but
/// record nothing.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::current_tape) { detail::current_tape = &tape; }
  ~TapeScope() { detail::current_tape = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace stochattn
