#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coherent_ed/errors.hpp"

namespace coherent_ed {

#ifdef COHERENT_ED_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major tensor with an optional gradient buffer.
///
/// Copies share storage (handle semantics); use clone() or detach() for a
/// deep copy. A tensor that requires grad owns a grad buffer of the same
/// shape, which backward() accumulates into.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : node_(std::make_shared<detail::TensorNode>()) {
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<Scalar> values)
      : node_(std::make_shared<detail::TensorNode>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, std::vector<Scalar>{v}); }
  static Tensor vector(std::vector<Scalar> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<Scalar> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }
  static Tensor normal(Shape shape, Scalar stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& v : t.node_->value) v = static_cast<Scalar>(dist(rng));
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const {
    if (i >= rank()) throw IndexError("dim " + std::to_string(i) + " of " + shape_str(shape()));
    return node_->shape[i];
  }
  /// Rows of a matrix (1 for vectors and scalars).
  std::size_t rows() const { return rank() >= 2 ? node_->shape[0] : 1; }
  /// Size of the last axis (1 for scalars).
  std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

  std::span<const Scalar> values() const { return node_->value; }
  std::span<Scalar> values() { return node_->value; }
  Scalar operator[](std::size_t i) const { return node_->value[i]; }
  Scalar at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  Scalar item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  std::vector<Scalar> to_vector() const { return node_->value; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on && node_->grad.size() != node_->value.size()) {
      node_->grad.assign(node_->value.size(), Scalar(0));
    }
    return *this;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  std::span<const Scalar> grad() const { return node_->grad; }
  std::span<Scalar> grad() { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0)); }

  /// Deep copy of the values; the copy is a fresh leaf without grad.
  Tensor detach() const { return Tensor(shape(), node_->value); }
  Tensor clone() const { return detach(); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  detail::TensorNode& node() const { return *node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of differentiable operations.
///
/// Ops append their backward rule as they execute, so inputs are always
/// recorded before the ops that consume them. A disabled tape records
/// nothing (inference mode).
class Tape {
 public:
  Tape() = default;
  static Tape no_grad() {
    Tape t;
    t.enabled_ = false;
    return t;
  }

  bool recording() const { return enabled_; }
  void record(std::function<void()> backward_rule) { ops_.push_back(std::move(backward_rule)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  /// Replays the recorded rules in reverse and empties the tape.
  void replay_backward() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

 private:
  bool enabled_ = true;
  std::vector<std::function<void()>> ops_;
};

/// Populates grads of every requires_grad tensor reachable from `loss`.
/// Leaf grads accumulate; call zero_grad between steps.
inline void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    tape.clear();
    return;
  }
  loss.node().grad[0] += Scalar(1);
  tape.replay_backward();
}

}  // namespace coherent_ed
