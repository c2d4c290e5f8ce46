#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "evl/tensor.hpp"

namespace evl {

/// Trainable tensor with an accumulating gradient buffer of the same shape.
struct Parameter {
  Parameter() = default;
  Parameter(std::uint32_t id, Tensor initial) : value(std::move(initial)), grad(value.shape()), id(id) {}

  Tensor value;
  Tensor grad;
  std::uint32_t id = 0;

  void zero_grad() { grad.fill(0.0); }
};

class NonScalarLoss : public std::invalid_argument {
 public:
  explicit NonScalarLoss(const Shape& shape);
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient after Tape::backward; zeros if the node was unreachable.
  Tensor grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Records operations in creation order, which is a topological order of the
/// computation graph. backward() walks it once in reverse. Parameters must
/// outlive the tape.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Parameter& p);

  /// Appends a node; `backward` reads grad(self) and accumulates into the
  /// gradients of its inputs.
  Var record(Tensor value, BackwardFn backward);

  const Tensor& value(std::size_t i) const { return nodes_[i].value; }
  /// Gradient buffer of node i, allocated (zero) on first access.
  Tensor& grad(std::size_t i);
  bool has_grad(std::size_t i) const { return nodes_[i].has_grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node,
  /// adding leaf gradients into their Parameter::grad.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;  // deque keeps value references stable while recording
};

// ---------------------------------------------------------------------------
// Primitives. All operands must live on the same tape.
// ---------------------------------------------------------------------------

/// Elementwise sum; `b` may also be a vector added to every row of a matrix.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double v);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
/// Concatenation along axis 0.
Var concat(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var select_columns(Var a, std::span<const std::size_t> columns);
/// Divides each row of a matrix by its L2 norm.
Var normalize_rows(Var a);

/// Mean cross-entropy of softmax(logits) against integer labels.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);
/// Mean cross-entropy of softmax(logits) against target distributions.
Var soft_cross_entropy(Var logits, const Tensor& targets);
/// Mean squared error over all elements.
Var mse(Var a, Var b);

/// input {N, Cin, H, W}, weight {Cout, Cin, k, k}, bias {Cout}; square
/// kernel, zero padding `pad` on every side.
Var conv2d_dense(Var input, Var weight, Var bias, std::size_t stride, std::size_t pad);
/// input {N, C, H, W}; windows that extend past the edge are dropped.
Var max_pool2d(Var input, std::size_t window, std::size_t stride);

// Non-recording helpers on plain tensors.
Tensor softmax_rows(const Tensor& logits);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace evl
