#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "provae/tensor.hpp"

namespace provae {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning Tape is alive.
class Var {
public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  /// Invalidated when more nodes are recorded on the tape.
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient of the last backward root w.r.t. this node (zeros if unreachable).
  Tensor grad() const;
  bool requires_grad() const;

private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Record of operations for reverse-mode differentiation. Nodes are appended in
/// evaluation order, so every input precedes its output; backward replays them
/// in strict reverse order. Single-threaded: use one tape per worker.
class Tape {
public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameter or input being attacked).
  Var leaf(Tensor value);
  /// Non-differentiable input.
  Var constant(Tensor value);

  /// Appends an op node. The backward closure is dropped when no input
  /// requires a gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, Backward backward);

  /// Populates gradients of the scalar `root` w.r.t. every node. Gradients
  /// from earlier calls are discarded, so repeated calls are idempotent.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Gradient buffer for node `id`; empty if the node does not require grad.
  std::vector<double>& grad_buffer(std::size_t id) { return nodes_[id].grad; }
  const std::vector<double>& grad_buffer(std::size_t id) const { return nodes_[id].grad; }

private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
};

enum class UnaryKind { relu, sigmoid, exp, log, square, negate, abs, min_zero };

const char* to_string(UnaryKind kind);

// Linear operators. `v` is [n] or a batch [B, n]; W is [m, n]; b is [m].
Var affine(Var W, std::optional<Var> b, Var v);
inline Var affine(Var W, Var b, Var v) { return affine(W, std::optional<Var>(b), v); }
inline Var matvec(Var W, Var v) { return affine(W, std::nullopt, v); }

// Cross-correlation. kernels [O, C, kh, kw], bias [O], x [C, H, W] or [B, C, H, W].
Var conv2d(Var kernels, std::optional<Var> bias, Var x, std::size_t stride, std::size_t padding);

/// Nearest-neighbour 2x spatial upsampling of [B, C, H, W].
Var upsample2x(Var x);
Var reshape(Var v, Shape shape);

Var unary(UnaryKind kind, Var v);
inline Var relu(Var v) { return unary(UnaryKind::relu, v); }
inline Var sigmoid(Var v) { return unary(UnaryKind::sigmoid, v); }
inline Var exp(Var v) { return unary(UnaryKind::exp, v); }
inline Var log(Var v) { return unary(UnaryKind::log, v); }
inline Var square(Var v) { return unary(UnaryKind::square, v); }
inline Var negate(Var v) { return unary(UnaryKind::negate, v); }
inline Var abs(Var v) { return unary(UnaryKind::abs, v); }
/// min(v, 0) elementwise.
inline Var min_zero(Var v) { return unary(UnaryKind::min_zero, v); }

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var v, double c);
Var add_scalar(Var v, double c);
/// Elementwise max/min; at ties the gradient flows to `a`.
Var maximum(Var a, Var b);
Var minimum(Var a, Var b);

/// Sum of all elements, shape {1}.
Var sum(Var v);
/// Per-row sum over all trailing dims: [B, ...] -> [B].
Var sum_rows(Var v);
Var mean(Var v);
Var reduce_sum_squares(Var v);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var v) { return scale(v, c); }
inline Var operator-(Var v) { return negate(v); }

/// Output spatial extent of a convolution.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

}  // namespace provae
