#pragma once

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// A Node is a cheap handle to a graph vertex. Building an expression records
// its backward rule; calling backward() on a scalar root propagates
// d(root)/d(node) to every reachable node that requires a gradient. Leaf
// parameters accumulate gradients across backward() calls until zero_grad().
//
// Broadcasting is limited to a leading batch dimension: a [1 x n] operand may
// be combined with a [B x n] operand. Anything else is a ShapeError.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cda/tensor.hpp"

namespace cda::ad {

/// Exponent arguments above this are clamped and counted.
inline constexpr double kExpClamp = 40.0;

struct NodeData;
using BackwardFn = std::function<void(NodeData&)>;

struct NodeData {
  Tensor value;
  Tensor grad;  // empty until materialized
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<NodeData>> parents;
  BackwardFn backward;

  /// Gradient buffer, zero-filled on first access.
  Tensor& grad_buffer();
};

class Node {
 public:
  Node() = default;
  explicit Node(std::shared_ptr<NodeData> data) : data_(std::move(data)) {}

  const Tensor& value() const { return data_->value; }
  /// Direct access for optimizers and checkpoint loading; never use mid-graph.
  Tensor& mutable_value() { return data_->value; }
  bool has_grad() const { return !data_->grad.empty(); }
  /// Gradient of the last backward(); zeros if the node was unreachable.
  Tensor grad() const;
  void zero_grad() { data_->grad = Tensor(); }

  bool requires_grad() const { return data_->requires_grad; }
  bool is_leaf() const { return data_->leaf; }
  const char* op() const { return data_->op; }
  std::size_t rows() const { return data_->value.rows(); }
  std::size_t cols() const { return data_->value.cols(); }
  double item() const { return data_->value.item(); }

  const std::shared_ptr<NodeData>& data() const { return data_; }
  explicit operator bool() const { return static_cast<bool>(data_); }
  bool same_node(const Node& o) const { return data_ == o.data_; }

 private:
  std::shared_ptr<NodeData> data_;
};

Node constant(Tensor value);
Node parameter(Tensor value);
/// Same value, cut from the graph.
Node detach(const Node& x);

// Linear algebra and elementwise arithmetic.
Node matmul(const Node& a, const Node& b);
Node add(const Node& a, const Node& b);
Node sub(const Node& a, const Node& b);
Node mul(const Node& a, const Node& b);
Node scale(const Node& a, double s);
Node add_scalar(const Node& a, double s);
Node neg(const Node& a);
Node add_n(std::span<const Node> terms);

// Pointwise nonlinearities.
Node tanh(const Node& a);
Node sigmoid(const Node& a);
Node exp(const Node& a);
Node log(const Node& a);
Node square(const Node& a);
Node sqrt(const Node& a);
/// log(1 + e^x), computed stably.
Node softplus(const Node& a);

// Reductions. axis 0 collapses rows ([R x C] -> [1 x C]), axis 1 collapses
// columns ([R x C] -> [R x 1]).
Node sum_axis(const Node& a, int axis);
Node mean_axis(const Node& a, int axis);
Node sum_all(const Node& a);
Node mean_all(const Node& a);
Node l2_norm_sq(const Node& a);

// Structure.
Node concat_cols(std::span<const Node> parts);
Node concat_rows(std::span<const Node> parts);
Node slice_cols(const Node& a, std::size_t begin, std::size_t end);
/// Multiplies row i of a [B x d] by s(i, 0) for s of shape [B x 1].
Node scale_rows(const Node& a, const Node& s);
/// Row-wise inner product of two [B x d] operands -> [B x 1].
Node row_dot(const Node& a, const Node& b);
/// exp-normalize along an axis with max subtraction.
Node softmax(const Node& a, int axis);
/// Identity forward; multiplies the incoming gradient by -factor.
Node grad_reverse(const Node& a, double factor = 1.0);

/// Constant [B x k] one-hot rows.
Tensor one_hot(std::span<const int> labels, std::size_t k);

/// Propagates gradients from a [1 x 1] root. Intermediate gradients are reset
/// on every call; leaf gradients accumulate.
void backward(const Node& root);

/// Number of exp() arguments clamped at kExpClamp on this thread.
std::size_t exp_clamp_count();
void reset_exp_clamp_count();

}  // namespace cda::ad
