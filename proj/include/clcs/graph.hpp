#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// Nodes are appended in execution order, so the tape is topologically sorted
// by construction and backward() is a single reverse sweep. Recorded values
// are never mutated after creation. Ops are pure, so recording the same op
// on the same inputs twice returns the existing node.

#include <cstddef>
#include <initializer_list>
#include <map>
#include <span>
#include <string_view>
#include <tuple>
#include <vector>

#include "clcs/tensor.hpp"

namespace clcs::ad {

enum class OpKind {
  leaf,
  add,
  mul,
  matmul,
  conv2d,
  relu,
  leaky_relu,
  softmax_channel,
  log,
  clamp_min,
  mean,
  sum,
  upsample_nearest_2x,
  concat_channel,
  cosine_channel,
};

std::string_view op_name(OpKind kind);

struct OpAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
  double slope = 0.01;  // leaky_relu negative slope
  double floor = 0.0;   // clamp_min lower bound
};

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

template <typename T>
class Graph {
 public:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::size_t> inputs;
    OpAttrs attrs;
    Tensor<T> value;
  };

  /// Records a leaf. Differentiated iff `t.requires_grad`.
  NodeId leaf(Tensor<T> t);
  NodeId constant(Tensor<T> t) {
    t.requires_grad = false;
    return leaf(std::move(t));
  }
  NodeId parameter(Tensor<T> t) {
    t.requires_grad = true;
    return leaf(std::move(t));
  }

  NodeId forward(OpKind kind, std::span<const NodeId> inputs, const OpAttrs& attrs = {});
  NodeId forward(OpKind kind, std::initializer_list<NodeId> inputs, const OpAttrs& attrs = {}) {
    return forward(kind, std::span<const NodeId>(inputs.begin(), inputs.size()), attrs);
  }

  NodeId add(NodeId a, NodeId b) { return forward(OpKind::add, {a, b}); }
  NodeId mul(NodeId a, NodeId b) { return forward(OpKind::mul, {a, b}); }
  NodeId matmul(NodeId a, NodeId b) { return forward(OpKind::matmul, {a, b}); }
  NodeId conv2d(NodeId x, NodeId w, NodeId b, std::size_t stride, std::size_t padding) {
    return forward(OpKind::conv2d, {x, w, b}, OpAttrs{.stride = stride, .padding = padding});
  }
  NodeId conv2d(NodeId x, NodeId w, std::size_t stride, std::size_t padding) {
    return forward(OpKind::conv2d, {x, w}, OpAttrs{.stride = stride, .padding = padding});
  }
  NodeId relu(NodeId x) { return forward(OpKind::relu, {x}); }
  NodeId leaky_relu(NodeId x, double slope) {
    return forward(OpKind::leaky_relu, {x}, OpAttrs{.slope = slope});
  }
  NodeId softmax_channel(NodeId x) { return forward(OpKind::softmax_channel, {x}); }
  NodeId log(NodeId x) { return forward(OpKind::log, {x}); }
  NodeId clamp_min(NodeId x, double floor) {
    return forward(OpKind::clamp_min, {x}, OpAttrs{.floor = floor});
  }
  NodeId mean(NodeId x) { return forward(OpKind::mean, {x}); }
  NodeId sum(NodeId x) { return forward(OpKind::sum, {x}); }
  NodeId upsample_nearest_2x(NodeId x) { return forward(OpKind::upsample_nearest_2x, {x}); }
  NodeId concat_channel(NodeId a, NodeId b) { return forward(OpKind::concat_channel, {a, b}); }
  NodeId cosine_channel(NodeId a, NodeId b) { return forward(OpKind::cosine_channel, {a, b}); }
  NodeId scale(NodeId x, T factor) { return mul(x, constant(Tensor<T>::scalar(factor))); }
  NodeId add_scalar(NodeId x, T offset) { return add(x, constant(Tensor<T>::scalar(offset))); }

  const Tensor<T>& value(NodeId id) const { return node(id).value; }
  bool requires_grad(NodeId id) const { return node(id).value.requires_grad; }
  /// dLoss/dNode from the latest backward(); throws when none was computed.
  std::span<const T> grad(NodeId id) const;
  /// False when the latest backward() did not reach the node.
  bool has_grad(NodeId id) const { return has_backward_ && node(id).value.grad.has_value(); }

  /// Populates gradients of every differentiated node w.r.t. the scalar `loss`.
  void backward(NodeId loss);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const;
  void clear() {
    nodes_.clear();
    memo_.clear();
    has_backward_ = false;
  }

 private:
  Tensor<T> evaluate(OpKind kind, const std::vector<std::size_t>& inputs,
                     const OpAttrs& attrs) const;
  void propagate(const Node& n);
  std::vector<T>& grad_buffer(std::size_t index);

  using MemoKey = std::tuple<OpKind, std::vector<std::size_t>, std::size_t, std::size_t, double, double>;

  std::vector<Node> nodes_;
  std::map<MemoKey, std::size_t> memo_;
  bool has_backward_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace clcs::ad
