#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "augmorph/diffcore/tensor.hpp"

namespace augmorph::diffcore {

using NodeId = std::size_t;
using LabelTensor = BasicTensor<std::int32_t>;

enum class OpKind : std::uint8_t {
  leaf,
  conv,
  maxpool2,
  upsample2,
  leaky_relu,
  concat,
  add,
  mul,
  scale,
  sum,
  mse,
  ncc,
  gradmag,
  warp_linear,
  cross_entropy,
};

std::string_view op_name(OpKind kind);

enum class ResampleMode { maxpool2, upsample2_nearest };

/// Gradients produced by one backward pass, indexed by node id. Nodes the
/// loss does not depend on report zeros.
template <typename T>
class BasicGradients {
 public:
  BasicGradients() = default;
  explicit BasicGradients(std::vector<BasicTensor<T>> per_node, std::vector<Shape> shapes)
      : grads_(std::move(per_node)), shapes_(std::move(shapes)) {}

  [[nodiscard]] BasicTensor<T> wrt(NodeId id) const {
    const auto& g = grads_.at(id);
    if (g.data.empty()) return BasicTensor<T>(shapes_.at(id));
    return g;
  }
  [[nodiscard]] bool reached(NodeId id) const { return !grads_.at(id).data.empty(); }

 private:
  std::vector<BasicTensor<T>> grads_;
  std::vector<Shape> shapes_;
};

/// Tape of operator applications. Nodes are appended in evaluation order;
/// backward walks them in exact reverse insertion order. Every image-like
/// operand is laid out as [channels, spatial...].
template <typename T>
class BasicGraph {
 public:
  using TensorT = BasicTensor<T>;

  /// Leaf node; gradients flow to it iff `value.requires_grad`.
  NodeId leaf(TensorT value);
  NodeId constant(TensorT value) {
    value.requires_grad = false;
    return leaf(std::move(value));
  }
  NodeId parameter(TensorT value) {
    value.requires_grad = true;
    return leaf(std::move(value));
  }

  /// Same-size cross-correlation, stride 1, zero padding, odd kernel.
  /// input [C_in, S...], kernel [C_out, C_in, k...], bias [C_out].
  NodeId conv(NodeId input, NodeId kernel, NodeId bias);
  NodeId resample(NodeId input, ResampleMode mode);
  NodeId maxpool2(NodeId input) { return resample(input, ResampleMode::maxpool2); }
  NodeId upsample2(NodeId input) { return resample(input, ResampleMode::upsample2_nearest); }
  NodeId leaky_relu(NodeId input, double slope);
  /// Channel concatenation of two [C, S...] tensors on the same grid.
  NodeId concat(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId sum(NodeId a);

  NodeId mse(NodeId a, NodeId b);
  NodeId ncc(NodeId a, NodeId b, int window);
  /// Optional `weight` is a constant one-value-per-voxel gate.
  NodeId gradmag(NodeId field, std::optional<NodeId> weight = std::nullopt);
  /// image [C, S...] sampled at p + field(p); field [D, S...].
  NodeId warp_linear(NodeId image, NodeId field);
  NodeId cross_entropy(NodeId logits, const LabelTensor& labels);

  [[nodiscard]] const TensorT& value(NodeId id) const { return nodes_.at(id).value; }
  [[nodiscard]] OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  [[nodiscard]] const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  [[nodiscard]] BasicGradients<T> backward(NodeId loss) const;

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<NodeId> inputs;
    TensorT value;
    bool needs_grad = false;
    double scalar = 0;  // slope / scale factor
    int window = 0;
    std::vector<std::int64_t> argmax;
    std::vector<std::int32_t> labels;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const { return nodes_.at(id); }
  bool any_needs_grad(std::initializer_list<NodeId> ids) const;

  std::vector<Node> nodes_;
};

using Graph = BasicGraph<float>;
using Gradients = BasicGradients<float>;

extern template class BasicGraph<float>;
extern template class BasicGraph<double>;

template <typename T>
BasicGradients<T> backprop(const BasicGraph<T>& graph, NodeId loss) {
  return graph.backward(loss);
}

}  // namespace augmorph::diffcore
