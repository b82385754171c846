#pragma once

#include <cstdint>
#include <vector>

#include "augmorph/diffcore/adam.hpp"
#include "augmorph/diffcore/graph.hpp"

namespace augmorph::xformmodels {

using diffcore::Graph;
using diffcore::NodeId;
using diffcore::Tensor;

/// Encoder-decoder with skip connections. Each level runs two
/// convolution + LeakyReLU pairs; the encoder max-pools between levels and
/// the decoder upsamples and concatenates the matching skip. A final
/// convolution without activation maps to `out_channels`.
struct NetArch {
  int spatial_rank = 2;
  int in_channels = 2;
  int out_channels = 2;
  std::vector<int> widths{16, 32, 32};
  int kernel_size = 3;
  double slope = 0.2;

  [[nodiscard]] std::size_t layer_count() const { return 4 * widths.size() - 1; }
  /// Spatial extents must be divisible by this.
  [[nodiscard]] std::int64_t size_multiple() const { return std::int64_t{1} << (widths.size() - 1); }

  friend bool operator==(const NetArch&, const NetArch&) = default;
};

struct ConvLayer {
  Tensor kernel;  // [C_out, C_in, k...]
  Tensor bias;    // [C_out]
};

struct NetParams {
  NetArch arch;
  std::vector<ConvLayer> layers;

  [[nodiscard]] bool empty() const { return layers.empty(); }
  [[nodiscard]] std::size_t parameter_count() const;
  friend bool operator==(const NetParams& a, const NetParams& b);
};

/// He-normal hidden layers (LeakyReLU gain), zero biases, and an all-zero
/// final layer so an untrained network outputs exactly zero.
NetParams init_net(const NetArch& arch, std::uint64_t seed);

struct NetGraph {
  NodeId output = 0;
  std::vector<NodeId> kernels;
  std::vector<NodeId> biases;
};

/// Appends the network to `g`. Parameter leaves require grad iff `trainable`.
NetGraph build_net(Graph& g, const NetParams& net, NodeId input, bool trainable);

/// Inference on a [C_in, spatial...] tensor.
Tensor run_net(const NetParams& net, const Tensor& input);

/// Per-layer gradients, shaped like NetParams::layers.
struct NetGrads {
  std::vector<ConvLayer> layers;

  static NetGrads zeros_like(const NetParams& net);
  void collect(const diffcore::Gradients& grads, const NetGraph& ng);
  void add(const NetGrads& other);
  void scale(double factor);
};

class NetOptimizer {
 public:
  NetOptimizer() = default;
  NetOptimizer(const NetParams& net, diffcore::AdamConfig config);

  void step(NetParams& net, const NetGrads& grads);
  [[nodiscard]] std::int64_t steps() const { return states_.empty() ? 0 : states_.front().step_count; }

 private:
  std::vector<diffcore::AdamState> states_;  // kernel, bias per layer
};

}  // namespace augmorph::xformmodels
