#include "augmorph/xformmodels/net.hpp"

#include <cmath>
#include <random>
#include <string>

namespace augmorph::xformmodels {

using diffcore::Shape;

namespace {

Tensor make_kernel(const NetArch& arch, int c_out, int c_in) {
  Shape s{c_out, c_in};
  for (int d = 0; d < arch.spatial_rank; ++d) s.push_back(arch.kernel_size);
  return Tensor(std::move(s));
}

// Layer (in, out) channel plan in construction order.
std::vector<std::pair<int, int>> channel_plan(const NetArch& arch) {
  std::vector<std::pair<int, int>> plan;
  const auto& w = arch.widths;
  int prev = arch.in_channels;
  for (int width : w) {
    plan.emplace_back(prev, width);
    plan.emplace_back(width, width);
    prev = width;
  }
  for (std::size_t i = w.size() - 1; i-- > 0;) {
    plan.emplace_back(prev + w[i], w[i]);
    plan.emplace_back(w[i], w[i]);
    prev = w[i];
  }
  plan.emplace_back(prev, arch.out_channels);
  return plan;
}

}  // namespace

std::size_t NetParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.kernel.size() + l.bias.size();
  return n;
}

bool operator==(const NetParams& a, const NetParams& b) {
  if (!(a.arch == b.arch) || a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (!(a.layers[i].kernel == b.layers[i].kernel) || !(a.layers[i].bias == b.layers[i].bias)) return false;
  }
  return true;
}

NetParams init_net(const NetArch& arch, std::uint64_t seed) {
  if (arch.widths.empty()) throw std::invalid_argument("init_net: at least one level is required");
  if (arch.kernel_size % 2 == 0) throw std::invalid_argument("init_net: kernel size must be odd");
  NetParams net;
  net.arch = arch;
  std::mt19937_64 rng(seed);
  const auto plan = channel_plan(arch);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto [c_in, c_out] = plan[i];
    ConvLayer layer{make_kernel(arch, c_out, c_in), Tensor(Shape{c_out})};
    if (i + 1 < plan.size()) {
      const double fan_in = static_cast<double>(layer.kernel.size()) / c_out;
      const double stddev = std::sqrt(2.0 / ((1.0 + arch.slope * arch.slope) * fan_in));
      std::normal_distribution<double> normal(0.0, stddev);
      for (auto& v : layer.kernel.data) v = static_cast<float>(normal(rng));
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

NetGraph build_net(Graph& g, const NetParams& net, NodeId input, bool trainable) {
  if (net.empty()) throw std::invalid_argument("build_net: network has no parameters");
  const auto& arch = net.arch;
  const auto& in_shape = g.value(input).shape;
  if (in_shape.size() != static_cast<std::size_t>(arch.spatial_rank + 1) || in_shape[0] != arch.in_channels) {
    throw diffcore::ShapeError("network expects [" + std::to_string(arch.in_channels) + ", spatial x" +
                               std::to_string(arch.spatial_rank) + "] input, got " + diffcore::to_string(in_shape));
  }
  for (std::size_t d = 1; d < in_shape.size(); ++d) {
    if (in_shape[d] % arch.size_multiple() != 0) {
      throw diffcore::ShapeError("network input extents must be multiples of " +
                                 std::to_string(arch.size_multiple()) + ", got " + diffcore::to_string(in_shape));
    }
  }

  NetGraph ng;
  std::size_t layer = 0;
  auto conv = [&](NodeId x, bool activate) {
    Tensor k = net.layers[layer].kernel;
    Tensor b = net.layers[layer].bias;
    k.requires_grad = trainable;
    b.requires_grad = trainable;
    const NodeId kn = g.leaf(std::move(k));
    const NodeId bn = g.leaf(std::move(b));
    ng.kernels.push_back(kn);
    ng.biases.push_back(bn);
    ++layer;
    const NodeId y = g.conv(x, kn, bn);
    return activate ? g.leaky_relu(y, arch.slope) : y;
  };

  const std::size_t levels = arch.widths.size();
  std::vector<NodeId> skips;
  NodeId x = input;
  for (std::size_t lvl = 0; lvl < levels; ++lvl) {
    if (lvl > 0) x = g.maxpool2(x);
    x = conv(x, true);
    x = conv(x, true);
    skips.push_back(x);
  }
  for (std::size_t lvl = levels - 1; lvl-- > 0;) {
    x = g.upsample2(x);
    x = g.concat(x, skips[lvl]);
    x = conv(x, true);
    x = conv(x, true);
  }
  ng.output = conv(x, false);
  return ng;
}

Tensor run_net(const NetParams& net, const Tensor& input) {
  Graph g;
  const NodeId in = g.constant(input);
  const NetGraph ng = build_net(g, net, in, false);
  return g.value(ng.output);
}

NetGrads NetGrads::zeros_like(const NetParams& net) {
  NetGrads out;
  for (const auto& l : net.layers) out.layers.push_back({Tensor(l.kernel.shape), Tensor(l.bias.shape)});
  return out;
}

void NetGrads::collect(const diffcore::Gradients& grads, const NetGraph& ng) {
  layers.resize(ng.kernels.size());
  for (std::size_t i = 0; i < ng.kernels.size(); ++i) {
    layers[i].kernel = grads.wrt(ng.kernels[i]);
    layers[i].bias = grads.wrt(ng.biases[i]);
    layers[i].kernel.requires_grad = false;
    layers[i].bias.requires_grad = false;
  }
}

void NetGrads::add(const NetGrads& other) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& k = layers[i].kernel.data;
    auto& b = layers[i].bias.data;
    for (std::size_t j = 0; j < k.size(); ++j) k[j] += other.layers[i].kernel.data[j];
    for (std::size_t j = 0; j < b.size(); ++j) b[j] += other.layers[i].bias.data[j];
  }
}

void NetGrads::scale(double factor) {
  for (auto& l : layers) {
    for (auto& v : l.kernel.data) v = static_cast<float>(v * factor);
    for (auto& v : l.bias.data) v = static_cast<float>(v * factor);
  }
}

NetOptimizer::NetOptimizer(const NetParams& net, diffcore::AdamConfig config) {
  for (const auto& l : net.layers) {
    states_.emplace_back(l.kernel.shape, config);
    states_.emplace_back(l.bias.shape, config);
  }
}

void NetOptimizer::step(NetParams& net, const NetGrads& grads) {
  if (states_.size() != 2 * net.layers.size() || grads.layers.size() != net.layers.size()) {
    throw std::logic_error("NetOptimizer: state does not match network");
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    diffcore::adam_update(net.layers[i].kernel, grads.layers[i].kernel, states_[2 * i],
                          "layer " + std::to_string(i) + " kernel");
    diffcore::adam_update(net.layers[i].bias, grads.layers[i].bias, states_[2 * i + 1],
                          "layer " + std::to_string(i) + " bias");
  }
}

}  // namespace augmorph::xformmodels
