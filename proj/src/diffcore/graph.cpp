#include "augmorph/diffcore/graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <string>

#include "augmorph/diffcore/kernels.hpp"
#include "augmorph/fpenv.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace augmorph::diffcore {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::conv: return "conv";
    case OpKind::maxpool2: return "maxpool2";
    case OpKind::upsample2: return "upsample2";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::concat: return "concat";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::sum: return "sum";
    case OpKind::mse: return "mse";
    case OpKind::ncc: return "ncc";
    case OpKind::gradmag: return "gradmag";
    case OpKind::warp_linear: return "warp_linear";
    case OpKind::cross_entropy: return "cross_entropy";
  }
  return "unknown";
}

namespace {

#ifdef __GLIBC__
// Graphs allocate and free many feature maps of a few hundred KB per step.
// Keeping them on the heap instead of fresh mmaps avoids a page fault per
// touched page on every allocation.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

const bool kDenormalsFlushed = [] {
  flush_denormals();
  return true;
}();

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, std::string_view op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape) + " vs " +
                     to_string(b.shape));
  }
}

template <typename T>
BasicTensor<T> scalar_tensor(double v) {
  return BasicTensor<T>(Shape{1}, static_cast<T>(v));
}

// Exponent-bit test; written as an integer max so it vectorises.
template <typename T>
bool all_finite(const std::vector<T>& v) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exp_mask = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  Bits worst = 0;
  for (const T x : v) worst = std::max(worst, std::bit_cast<Bits>(x) & exp_mask);
  return worst != exp_mask;
}

template <typename T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

template <typename T>
NodeId BasicGraph<T>::push(Node n) {
  if (!all_finite(n.value.data)) {
    throw NumericError(std::string("non-finite value produced by ") + std::string(op_name(n.kind)) + " at node " +
                       std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

template <typename T>
bool BasicGraph<T>::any_needs_grad(std::initializer_list<NodeId> ids) const {
  for (auto id : ids) {
    if (node(id).needs_grad) return true;
  }
  return false;
}

template <typename T>
NodeId BasicGraph<T>::leaf(TensorT value) {
  Node n;
  n.kind = OpKind::leaf;
  n.needs_grad = value.requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::conv(NodeId input, NodeId kernel, NodeId bias) {
  const auto& in = value(input);
  const auto& k = value(kernel);
  const auto& b = value(bias);
  const Grid3 grid = channel_grid(in.shape);
  if (k.rank() != in.rank() + 1) {
    throw ShapeError("conv: kernel " + to_string(k.shape) + " does not match input " + to_string(in.shape));
  }
  if (k.dim(1) != in.dim(0)) {
    throw ShapeError("conv: input has " + std::to_string(in.dim(0)) + " channels but kernel " +
                     to_string(k.shape) + " expects " + std::to_string(k.dim(1)));
  }
  if (b.shape != Shape{k.dim(0)}) {
    throw ShapeError("conv: bias " + to_string(b.shape) + " does not match kernel " + to_string(k.shape));
  }
  kernels::ConvGeometry c;
  c.grid = grid;
  c.in_channels = in.dim(0);
  c.out_channels = k.dim(0);
  std::int64_t kext[3] = {1, 1, 1};
  for (int d = 0; d < grid.rank; ++d) {
    const auto e = k.dim(static_cast<std::size_t>(2 + d));
    if (e % 2 == 0) throw ShapeError("conv: kernel extents must be odd, got " + to_string(k.shape));
    kext[grid.canonical(d)] = e;
  }
  c.kz = kext[0];
  c.ky = kext[1];
  c.kx = kext[2];

  Shape out_shape = in.shape;
  out_shape[0] = c.out_channels;
  Node n;
  n.kind = OpKind::conv;
  n.inputs = {input, kernel, bias};
  n.needs_grad = any_needs_grad({input, kernel, bias});
  n.value = TensorT(out_shape);
  kernels::conv_forward(c, in.data.data(), k.data.data(), b.data.data(), n.value.data.data());
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::resample(NodeId input, ResampleMode mode) {
  const auto& in = value(input);
  const Grid3 grid = channel_grid(in.shape);
  Node n;
  n.inputs = {input};
  n.needs_grad = node(input).needs_grad;
  Shape out_shape = in.shape;
  if (mode == ResampleMode::maxpool2) {
    for (std::size_t d = 1; d < in.rank(); ++d) {
      if (in.shape[d] % 2 != 0) {
        throw ShapeError("maxpool2: spatial axis " + std::to_string(d - 1) + " has odd extent " +
                         std::to_string(in.shape[d]));
      }
      out_shape[d] /= 2;
    }
    n.kind = OpKind::maxpool2;
    n.value = TensorT(out_shape);
    n.argmax.resize(n.value.size());
    kernels::maxpool2_forward(in.dim(0), grid, in.data.data(), n.value.data.data(), n.argmax.data());
  } else {
    for (std::size_t d = 1; d < in.rank(); ++d) out_shape[d] *= 2;
    n.kind = OpKind::upsample2;
    n.value = TensorT(out_shape);
    kernels::upsample2_forward(in.dim(0), grid, in.data.data(), n.value.data.data());
  }
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::leaky_relu(NodeId input, double slope) {
  if (!(slope > 0 && slope < 1)) throw std::invalid_argument("leaky_relu: slope must lie in (0, 1)");
  Node n;
  n.kind = OpKind::leaky_relu;
  n.inputs = {input};
  n.needs_grad = node(input).needs_grad;
  n.scalar = slope;
  n.value = value(input);
  n.value.requires_grad = false;
  const T s = static_cast<T>(slope);
  for (auto& v : n.value.data) v = v >= T(0) ? v : s * v;
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::concat(NodeId a, NodeId b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (va.rank() < 2 || va.rank() != vb.rank() ||
      !std::equal(va.shape.begin() + 1, va.shape.end(), vb.shape.begin() + 1)) {
    throw ShapeError("concat: grids differ " + to_string(va.shape) + " vs " + to_string(vb.shape));
  }
  Shape out_shape = va.shape;
  out_shape[0] += vb.dim(0);
  Node n;
  n.kind = OpKind::concat;
  n.inputs = {a, b};
  n.needs_grad = any_needs_grad({a, b});
  n.value = TensorT(out_shape);
  std::copy(va.data.begin(), va.data.end(), n.value.data.begin());
  std::copy(vb.data.begin(), vb.data.end(), n.value.data.begin() + static_cast<std::ptrdiff_t>(va.size()));
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::add(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "add");
  Node n;
  n.kind = OpKind::add;
  n.inputs = {a, b};
  n.needs_grad = any_needs_grad({a, b});
  n.value = TensorT(value(a).shape);
  const auto& x = value(a).data;
  const auto& y = value(b).data;
  for (std::size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] + y[i];
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::mul(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "mul");
  Node n;
  n.kind = OpKind::mul;
  n.inputs = {a, b};
  n.needs_grad = any_needs_grad({a, b});
  n.value = TensorT(value(a).shape);
  const auto& x = value(a).data;
  const auto& y = value(b).data;
  for (std::size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] * y[i];
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::scale(NodeId a, double factor) {
  Node n;
  n.kind = OpKind::scale;
  n.inputs = {a};
  n.needs_grad = node(a).needs_grad;
  n.scalar = factor;
  n.value = value(a);
  n.value.requires_grad = false;
  for (auto& v : n.value.data) v = static_cast<T>(static_cast<double>(v) * factor);
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::sum(NodeId a) {
  kernels::Acc s = 0;
  for (auto v : value(a).data) s += v;
  Node n;
  n.kind = OpKind::sum;
  n.inputs = {a};
  n.needs_grad = node(a).needs_grad;
  n.value = scalar_tensor<T>(s);
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::mse(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "mse");
  const auto& x = value(a).data;
  const auto& y = value(b).data;
  kernels::Acc s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const kernels::Acc d = static_cast<kernels::Acc>(x[i]) - static_cast<kernels::Acc>(y[i]);
    s += d * d;
  }
  Node n;
  n.kind = OpKind::mse;
  n.inputs = {a, b};
  n.needs_grad = any_needs_grad({a, b});
  n.value = scalar_tensor<T>(s / static_cast<kernels::Acc>(x.size()));
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::ncc(NodeId a, NodeId b, int window) {
  const auto& va = value(a);
  require_same_shape(va, value(b), "ncc");
  const Grid3 grid = channel_grid(va.shape);
  if (window < 1 || window % 2 == 0) {
    throw std::invalid_argument("ncc: window must be a positive odd integer, got " + std::to_string(window));
  }
  for (int d = 0; d < grid.rank; ++d) {
    if (window > grid.extent(grid.canonical(d))) {
      throw std::invalid_argument("ncc: window " + std::to_string(window) +
                                  " exceeds spatial extent of " + to_string(va.shape));
    }
  }
  Node n;
  n.kind = OpKind::ncc;
  n.inputs = {a, b};
  n.needs_grad = any_needs_grad({a, b});
  n.window = window;
  n.value = scalar_tensor<T>(kernels::ncc_forward(va.dim(0), grid, window, va.data.data(), value(b).data.data()));
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::gradmag(NodeId field, std::optional<NodeId> weight) {
  const auto& f = value(field);
  const Grid3 grid = channel_grid(f.shape);
  const T* w = nullptr;
  Node n;
  n.kind = OpKind::gradmag;
  n.inputs = {field};
  if (weight) {
    const auto& wt = value(*weight);
    if (static_cast<std::int64_t>(wt.size()) != grid.voxels()) {
      throw ShapeError("gradmag: weight " + to_string(wt.shape) + " does not cover field grid " + to_string(f.shape));
    }
    if (node(*weight).needs_grad) throw std::invalid_argument("gradmag: weight must be a constant");
    w = wt.data.data();
    n.inputs.push_back(*weight);
  }
  n.needs_grad = node(field).needs_grad;
  n.value = scalar_tensor<T>(kernels::gradmag_forward(f.dim(0), grid, f.data.data(), w));
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::warp_linear(NodeId image, NodeId field) {
  const auto& im = value(image);
  const auto& f = value(field);
  const Grid3 grid = channel_grid(im.shape);
  if (f.rank() != im.rank() || f.dim(0) != grid.rank ||
      !std::equal(im.shape.begin() + 1, im.shape.end(), f.shape.begin() + 1)) {
    throw ShapeError("warp_linear: field " + to_string(f.shape) + " is not aligned with image " + to_string(im.shape));
  }
  Node n;
  n.kind = OpKind::warp_linear;
  n.inputs = {image, field};
  n.needs_grad = any_needs_grad({image, field});
  n.value = TensorT(im.shape);
  kernels::warp_linear_forward(im.dim(0), grid, im.data.data(), f.data.data(), n.value.data.data());
  return push(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::cross_entropy(NodeId logits, const LabelTensor& labels) {
  const auto& lg = value(logits);
  if (lg.rank() < 2 || !std::equal(lg.shape.begin() + 1, lg.shape.end(), labels.shape.begin(), labels.shape.end())) {
    throw ShapeError("cross_entropy: labels " + to_string(labels.shape) + " do not match logits " + to_string(lg.shape));
  }
  const auto classes = lg.dim(0);
  for (auto l : labels.data) {
    if (l < 0 || l >= classes) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
  }
  Node n;
  n.kind = OpKind::cross_entropy;
  n.inputs = {logits};
  n.needs_grad = node(logits).needs_grad;
  n.labels = labels.data;
  n.value = scalar_tensor<T>(kernels::cross_entropy_forward(
      classes, static_cast<std::int64_t>(labels.size()), lg.data.data(), n.labels.data()));
  return push(std::move(n));
}

template <typename T>
BasicGradients<T> BasicGraph<T>::backward(NodeId loss) const {
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss node must be scalar, got shape " + to_string(value(loss).shape));
  }
  std::vector<TensorT> grads(nodes_.size());
  std::vector<Shape> shapes(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) shapes[i] = nodes_[i].value.shape;

  auto slot = [&](NodeId id) -> TensorT* {
    if (!nodes_[id].needs_grad) return nullptr;
    if (grads[id].data.empty()) grads[id] = TensorT(nodes_[id].value.shape);
    return &grads[id];
  };

  if (nodes_[loss].needs_grad) grads[loss] = scalar_tensor<T>(1.0);

  for (NodeId id = loss + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.kind == OpKind::leaf || grads[id].data.empty()) continue;
    const TensorT& go = grads[id];
    const double up = static_cast<double>(go.data[0]);
    switch (n.kind) {
      case OpKind::leaf:
        break;
      case OpKind::conv: {
        const auto& in = value(n.inputs[0]);
        const auto& k = value(n.inputs[1]);
        kernels::ConvGeometry c;
        c.grid = channel_grid(in.shape);
        c.in_channels = in.dim(0);
        c.out_channels = k.dim(0);
        std::int64_t kext[3] = {1, 1, 1};
        for (int d = 0; d < c.grid.rank; ++d) kext[c.grid.canonical(d)] = k.dim(static_cast<std::size_t>(2 + d));
        c.kz = kext[0];
        c.ky = kext[1];
        c.kx = kext[2];
        TensorT* gi = slot(n.inputs[0]);
        TensorT* gk = slot(n.inputs[1]);
        TensorT* gb = slot(n.inputs[2]);
        kernels::conv_backward(c, in.data.data(), k.data.data(), go.data.data(),
                               gi ? gi->data.data() : nullptr, gk ? gk->data.data() : nullptr,
                               gb ? gb->data.data() : nullptr);
        break;
      }
      case OpKind::maxpool2: {
        if (TensorT* gi = slot(n.inputs[0])) {
          for (std::size_t i = 0; i < go.size(); ++i) gi->data[static_cast<std::size_t>(n.argmax[i])] += go.data[i];
        }
        break;
      }
      case OpKind::upsample2: {
        if (TensorT* gi = slot(n.inputs[0])) {
          const auto& in = value(n.inputs[0]);
          kernels::upsample2_backward(in.dim(0), channel_grid(in.shape), go.data.data(), gi->data.data());
        }
        break;
      }
      case OpKind::leaky_relu: {
        if (TensorT* gi = slot(n.inputs[0])) {
          const auto& x = value(n.inputs[0]).data;
          const T s = static_cast<T>(n.scalar);
          for (std::size_t i = 0; i < x.size(); ++i) gi->data[i] += x[i] >= T(0) ? go.data[i] : s * go.data[i];
        }
        break;
      }
      case OpKind::concat: {
        const std::size_t na = value(n.inputs[0]).size();
        if (TensorT* ga = slot(n.inputs[0])) {
          for (std::size_t i = 0; i < na; ++i) ga->data[i] += go.data[i];
        }
        if (TensorT* gb = slot(n.inputs[1])) {
          for (std::size_t i = 0; i < gb->size(); ++i) gb->data[i] += go.data[na + i];
        }
        break;
      }
      case OpKind::add: {
        if (TensorT* ga = slot(n.inputs[0])) accumulate(*ga, go);
        if (TensorT* gb = slot(n.inputs[1])) accumulate(*gb, go);
        break;
      }
      case OpKind::mul: {
        const auto& x = value(n.inputs[0]).data;
        const auto& y = value(n.inputs[1]).data;
        if (TensorT* ga = slot(n.inputs[0])) {
          for (std::size_t i = 0; i < x.size(); ++i) ga->data[i] += go.data[i] * y[i];
        }
        if (TensorT* gb = slot(n.inputs[1])) {
          for (std::size_t i = 0; i < x.size(); ++i) gb->data[i] += go.data[i] * x[i];
        }
        break;
      }
      case OpKind::scale: {
        if (TensorT* ga = slot(n.inputs[0])) {
          for (std::size_t i = 0; i < go.size(); ++i) {
            ga->data[i] += static_cast<T>(static_cast<double>(go.data[i]) * n.scalar);
          }
        }
        break;
      }
      case OpKind::sum: {
        if (TensorT* ga = slot(n.inputs[0])) {
          for (auto& v : ga->data) v += static_cast<T>(up);
        }
        break;
      }
      case OpKind::mse: {
        const auto& x = value(n.inputs[0]).data;
        const auto& y = value(n.inputs[1]).data;
        const double k = 2.0 * up / static_cast<double>(x.size());
        TensorT* ga = slot(n.inputs[0]);
        TensorT* gb = slot(n.inputs[1]);
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double d = k * (static_cast<double>(x[i]) - static_cast<double>(y[i]));
          if (ga) ga->data[i] += static_cast<T>(d);
          if (gb) gb->data[i] -= static_cast<T>(d);
        }
        break;
      }
      case OpKind::ncc: {
        const auto& a = value(n.inputs[0]);
        const auto& b = value(n.inputs[1]);
        TensorT* ga = slot(n.inputs[0]);
        TensorT* gb = slot(n.inputs[1]);
        kernels::ncc_backward(a.dim(0), channel_grid(a.shape), n.window, a.data.data(), b.data.data(), up,
                              ga ? ga->data.data() : nullptr, gb ? gb->data.data() : nullptr);
        break;
      }
      case OpKind::gradmag: {
        if (TensorT* gf = slot(n.inputs[0])) {
          const auto& f = value(n.inputs[0]);
          const T* w = n.inputs.size() > 1 ? value(n.inputs[1]).data.data() : nullptr;
          kernels::gradmag_backward(f.dim(0), channel_grid(f.shape), f.data.data(), w, up, gf->data.data());
        }
        break;
      }
      case OpKind::warp_linear: {
        const auto& im = value(n.inputs[0]);
        const auto& f = value(n.inputs[1]);
        TensorT* gi = slot(n.inputs[0]);
        TensorT* gf = slot(n.inputs[1]);
        kernels::warp_linear_backward(im.dim(0), channel_grid(im.shape), im.data.data(), f.data.data(),
                                      go.data.data(), gi ? gi->data.data() : nullptr,
                                      gf ? gf->data.data() : nullptr);
        break;
      }
      case OpKind::cross_entropy: {
        if (TensorT* gl = slot(n.inputs[0])) {
          const auto& lg = value(n.inputs[0]);
          kernels::cross_entropy_backward(lg.dim(0), static_cast<std::int64_t>(n.labels.size()),
                                          lg.data.data(), n.labels.data(), up, gl->data.data());
        }
        break;
      }
    }
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind != OpKind::leaf || !nodes_[i].needs_grad) grads[i] = TensorT();
  }
  return BasicGradients<T>(std::move(grads), std::move(shapes));
}

template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace augmorph::diffcore
