#pragma once

// Central finite-difference probes against the engine's analytic gradients,
// run on the double instantiation. Inputs are built so that no probe sits
// within the step size of a kink (max-pool ties, the LeakyReLU origin,
// integer sample coordinates of warp_linear, border clamping) or in a
// near-flat NCC window, where curvature swamps the difference quotient.
// Relative error is taken against max(|analytic|, |numeric|, 1% of the
// largest analytic gradient entry of the probed input): where cancellation
// makes one entry nearly zero, O(h^2) truncation error would otherwise
// dominate any ratio.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "augmorph/diffcore/graph.hpp"

namespace gradcheck {

using augmorph::diffcore::BasicGraph;
using augmorph::diffcore::BasicTensor;
using augmorph::diffcore::LabelTensor;
using augmorph::diffcore::NodeId;
using augmorph::diffcore::Shape;
using GraphD = BasicGraph<double>;
using TensorD = BasicTensor<double>;

inline constexpr double kStep = 1e-3;
inline constexpr double kTolerance = 1e-3;
inline constexpr int kProbes = 25;
inline constexpr double kScaleFloor = 1e-2;

struct Case {
  std::string name;
  std::vector<TensorD> inputs;
  std::vector<bool> probe;  // which inputs receive probes
  std::function<NodeId(GraphD&, const std::vector<NodeId>&)> op;
};

struct Result {
  std::string name;
  int probes = 0;
  double max_rel_error = 0;
};

inline TensorD uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
  TensorD t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Distinct values at spacing 0.05 in random order: no max-pool window has a
// near-tie.
inline TensorD distinct(Shape s, std::mt19937_64& rng) {
  TensorD t(std::move(s));
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) t.data[order[i]] = 0.05 * static_cast<double>(i) - 1.0;
  return t;
}

// Values bounded away from zero by 0.05.
inline TensorD off_origin(Shape s, std::mt19937_64& rng) {
  TensorD t = uniform(std::move(s), rng, 0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data) v = sign(rng) ? v : -v;
  return t;
}

// Levels 0.2..0.8 cycling with the coordinate sum (period 2 or 3) plus
// uniform noise in [0, 0.1]: neighbours differ by at least 0.2, so every NCC
// window has non-trivial variance. Different periods keep a pair of inputs
// from being almost perfectly correlated.
inline TensorD textured(Shape s, std::mt19937_64& rng, int period) {
  TensorD t = uniform(s, rng, 0, 0.1);
  std::vector<std::int64_t> coord(s.size(), 0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::int64_t sum = 0;
    for (std::size_t d = 1; d < s.size(); ++d) sum += coord[d];
    t.data[i] += 0.2 + 0.6 * static_cast<double>(sum % period) / (period - 1);
    for (std::size_t d = s.size(); d-- > 1;) {
      if (++coord[d] < s[d]) break;
      coord[d] = 0;
    }
  }
  return t;
}

// Displacements whose sample points fall strictly between grid nodes and
// never need clamping: fractional offsets in [0.2, 0.8] toward the interior.
inline TensorD interior_field(const Shape& spatial, std::mt19937_64& rng) {
  Shape s{static_cast<std::int64_t>(spatial.size())};
  s.insert(s.end(), spatial.begin(), spatial.end());
  TensorD f(s);
  std::uniform_real_distribution<double> frac(0.2, 0.8);
  const auto vox = static_cast<std::size_t>(augmorph::diffcore::numel(spatial));
  for (std::size_t d = 0; d < spatial.size(); ++d) {
    for (std::size_t p = 0; p < vox; ++p) {
      std::size_t rem = p;
      std::int64_t coord = 0;
      for (std::size_t a = spatial.size(); a-- > 0;) {
        const auto e = static_cast<std::size_t>(spatial[a]);
        if (a == d) coord = static_cast<std::int64_t>(rem % e);
        rem /= e;
      }
      const double u = frac(rng);
      f.data[d * vox + p] = coord + 1 < spatial[d] ? u : -u;
    }
  }
  return f;
}

// Scalar objective: the op itself if scalar, else sum(op * R) for a fixed
// random R.
inline double objective(const Case& c, const std::vector<TensorD>& inputs, const TensorD* weights,
                        std::vector<TensorD>* grads) {
  GraphD g;
  std::vector<NodeId> ids;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ids.push_back(c.probe[i] ? g.parameter(inputs[i]) : g.constant(inputs[i]));
  }
  NodeId out = c.op(g, ids);
  if (g.value(out).size() != 1) out = g.sum(g.mul(out, g.constant(*weights)));
  if (grads) {
    const auto gr = g.backward(out);
    grads->clear();
    for (auto id : ids) grads->push_back(gr.wrt(id));
  }
  return g.value(out).data[0];
}

inline Result run_case(const Case& c, std::uint64_t seed, int probes = kProbes) {
  std::mt19937_64 rng(seed);
  TensorD weights;
  {
    GraphD g;
    std::vector<NodeId> ids;
    for (const auto& t : c.inputs) ids.push_back(g.constant(t));
    const auto& out = g.value(c.op(g, ids));
    if (out.size() != 1) weights = uniform(out.shape, rng, -1, 1);
  }
  std::vector<TensorD> analytic;
  objective(c, c.inputs, &weights, &analytic);

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    if (c.probe[i]) candidates.push_back(i);
  }
  std::vector<double> scale(c.inputs.size(), 0.0);
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    for (double v : analytic[i].data) scale[i] = std::max(scale[i], std::abs(v));
  }
  Result r{c.name, 0, 0};
  for (int p = 0; p < probes; ++p) {
    const std::size_t which = candidates[rng() % candidates.size()];
    const std::size_t elem = rng() % c.inputs[which].size();
    auto plus = c.inputs, minus = c.inputs;
    plus[which].data[elem] += kStep;
    minus[which].data[elem] -= kStep;
    const double numeric =
        (objective(c, plus, &weights, nullptr) - objective(c, minus, &weights, nullptr)) / (2 * kStep);
    const double a = analytic[which].data[elem];
    const double denom = std::max({std::abs(a), std::abs(numeric), kScaleFloor * scale[which], 1e-7});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
    ++r.probes;
  }
  return r;
}

inline std::vector<Case> operator_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Case> cases;
  auto add = [&](std::string name, std::vector<TensorD> in, std::vector<bool> probe, auto op) {
    cases.push_back({std::move(name), std::move(in), std::move(probe), op});
  };

  add("conv2d", {uniform({2, 6, 5}, rng, -1, 1), uniform({3, 2, 3, 3}, rng, -1, 1), uniform({3}, rng, -1, 1)},
      {true, true, true}, [](GraphD& g, const std::vector<NodeId>& x) { return g.conv(x[0], x[1], x[2]); });
  add("conv3d", {uniform({2, 4, 4, 3}, rng, -1, 1), uniform({2, 2, 3, 3, 3}, rng, -1, 1), uniform({2}, rng, -1, 1)},
      {true, true, true}, [](GraphD& g, const std::vector<NodeId>& x) { return g.conv(x[0], x[1], x[2]); });
  add("conv1d", {uniform({1, 9}, rng, -1, 1), uniform({2, 1, 5}, rng, -1, 1), uniform({2}, rng, -1, 1)},
      {true, true, true}, [](GraphD& g, const std::vector<NodeId>& x) { return g.conv(x[0], x[1], x[2]); });
  add("maxpool2", {distinct({2, 6, 4}, rng)}, {true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.maxpool2(x[0]); });
  add("upsample2", {uniform({2, 3, 2}, rng, -1, 1)}, {true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.upsample2(x[0]); });
  add("leaky_relu", {off_origin({3, 5}, rng)}, {true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.leaky_relu(x[0], 0.2); });
  add("concat", {uniform({2, 3, 3}, rng, -1, 1), uniform({1, 3, 3}, rng, -1, 1)}, {true, true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.concat(x[0], x[1]); });
  add("add", {uniform({4, 3}, rng, -1, 1), uniform({4, 3}, rng, -1, 1)}, {true, true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.add(x[0], x[1]); });
  add("mul", {uniform({4, 3}, rng, -1, 1), uniform({4, 3}, rng, -1, 1)}, {true, true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.mul(x[0], x[1]); });
  add("scale", {uniform({4, 3}, rng, -1, 1)}, {true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.scale(x[0], -1.7); });
  add("sum", {uniform({4, 3}, rng, -1, 1)}, {true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.sum(x[0]); });
  add("mse", {uniform({2, 4, 4}, rng, -1, 1), uniform({2, 4, 4}, rng, -1, 1)}, {true, true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.mse(x[0], x[1]); });
  add("ncc2d", {textured({1, 9, 8}, rng, 2), textured({1, 9, 8}, rng, 3)}, {true, true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.ncc(x[0], x[1], 5); });
  add("ncc1d", {textured({1, 12}, rng, 2), textured({1, 12}, rng, 3)}, {true, true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.ncc(x[0], x[1], 3); });
  add("gradmag", {uniform({2, 5, 6}, rng, -1, 1)}, {true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.gradmag(x[0]); });
  add("gradmag_weighted", {uniform({1, 5, 6}, rng, -1, 1), uniform({1, 5, 6}, rng, 0, 1)}, {true, false},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.gradmag(x[0], x[1]); });
  add("warp_linear2d", {uniform({1, 6, 7}, rng, -1, 1), interior_field({6, 7}, rng)}, {true, true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.warp_linear(x[0], x[1]); });
  add("warp_linear3d", {uniform({2, 4, 3, 4}, rng, -1, 1), interior_field({4, 3, 4}, rng)}, {true, true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.warp_linear(x[0], x[1]); });
  add("warp_linear1d", {uniform({1, 8}, rng, -1, 1), interior_field({8}, rng)}, {true, true},
      [](GraphD& g, const std::vector<NodeId>& x) { return g.warp_linear(x[0], x[1]); });

  LabelTensor labels({4, 5});
  for (auto& l : labels.data) l = static_cast<std::int32_t>(rng() % 3);
  add("cross_entropy", {uniform({3, 4, 5}, rng, -2, 2)}, {true},
      [labels](GraphD& g, const std::vector<NodeId>& x) { return g.cross_entropy(x[0], labels); });
  return cases;
}

inline std::vector<Result> run_suite(std::uint64_t seed) {
  std::vector<Result> out;
  std::uint64_t k = 0;
  for (const auto& c : operator_cases(seed)) out.push_back(run_case(c, seed * 1000 + ++k));
  return out;
}

}  // namespace gradcheck
