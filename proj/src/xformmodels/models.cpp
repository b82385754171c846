#include "augmorph/xformmodels/models.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>

namespace augmorph::xformmodels {

using diffcore::NumericError;
using diffcore::ShapeError;

namespace {

void require_same_grid(const Volume& a, const Volume& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": grid mismatch " + diffcore::to_string(a.shape) + " vs " +
                     diffcore::to_string(b.shape));
  }
}

Tensor pair_input(const Volume& a, const Volume& b) {
  diffcore::Shape s{2};
  s.insert(s.end(), a.shape.begin(), a.shape.end());
  Tensor t(std::move(s));
  std::copy(a.data.begin(), a.data.end(), t.data.begin());
  std::copy(b.data.begin(), b.data.end(), t.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return t;
}

struct StepResult {
  double loss;
  NetGrads grads;
};

StepResult registration_step(const NetParams& net, const Volume& source, const Volume& target,
                             double smoothness_weight, int window) {
  Graph g;
  const NodeId in = g.constant(pair_input(source, target));
  const NetGraph ng = build_net(g, net, in, true);
  const NodeId src = g.constant(with_channel(source));
  const NodeId tgt = g.constant(with_channel(target));
  const NodeId warped = g.warp_linear(src, ng.output);
  const NodeId sim = g.ncc(warped, tgt, window);
  const NodeId smooth = g.gradmag(ng.output);
  const NodeId loss = g.add(sim, g.scale(smooth, smoothness_weight));
  StepResult r{static_cast<double>(g.value(loss).data[0]), {}};
  r.grads.collect(g.backward(loss), ng);
  return r;
}

NodeId appearance_loss_node(Graph& g, NodeId atlas, NodeId psi, NodeId phi, NodeId subject, NodeId gate,
                            double lambda_a) {
  const NodeId corrected = g.add(atlas, psi);
  const NodeId moved = g.warp_linear(corrected, phi);
  const NodeId sim = g.mse(moved, subject);
  const NodeId smooth = g.gradmag(psi, gate);
  return g.add(sim, g.scale(smooth, lambda_a));
}

[[noreturn]] void rethrow_at_step(const char* who, int step, const std::exception& e) {
  throw NumericError(std::string(who) + ": non-finite loss at step " + std::to_string(step) + " (" + e.what() + ")");
}

}  // namespace

NetArch spatial_arch(int spatial_rank, std::vector<int> widths) {
  NetArch a;
  a.spatial_rank = spatial_rank;
  a.in_channels = 2;
  a.out_channels = spatial_rank;
  a.widths = std::move(widths);
  return a;
}

NetArch appearance_arch(int spatial_rank, std::vector<int> widths) {
  NetArch a;
  a.spatial_rank = spatial_rank;
  a.in_channels = 2;
  a.out_channels = 1;
  a.widths = std::move(widths);
  return a;
}

SpatialModel make_spatial_model(const NetArch& arch, double smoothness_weight, int ncc_window, std::uint64_t seed) {
  if (arch.out_channels != arch.spatial_rank || arch.in_channels != 2) {
    throw std::invalid_argument("spatial model needs 2 input channels and one output per spatial axis");
  }
  SpatialModel m;
  m.forward_net = init_net(arch, seed);
  m.inverse_net = init_net(arch, seed + 1);
  m.smoothness_weight = smoothness_weight;
  m.ncc_window = ncc_window;
  return m;
}

AppearanceModel make_appearance_model(const NetArch& arch, double lambda_a, std::uint64_t seed) {
  if (!(lambda_a > 0)) throw std::invalid_argument("appearance model needs lambda_a > 0");
  if (arch.out_channels != 1 || arch.in_channels != 2) {
    throw std::invalid_argument("appearance model needs 2 input channels and 1 output channel");
  }
  return AppearanceModel{init_net(arch, seed), lambda_a};
}

DisplacementField predict_displacement(const NetParams& net, const Volume& source, const Volume& target) {
  require_same_grid(source, target, "predict_displacement");
  return DisplacementField(run_net(net, pair_input(source, target)));
}

AppearanceDelta predict_appearance(const AppearanceModel& model, const Volume& atlas, const Volume& registered_subject) {
  require_same_grid(atlas, registered_subject, "predict_appearance");
  return AppearanceDelta{drop_channel(run_net(model.net, pair_input(atlas, registered_subject)))};
}

Volume smoothness_gate(const BoundaryMask& boundaries) {
  Volume gate(boundaries.mask.shape);
  for (std::size_t i = 0; i < gate.size(); ++i) gate.data[i] = boundaries.mask.data[i] ? 0.0f : 1.0f;
  return gate;
}

double appearance_total_loss(const Volume& atlas, const Volume& subject, const DisplacementField& phi,
                             const AppearanceDelta& psi, const BoundaryMask& boundaries, double lambda_a) {
  if (lambda_a < 0) throw std::invalid_argument("appearance_total_loss: lambda_a must be >= 0");
  require_same_grid(atlas, subject, "appearance_total_loss");
  require_same_grid(atlas, psi.delta, "appearance_total_loss");
  if (boundaries.mask.shape != atlas.shape || phi.spatial_shape() != atlas.shape) {
    throw ShapeError("appearance_total_loss: boundary mask or field not aligned with atlas");
  }
  Graph g;
  const NodeId loss = appearance_loss_node(
      g, g.constant(with_channel(atlas)), g.constant(with_channel(psi.delta)), g.constant(phi.components),
      g.constant(with_channel(subject)), g.constant(with_channel(smoothness_gate(boundaries))), lambda_a);
  return static_cast<double>(g.value(loss).data[0]);
}

SpatialTrainResult train_spatial(SpatialModel model, const Volume& atlas, std::span<const Volume> unlabeled,
                                 const TrainOptions& options) {
  if (unlabeled.empty()) throw std::invalid_argument("train_spatial: no unlabeled subjects");
  if (!model.initialized()) throw std::invalid_argument("train_spatial: model is not initialized");
  for (const auto& y : unlabeled) require_same_grid(atlas, y, "train_spatial");

  SpatialTrainResult result;
  NetOptimizer fwd_opt(model.forward_net, options.adam);
  NetOptimizer inv_opt(model.inverse_net, options.adam);
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, unlabeled.size() - 1);
  for (int step = 0; step < options.steps; ++step) {
    const Volume& y = unlabeled[pick(rng)];
    try {
      auto f = registration_step(model.forward_net, atlas, y, model.smoothness_weight, model.ncc_window);
      auto b = registration_step(model.inverse_net, y, atlas, model.smoothness_weight, model.ncc_window);
      if (!std::isfinite(f.loss) || !std::isfinite(b.loss)) {
        throw NumericError("loss " + std::to_string(f.loss) + " / " + std::to_string(b.loss));
      }
      fwd_opt.step(model.forward_net, f.grads);
      inv_opt.step(model.inverse_net, b.grads);
      result.forward_losses.push_back(f.loss);
      result.inverse_losses.push_back(b.loss);
      if (options.on_step) options.on_step(step, f.loss);
    } catch (const NumericError& e) {
      rethrow_at_step("train_spatial", step, e);
    }
  }
  result.model = std::move(model);
  return result;
}

RegisteredSubject register_subject(const SpatialModel& spatial, const Volume& atlas, const Volume& subject) {
  RegisteredSubject r;
  r.forward = predict_displacement(spatial.forward_net, atlas, subject);
  r.inverse = predict_displacement(spatial.inverse_net, subject, atlas);
  r.in_atlas_frame = warpfield::warp_linear(subject, r.inverse);
  return r;
}

AppearanceTrainResult train_appearance(AppearanceModel model, const Volume& atlas, const LabelMap& atlas_labels,
                                       std::span<const Volume> unlabeled, const SpatialModel& spatial,
                                       const TrainOptions& options) {
  if (unlabeled.empty()) throw std::invalid_argument("train_appearance: no unlabeled subjects");
  if (!model.initialized()) throw std::invalid_argument("train_appearance: model is not initialized");
  if (!spatial.initialized()) throw std::invalid_argument("train_appearance: spatial model is not initialized");
  if (model.lambda_a < 0) throw std::invalid_argument("train_appearance: lambda_a must be >= 0");
  if (atlas_labels.shape != atlas.shape) throw ShapeError("train_appearance: atlas labels not aligned with atlas");

  const Tensor gate = with_channel(smoothness_gate(warpfield::boundary_mask(atlas_labels)));
  std::vector<std::optional<RegisteredSubject>> cache(unlabeled.size());

  AppearanceTrainResult result;
  NetOptimizer opt(model.net, options.adam);
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, unlabeled.size() - 1);
  for (int step = 0; step < options.steps; ++step) {
    const std::size_t i = pick(rng);
    if (!cache[i]) cache[i] = register_subject(spatial, atlas, unlabeled[i]);
    const RegisteredSubject& reg = *cache[i];
    try {
      Graph g;
      const NodeId in = g.constant(pair_input(atlas, reg.in_atlas_frame));
      const NetGraph ng = build_net(g, model.net, in, true);
      const NodeId loss =
          appearance_loss_node(g, g.constant(with_channel(atlas)), ng.output, g.constant(reg.forward.components),
                               g.constant(with_channel(unlabeled[i])), g.constant(gate), model.lambda_a);
      const double value = g.value(loss).data[0];
      if (!std::isfinite(value)) throw NumericError("loss " + std::to_string(value));
      NetGrads grads;
      grads.collect(g.backward(loss), ng);
      opt.step(model.net, grads);
      result.losses.push_back(value);
      if (options.on_step) options.on_step(step, value);
    } catch (const NumericError& e) {
      rethrow_at_step("train_appearance", step, e);
    }
  }
  result.model = std::move(model);
  return result;
}

}  // namespace augmorph::xformmodels
