#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "augmorph/diffcore/adam.hpp"
#include "augmorph/volume.hpp"
#include "augmorph/warpfield/warpfield.hpp"
#include "augmorph/xformmodels/net.hpp"

namespace augmorph::xformmodels {

using warpfield::BoundaryMask;
using warpfield::DisplacementField;

/// Registration networks: forward_net maps (atlas, subject) to the field
/// warping the atlas onto the subject; inverse_net is an identical network
/// trained on the mirrored pair.
struct SpatialModel {
  NetParams forward_net;
  NetParams inverse_net;
  double smoothness_weight = 1.0;
  int ncc_window = 9;

  [[nodiscard]] bool initialized() const { return !forward_net.empty() && !inverse_net.empty(); }
};

/// Per-voxel additive intensity change, defined in the atlas frame.
struct AppearanceDelta {
  Volume delta;
};

struct AppearanceModel {
  NetParams net;
  double lambda_a = 0.02;

  [[nodiscard]] bool initialized() const { return !net.empty(); }
};

NetArch spatial_arch(int spatial_rank, std::vector<int> widths = {16, 32, 32});
NetArch appearance_arch(int spatial_rank, std::vector<int> widths = {16, 32, 32});

SpatialModel make_spatial_model(const NetArch& arch, double smoothness_weight, int ncc_window, std::uint64_t seed);
AppearanceModel make_appearance_model(const NetArch& arch, double lambda_a, std::uint64_t seed);

/// Field u such that warp_linear(source, u) approximates target.
DisplacementField predict_displacement(const NetParams& net, const Volume& source, const Volume& target);

/// psi = h(atlas, registered_subject); registered_subject is already in the
/// atlas frame.
AppearanceDelta predict_appearance(const AppearanceModel& model, const Volume& atlas, const Volume& registered_subject);

/// MSE((atlas + psi) o phi, subject) + lambda_a * mean((1 - c_x) |grad psi|^2).
double appearance_total_loss(const Volume& atlas, const Volume& subject, const DisplacementField& phi,
                             const AppearanceDelta& psi, const BoundaryMask& boundaries, double lambda_a);

/// Gate (1 - c_x) as a float volume.
Volume smoothness_gate(const BoundaryMask& boundaries);

struct TrainOptions {
  int steps = 2000;
  std::uint64_t seed = 42;
  diffcore::AdamConfig adam{};
  /// Called after every step with (step index, loss); may be empty.
  std::function<void(int, double)> on_step;
};

struct SpatialTrainResult {
  SpatialModel model;
  std::vector<double> forward_losses;
  std::vector<double> inverse_losses;
};

/// Each step samples one unlabeled subject y and descends
/// -NCC(x o phi, y) + lambda_s |grad u|^2 for forward_net and the mirrored
/// objective for inverse_net.
SpatialTrainResult train_spatial(SpatialModel model, const Volume& atlas, std::span<const Volume> unlabeled,
                                 const TrainOptions& options);

struct AppearanceTrainResult {
  AppearanceModel model;
  std::vector<double> losses;
};

/// Spatial fields per subject, computed once from the frozen spatial model.
struct RegisteredSubject {
  DisplacementField forward;    // atlas -> subject
  DisplacementField inverse;    // subject -> atlas
  Volume in_atlas_frame;        // subject o inverse
};

RegisteredSubject register_subject(const SpatialModel& spatial, const Volume& atlas, const Volume& subject);

AppearanceTrainResult train_appearance(AppearanceModel model, const Volume& atlas, const LabelMap& atlas_labels,
                                       std::span<const Volume> unlabeled, const SpatialModel& spatial,
                                       const TrainOptions& options);

}  // namespace augmorph::xformmodels
