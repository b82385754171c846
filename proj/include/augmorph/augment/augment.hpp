#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "augmorph/volume.hpp"
#include "augmorph/warpfield/warpfield.hpp"
#include "augmorph/xformmodels/models.hpp"

namespace augmorph::augment {

using xformmodels::AppearanceModel;
using xformmodels::SpatialModel;

enum class SynthesisMode { indep, coupled, rand_aug, indep_plus_rand };

std::string to_string(SynthesisMode mode);
SynthesisMode parse_synthesis_mode(const std::string& text);

/// Which transforms produce one synthetic example. For indep_plus_rand,
/// even counters carry target indices (learned transforms) and odd
/// counters carry none (random augmentation).
struct SynthesisPlan {
  SynthesisMode mode = SynthesisMode::indep;
  std::optional<std::size_t> spatial_target;
  std::optional<std::size_t> appearance_target;
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  /// Throws std::invalid_argument when the indices do not fit the mode.
  void validate(std::size_t n_unlabeled) const;
  [[nodiscard]] bool uses_learned_transforms() const { return spatial_target.has_value(); }

  friend bool operator==(const SynthesisPlan&, const SynthesisPlan&) = default;
};

struct LabeledExample {
  Volume image;
  LabelMap labels;
  SynthesisPlan provenance;
};

struct RandAugParams {
  warpfield::SmoothFieldParams field{16, 6.0, 2};
  double factor_min = 0.5;
  double factor_max = 1.5;
};

/// Lazily generated, seed-reproducible sequence of plans.
class PlanStream {
 public:
  PlanStream(SynthesisMode mode, std::size_t n_unlabeled, std::uint64_t seed);

  SynthesisPlan next();
  [[nodiscard]] SynthesisMode mode() const { return mode_; }

 private:
  SynthesisMode mode_;
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::mt19937_64 rng_;
};

std::vector<SynthesisPlan> enumerate_plans(SynthesisMode mode, std::size_t n_unlabeled, std::uint64_t seed,
                                           std::size_t count);

/// Number of distinct learned-transform examples a mode can produce from
/// `n_unlabeled` targets (n^2 for indep, n for coupled, 0 for rand_aug).
std::size_t distinct_plan_count(SynthesisMode mode, std::size_t n_unlabeled);

/// factor * warp_linear(atlas, f) and warp_nearest(labels, f) for one random
/// smooth field f.
LabeledExample rand_aug_example(const Volume& atlas, const LabelMap& atlas_labels, const RandAugParams& params,
                                std::uint64_t seed);

/// Appearance first, in the atlas frame, then the spatial warp of target i:
/// image = (atlas + psi_j) o phi_i, labels = atlas_labels o phi_i.
LabeledExample synthesize(const Volume& atlas, const LabelMap& atlas_labels, const SpatialModel& spatial,
                          const AppearanceModel& appearance, std::span<const Volume> unlabeled,
                          const SynthesisPlan& plan, const RandAugParams& rand_params = {});

/// Atlas labels warped onto `subject` by the forward registration field.
LabelMap sas_propagate(const SpatialModel& spatial, const Volume& atlas, const LabelMap& atlas_labels,
                       const Volume& subject);

/// Per-target fields and appearance deltas computed once from frozen
/// models, so each synthesis is two warps. Results equal synthesize().
class TransformBank {
 public:
  TransformBank(const Volume& atlas, const LabelMap& atlas_labels, const SpatialModel& spatial,
                const AppearanceModel& appearance, std::span<const Volume> unlabeled, int threads = 1);

  [[nodiscard]] LabeledExample synthesize(const SynthesisPlan& plan, const RandAugParams& rand_params = {}) const;
  [[nodiscard]] std::size_t size() const { return fields_.size(); }
  [[nodiscard]] const warpfield::DisplacementField& field(std::size_t i) const { return fields_.at(i); }
  [[nodiscard]] const Volume& delta(std::size_t j) const { return deltas_.at(j); }

 private:
  Volume atlas_;
  LabelMap atlas_labels_;
  std::vector<warpfield::DisplacementField> fields_;
  std::vector<Volume> deltas_;
};

}  // namespace augmorph::augment
