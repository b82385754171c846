#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "augmorph/dataio/manifest.hpp"
#include "augmorph/volume.hpp"
#include "augmorph/warpfield/warpfield.hpp"

namespace augmorph::dataio {

/// Procedural stand-in for a brain corpus: nested smooth regions, per-subject
/// smooth anatomy warps, per-label intensity jitter, a multiplicative bias
/// field and additive noise.
struct ToyGenParams {
  diffcore::Shape image_size{96, 96};
  int label_count = 4;
  warpfield::SmoothFieldParams anatomy{16, 5.0, 3};
  /// Relative radius of each foreground region (labels 1..L-1), strictly
  /// decreasing; empty spaces them evenly between 0.85 and 0.25.
  std::vector<double> region_radii;
  /// Angular folds on the boundary between region 1 (the outer ring) and
  /// region 2, as relative radius modulation. 0 disables them.
  int fold_count = 0;
  double fold_depth = 0.0;
  /// One base intensity per label; background must be 0.
  std::vector<double> base_intensities{0.0, 0.45, 0.8, 0.2};
  /// Relative half-width of the uniform per-label intensity draw.
  double intensity_jitter = 0.3;
  double bias_amplitude = 0.2;
  std::int64_t bias_spacing = 32;
  double noise_sigma = 0.02;
  std::uint64_t seed = 42;

  void validate() const;
};

struct ToySubject {
  Volume image;
  LabelMap labels;
  warpfield::DisplacementField field;
};

/// Undeformed template label map.
LabelMap toy_template_labels(const ToyGenParams& params);

/// Anatomy warp for a subject stream seed.
warpfield::DisplacementField toy_subject_field(const ToyGenParams& params, std::uint64_t subject_seed);

/// One subject. `undeformed` yields the template itself (the atlas).
ToySubject toy_subject(const ToyGenParams& params, std::uint64_t subject_seed, bool undeformed);

/// Stream seed of subject `index` (train pool first, then val, then test).
std::uint64_t toy_subject_seed(const ToyGenParams& params, std::size_t index);

/// Writes the corpus under `out_dir` plus `manifest.json`. Training subject 0
/// is the undeformed template and serves as the atlas; the rest form the
/// unlabeled pool.
DatasetManifest generate_toy_dataset(const ToyGenParams& params, std::size_t n_train, std::size_t n_val,
                                     std::size_t n_test, const std::filesystem::path& out_dir, int threads = 1);

}  // namespace augmorph::dataio
