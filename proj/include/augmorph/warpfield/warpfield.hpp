#pragma once

#include <cstdint>

#include "augmorph/volume.hpp"

namespace augmorph::warpfield {

using diffcore::Shape;
using diffcore::Tensor;

/// Per-voxel displacement u in voxel units, laid out [D, spatial...] with one
/// component per spatial axis. The deformation is id + u.
struct DisplacementField {
  Tensor components;

  DisplacementField() = default;
  explicit DisplacementField(Tensor c);

  static DisplacementField zeros(const Shape& spatial);

  [[nodiscard]] int rank() const { return static_cast<int>(components.dim(0)); }
  [[nodiscard]] Shape spatial_shape() const {
    return Shape(components.shape.begin() + 1, components.shape.end());
  }
  [[nodiscard]] float max_abs() const;

  friend bool operator==(const DisplacementField&, const DisplacementField&) = default;
};

/// 1 where a face-adjacent neighbour carries a different label.
struct BoundaryMask {
  diffcore::BasicTensor<std::uint8_t> mask;
};

struct SmoothFieldParams {
  std::int64_t grid_spacing = 16;
  double amplitude = 6.0;
  std::int64_t blur_radius = 2;
};

/// Multilinear resampling of `image` at p + u(p), clamped to the grid.
Volume warp_linear(const Volume& image, const DisplacementField& field);

/// Label at round(p + u(p)), clamped. Never introduces new labels.
LabelMap warp_nearest(const LabelMap& labels, const DisplacementField& field);

/// u with id + u ~= (id + outer) o (id + inner).
DisplacementField compose(const DisplacementField& outer, const DisplacementField& inner);

/// Uniform random vectors on a sparse control grid, multilinearly
/// interpolated to full resolution and box-blurred. Deterministic in seed;
/// every component stays within [-amplitude, amplitude].
DisplacementField random_smooth_field(const Shape& spatial, const SmoothFieldParams& params, std::uint64_t seed);

BoundaryMask boundary_mask(const LabelMap& labels);

}  // namespace augmorph::warpfield
