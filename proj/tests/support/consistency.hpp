#pragma once

// Label/image consistency of a synthesized example against the field that
// produced it. For each foreground label k, warp the indicator of k with the
// same linear warp as the image; every voxel labelled k must lie in the
// indicator's support, and the support may exceed the label region only by
// the interpolation fringe.

#include <algorithm>
#include <cmath>
#include <set>

#include "augmorph/warpfield/warpfield.hpp"

namespace consistency {

using augmorph::LabelMap;
using augmorph::Volume;
using augmorph::warpfield::DisplacementField;

struct Report {
  std::size_t uncovered = 0;  // labelled k but outside the indicator support
  std::size_t far = 0;        // support voxels whose sample point is > 1 voxel from atlas label k
  std::int64_t widest = 0;    // widest fringe measured on the output grid, capped at 8
};

inline std::vector<std::int64_t> coords_of(const augmorph::diffcore::Shape& s, std::size_t p) {
  std::vector<std::int64_t> c(s.size());
  for (std::size_t a = s.size(); a-- > 0;) {
    c[a] = static_cast<std::int64_t>(p % static_cast<std::size_t>(s[a]));
    p /= static_cast<std::size_t>(s[a]);
  }
  return c;
}

// True when some voxel within Chebyshev distance `radius` of `centre` has label k.
inline bool near_label(const LabelMap& labels, const std::vector<std::int64_t>& centre, std::int32_t k,
                       std::int64_t radius) {
  const auto& s = labels.shape;
  const auto side = static_cast<std::size_t>(2 * radius + 1);
  std::size_t combos = 1;
  for (std::size_t a = 0; a < s.size(); ++a) combos *= side;
  for (std::size_t m = 0; m < combos; ++m) {
    std::size_t code = m, idx = 0;
    bool inside = true;
    for (std::size_t a = 0; a < s.size(); ++a) {
      const std::int64_t q = centre[a] + static_cast<std::int64_t>(code % side) - radius;
      code /= side;
      if (q < 0 || q >= s[a]) {
        inside = false;
        break;
      }
      idx = idx * static_cast<std::size_t>(s[a]) + static_cast<std::size_t>(q);
    }
    if (inside && labels.data[idx] == k) return true;
  }
  return false;
}

// The fringe is one voxel wide where the warp samples the atlas: a support
// voxel's rounded sample point must be adjacent to an atlas voxel labelled k.
// On the output grid the same fringe widens wherever the field stretches.
inline Report check(const LabelMap& atlas_labels, const DisplacementField& field, const LabelMap& labels) {
  Report r;
  const auto& s = atlas_labels.shape;
  const std::size_t vox = atlas_labels.size();
  const std::set<std::int32_t> alphabet(atlas_labels.data.begin(), atlas_labels.data.end());
  for (std::int32_t k : alphabet) {
    if (k == 0) continue;
    Volume indicator(s);
    for (std::size_t i = 0; i < vox; ++i) indicator.data[i] = atlas_labels.data[i] == k ? 1.0f : 0.0f;
    const Volume support = augmorph::warpfield::warp_linear(indicator, field);
    for (std::size_t p = 0; p < vox; ++p) {
      const bool in_support = support.data[p] > 0.0f;
      if (labels.data[p] == k && !in_support) ++r.uncovered;
      if (!in_support || labels.data[p] == k) continue;

      auto sample = coords_of(s, p);
      for (std::size_t a = 0; a < s.size(); ++a) {
        const double x = static_cast<double>(sample[a]) + field.components.data[a * vox + p];
        sample[a] = std::clamp<std::int64_t>(std::llround(x), 0, s[a] - 1);
      }
      if (!near_label(atlas_labels, sample, k, 1)) ++r.far;

      const auto here = coords_of(s, p);
      std::int64_t d = 1;
      while (d < 8 && !near_label(labels, here, k, d)) ++d;
      r.widest = std::max(r.widest, d);
    }
  }
  return r;
}

}  // namespace consistency
