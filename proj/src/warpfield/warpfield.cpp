#include "augmorph/warpfield/warpfield.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "augmorph/diffcore/kernels.hpp"

namespace augmorph::warpfield {

using diffcore::Grid3;
using diffcore::ShapeError;

namespace {

void require_aligned(const Shape& spatial, const DisplacementField& field, const char* op) {
  if (field.spatial_shape() != spatial || field.rank() != static_cast<int>(spatial.size())) {
    throw ShapeError(std::string(op) + ": field " + diffcore::to_string(field.components.shape) +
                     " is not aligned with grid " + diffcore::to_string(spatial));
  }
}

std::int64_t stride_of(const Grid3& g, int canonical_axis) {
  return canonical_axis == 2 ? 1 : canonical_axis == 1 ? g.nx : g.nx * g.ny;
}

// Normalised box average of radius r along every spatial axis; neighbours
// outside the grid are dropped from the average.
void box_blur(const Grid3& g, std::int64_t r, float* data) {
  if (r <= 0) return;
  std::vector<double> line;
  for (int d = 0; d < g.rank; ++d) {
    const int a = g.canonical(d);
    const std::int64_t n = g.extent(a);
    const std::int64_t stride = stride_of(g, a);
    line.resize(static_cast<std::size_t>(n));
    for (std::int64_t p = 0; p < g.voxels(); ++p) {
      const std::int64_t coord = (p / stride) % n;
      if (coord != 0) continue;  // visit each line once, from its first voxel
      for (std::int64_t i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = data[p + i * stride];
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t j0 = std::max<std::int64_t>(0, i - r), j1 = std::min(n - 1, i + r);
        double s = 0;
        for (std::int64_t j = j0; j <= j1; ++j) s += line[static_cast<std::size_t>(j)];
        data[p + i * stride] = static_cast<float>(s / static_cast<double>(j1 - j0 + 1));
      }
    }
  }
}

}  // namespace

DisplacementField::DisplacementField(Tensor c) : components(std::move(c)) {
  const Grid3 g = diffcore::channel_grid(components.shape);
  if (components.dim(0) != g.rank) {
    throw ShapeError("displacement field needs one component per spatial axis, got " +
                     diffcore::to_string(components.shape));
  }
}

DisplacementField DisplacementField::zeros(const Shape& spatial) {
  Shape s{static_cast<std::int64_t>(spatial.size())};
  s.insert(s.end(), spatial.begin(), spatial.end());
  return DisplacementField(Tensor(std::move(s)));
}

float DisplacementField::max_abs() const {
  float m = 0;
  for (float v : components.data) m = std::max(m, std::abs(v));
  return m;
}

Volume warp_linear(const Volume& image, const DisplacementField& field) {
  require_aligned(image.shape, field, "warp_linear");
  const Grid3 g = diffcore::make_grid(image.shape);
  Volume out(image.shape);
  diffcore::kernels::warp_linear_forward<float>(1, g, image.data.data(), field.components.data.data(),
                                                out.data.data());
  return out;
}

LabelMap warp_nearest(const LabelMap& labels, const DisplacementField& field) {
  require_aligned(labels.shape, field, "warp_nearest");
  const Grid3 g = diffcore::make_grid(labels.shape);
  const std::int64_t vox = g.voxels();
  const float* u = field.components.data.data();
  LabelMap out(labels.shape);
  for (std::int64_t z = 0; z < g.nz; ++z) {
    for (std::int64_t y = 0; y < g.ny; ++y) {
      for (std::int64_t x = 0; x < g.nx; ++x) {
        const std::int64_t p = (z * g.ny + y) * g.nx + x;
        std::int64_t pos[3] = {z, y, x};
        for (int d = 0; d < g.rank; ++d) {
          const int a = g.canonical(d);
          const double s = static_cast<double>(pos[a]) + static_cast<double>(u[d * vox + p]);
          pos[a] = std::clamp<std::int64_t>(std::lround(s), 0, g.extent(a) - 1);
        }
        out.data[static_cast<std::size_t>(p)] = labels.data[static_cast<std::size_t>((pos[0] * g.ny + pos[1]) * g.nx + pos[2])];
      }
    }
  }
  return out;
}

DisplacementField compose(const DisplacementField& outer, const DisplacementField& inner) {
  if (outer.components.shape != inner.components.shape) {
    throw ShapeError("compose: grid mismatch " + diffcore::to_string(outer.components.shape) + " vs " +
                     diffcore::to_string(inner.components.shape));
  }
  const Grid3 g = diffcore::channel_grid(inner.components.shape);
  Tensor sampled(outer.components.shape);
  diffcore::kernels::warp_linear_forward<float>(outer.components.dim(0), g, outer.components.data.data(),
                                                inner.components.data.data(), sampled.data.data());
  for (std::size_t i = 0; i < sampled.size(); ++i) sampled.data[i] += inner.components.data[i];
  return DisplacementField(std::move(sampled));
}

DisplacementField random_smooth_field(const Shape& spatial, const SmoothFieldParams& params, std::uint64_t seed) {
  if (params.grid_spacing < 2) throw std::invalid_argument("random_smooth_field: grid_spacing must be >= 2");
  if (params.amplitude < 0) throw std::invalid_argument("random_smooth_field: amplitude must be >= 0");
  DisplacementField field = DisplacementField::zeros(spatial);
  if (params.amplitude == 0) return field;

  const Grid3 g = diffcore::make_grid(spatial);
  const std::int64_t s = params.grid_spacing;
  std::int64_t m[3] = {1, 1, 1};
  for (int d = 0; d < g.rank; ++d) {
    const int a = g.canonical(d);
    m[a] = (g.extent(a) - 1 + s - 1) / s + 1;
  }
  const std::int64_t controls = m[0] * m[1] * m[2];

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-params.amplitude, params.amplitude);
  std::vector<double> ctrl(static_cast<std::size_t>(controls * g.rank));
  for (auto& v : ctrl) v = uni(rng);

  const std::int64_t vox = g.voxels();
  float* out = field.components.data.data();
  for (int d = 0; d < g.rank; ++d) {
    const double* c = ctrl.data() + d * controls;
    for (std::int64_t z = 0; z < g.nz; ++z) {
      for (std::int64_t y = 0; y < g.ny; ++y) {
        for (std::int64_t x = 0; x < g.nx; ++x) {
          const std::int64_t coord[3] = {z, y, x};
          std::int64_t lo[3], hi[3];
          double f[3];
          for (int a = 0; a < 3; ++a) {
            const double pos = m[a] == 1 ? 0.0 : static_cast<double>(coord[a]) / static_cast<double>(s);
            lo[a] = static_cast<std::int64_t>(std::floor(pos));
            hi[a] = std::min(lo[a] + 1, m[a] - 1);
            f[a] = pos - static_cast<double>(lo[a]);
          }
          double v = 0;
          for (int corner = 0; corner < 8; ++corner) {
            double w = 1;
            std::int64_t idx[3];
            for (int a = 0; a < 3; ++a) {
              const bool up = (corner >> (2 - a)) & 1;
              w *= up ? f[a] : 1.0 - f[a];
              idx[a] = up ? hi[a] : lo[a];
            }
            if (w != 0) v += w * c[(idx[0] * m[1] + idx[1]) * m[2] + idx[2]];
          }
          out[d * vox + (z * g.ny + y) * g.nx + x] = static_cast<float>(v);
        }
      }
    }
    box_blur(g, params.blur_radius, out + d * vox);
  }
  // Guard the bound against float rounding of the convex combinations.
  const auto amp = static_cast<float>(params.amplitude);
  for (auto& v : field.components.data) v = std::clamp(v, -amp, amp);
  return field;
}

BoundaryMask boundary_mask(const LabelMap& labels) {
  const Grid3 g = diffcore::make_grid(labels.shape);
  BoundaryMask out{diffcore::BasicTensor<std::uint8_t>(labels.shape)};
  for (int d = 0; d < g.rank; ++d) {
    diffcore::kernels::for_each_forward_pair(g, d, [&](std::int64_t p, std::int64_t q) {
      const auto up = static_cast<std::size_t>(p), uq = static_cast<std::size_t>(q);
      if (labels.data[up] != labels.data[uq]) {
        out.mask.data[up] = 1;
        out.mask.data[uq] = 1;
      }
    });
  }
  return out;
}

}  // namespace augmorph::warpfield
