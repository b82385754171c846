#pragma once

// Raw numeric kernels behind the graph operators. Every kernel walks its
// outputs in a fixed order so results are bit-reproducible. Reductions
// accumulate in double; convolution dot products accumulate in the
// tensor's own precision.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <span>
#include <vector>

#include "augmorph/diffcore/tensor.hpp"

namespace augmorph::diffcore::kernels {

using Acc = double;

inline constexpr double kNccEpsilon = 1e-5;

struct ConvGeometry {
  Grid3 grid;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kz = 1, ky = 1, kx = 1;

  [[nodiscard]] std::int64_t taps() const { return kz * ky * kx; }
};

// Direct same-padding correlation on a zero-padded copy of the input.
// Output channels are processed in blocks of kBlockC and columns in runs of
// one vector, so each block's accumulators stay in registers. Every
// output value sums its (ci, tap) terms in the same fixed order.
inline constexpr int kBlockC = 8;
inline constexpr int kVectorBytes = 64;

template <typename T>
inline constexpr int kLanes = kVectorBytes / static_cast<int>(sizeof(T));

template <typename T>
struct VectorOf;
template <>
struct VectorOf<float> {
  typedef float type __attribute__((vector_size(kVectorBytes)));
};
template <>
struct VectorOf<double> {
  typedef double type __attribute__((vector_size(kVectorBytes)));
};

template <typename T>
struct PaddedInput {
  std::vector<T> data;
  std::int64_t pz = 0, py = 0, px = 0;
};

template <typename T>
PaddedInput<T> pad_input(const ConvGeometry& c, std::int64_t channels, const T* in) {
  const auto& g = c.grid;
  const std::int64_t rz = c.kz / 2, ry = c.ky / 2, rx = c.kx / 2;
  PaddedInput<T> p;
  p.pz = g.nz + 2 * rz;
  p.py = g.ny + 2 * ry;
  // Extra columns so the last vector run may read past the row end.
  p.px = g.nx + 2 * rx + kLanes<T>;
  p.data.assign(static_cast<std::size_t>(channels * p.pz * p.py * p.px), T{0});
  for (std::int64_t ch = 0; ch < channels; ++ch) {
    for (std::int64_t z = 0; z < g.nz; ++z) {
      for (std::int64_t y = 0; y < g.ny; ++y) {
        const T* src = in + ((ch * g.nz + z) * g.ny + y) * g.nx;
        T* dst = p.data.data() + ((ch * p.pz + z + rz) * p.py + y + ry) * p.px + rx;
        std::copy(src, src + g.nx, dst);
      }
    }
  }
  return p;
}

// out[co] (+)= bias[co] + sum_ci sum_tap w(co, ci, tap) * in[ci][p + tap - r],
// with w(co, ci, tap) = weights[((co * c_in + ci) * taps + tap)].
template <typename T>
void direct_conv(const ConvGeometry& c, const PaddedInput<T>& in, const T* weights, const T* bias, T* out,
                 bool accumulate) {
  using Vec = typename VectorOf<T>::type;
  constexpr int lanes = kLanes<T>;
  const auto& g = c.grid;
  const std::int64_t vox = g.voxels();
  const std::int64_t taps = c.taps();
  const std::int64_t c_in = c.in_channels, c_out = c.out_channels;
  const std::int64_t blocks = (c_out + kBlockC - 1) / kBlockC;
  // Packed weights [block][ci][tap][kBlockC], zero beyond c_out.
  std::vector<T> packed(static_cast<std::size_t>(blocks * c_in * taps * kBlockC), T{0});
  for (std::int64_t co = 0; co < c_out; ++co) {
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
      for (std::int64_t t = 0; t < taps; ++t) {
        packed[static_cast<std::size_t>((((co / kBlockC) * c_in + ci) * taps + t) * kBlockC + co % kBlockC)] =
            weights[(co * c_in + ci) * taps + t];
      }
    }
  }
  const std::int64_t plane = in.py * in.px, chan = in.pz * plane;
  for (std::int64_t b = 0; b < blocks; ++b) {
    const std::int64_t co0 = b * kBlockC;
    const std::int64_t cb = std::min<std::int64_t>(kBlockC, c_out - co0);
    const T* wb = packed.data() + b * c_in * taps * kBlockC;
    for (std::int64_t z = 0; z < g.nz; ++z) {
      for (std::int64_t y = 0; y < g.ny; ++y) {
        for (std::int64_t x0 = 0; x0 < g.nx; x0 += lanes) {
          Vec acc[kBlockC] = {};
          for (std::int64_t ci = 0; ci < c_in; ++ci) {
            const T* base = in.data.data() + ci * chan + z * plane + y * in.px + x0;
            const T* wt = wb + ci * taps * kBlockC;
            for (std::int64_t dz = 0; dz < c.kz; ++dz) {
              for (std::int64_t dy = 0; dy < c.ky; ++dy) {
                const T* row = base + dz * plane + dy * in.px;
                for (std::int64_t dx = 0; dx < c.kx; ++dx, wt += kBlockC) {
                  Vec v;
                  std::memcpy(&v, row + dx, sizeof v);
                  for (int j = 0; j < kBlockC; ++j) acc[j] += wt[j] * v;
                }
              }
            }
          }
          const std::int64_t n = std::min<std::int64_t>(lanes, g.nx - x0);
          for (std::int64_t j = 0; j < cb; ++j) {
            T* o = out + (co0 + j) * vox + (z * g.ny + y) * g.nx + x0;
            const T bj = bias ? bias[co0 + j] : T{0};
            if (accumulate) {
              for (std::int64_t i = 0; i < n; ++i) o[i] += acc[j][i] + bj;
            } else {
              for (std::int64_t i = 0; i < n; ++i) o[i] = acc[j][i] + bj;
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const ConvGeometry& c, const T* in, const T* kernel, const T* bias, T* out) {
  direct_conv(c, pad_input(c, c.in_channels, in), kernel, bias, out, false);
}

// Kernel gradient with every tap of a CB-channel output block held in
// registers while the grid is walked once per (block, ci).
template <typename T, int KZ, int KY, int KX, int CB>
void tiled_kernel_grad(const ConvGeometry& c, const PaddedInput<T>& in, const T* go, std::int64_t nxr,
                       T* grad_kernel) {
  using Vec = typename VectorOf<T>::type;
  constexpr int lanes = kLanes<T>;
  constexpr int taps = KZ * KY * KX;
  const auto& g = c.grid;
  const std::int64_t c_in = c.in_channels, c_out = c.out_channels;
  const std::int64_t cstride = g.nz * g.ny * nxr;
  const std::int64_t plane = in.py * in.px, chan = in.pz * plane;
  for (std::int64_t co0 = 0; co0 < c_out; co0 += CB) {
    const std::int64_t cb = std::min<std::int64_t>(CB, c_out - co0);
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
      Vec acc[CB][taps] = {};
      for (std::int64_t z = 0; z < g.nz; ++z) {
        for (std::int64_t y = 0; y < g.ny; ++y) {
          const T* base = in.data.data() + ci * chan + z * plane + y * in.px;
          const T* grow = go + co0 * cstride + (z * g.ny + y) * nxr;
          // Row partials live in registers; folding them into acc once per
          // row keeps the compiler from spilling acc inside the x loop.
          Vec row[CB][taps] = {};
          for (std::int64_t x0 = 0; x0 < nxr; x0 += lanes) {
            Vec gv[CB];
            for (int j = 0; j < CB; ++j) std::memcpy(&gv[j], grow + j * cstride + x0, sizeof(Vec));
#pragma GCC unroll 27
            for (int t = 0; t < taps; ++t) {
              const int dz = t / (KY * KX), dy = (t / KX) % KY, dx = t % KX;
              Vec v;
              std::memcpy(&v, base + dz * plane + dy * in.px + x0 + dx, sizeof v);
              for (int j = 0; j < CB; ++j) row[j][t] += gv[j] * v;
            }
          }
          for (int j = 0; j < CB; ++j) {
            for (int t = 0; t < taps; ++t) acc[j][t] += row[j][t];
          }
        }
      }
      for (std::int64_t j = 0; j < cb; ++j) {
        for (int t = 0; t < taps; ++t) {
          Acc sum = 0;
          for (int i = 0; i < lanes; ++i) sum += static_cast<Acc>(acc[j][t][i]);
          grad_kernel[((co0 + j) * c_in + ci) * taps + t] += static_cast<T>(sum);
        }
      }
    }
  }
}

// grad_kernel[co][ci][tap] += sum_p grad_out[co][p] * in[ci][p + tap - r].
// Lane partials accumulate in T over the grid, then are summed in double.
template <typename T>
void direct_kernel_grad(const ConvGeometry& c, const PaddedInput<T>& in, const T* grad_out, T* grad_kernel) {
  using Vec = typename VectorOf<T>::type;
  constexpr int lanes = kLanes<T>;
  const auto& g = c.grid;
  const std::int64_t vox = g.voxels();
  const std::int64_t taps = c.taps();
  const std::int64_t c_in = c.in_channels, c_out = c.out_channels;
  const std::int64_t blocks = (c_out + kBlockC - 1) / kBlockC;
  // grad_out with rows zero-padded to whole vectors and channels to whole blocks.
  const std::int64_t nxr = (g.nx + lanes - 1) / lanes * lanes;
  const std::int64_t rows = g.nz * g.ny;
  std::vector<T> go(static_cast<std::size_t>(blocks * kBlockC * rows * nxr), T{0});
  for (std::int64_t co = 0; co < c_out; ++co) {
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* src = grad_out + co * vox + r * g.nx;
      std::copy(src, src + g.nx, go.data() + (co * rows + r) * nxr);
    }
  }
  if (c.kz == 1 && c.ky == 3 && c.kx == 3) {
    return tiled_kernel_grad<T, 1, 3, 3, 2>(c, in, go.data(), nxr, grad_kernel);
  }
  if (c.kz == 3 && c.ky == 3 && c.kx == 3) {
    return tiled_kernel_grad<T, 3, 3, 3, 1>(c, in, go.data(), nxr, grad_kernel);
  }
  if (c.kz == 1 && c.ky == 1 && c.kx == 3) {
    return tiled_kernel_grad<T, 1, 1, 3, 8>(c, in, go.data(), nxr, grad_kernel);
  }
  const std::int64_t plane = in.py * in.px, chan = in.pz * plane;
  const std::int64_t cstride = rows * nxr;
  for (std::int64_t b = 0; b < blocks; ++b) {
    const std::int64_t co0 = b * kBlockC;
    const std::int64_t cb = std::min<std::int64_t>(kBlockC, c_out - co0);
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
      std::int64_t t = 0;
      for (std::int64_t dz = 0; dz < c.kz; ++dz) {
        for (std::int64_t dy = 0; dy < c.ky; ++dy) {
          for (std::int64_t dx = 0; dx < c.kx; ++dx, ++t) {
            Vec acc[kBlockC] = {};
            for (std::int64_t z = 0; z < g.nz; ++z) {
              for (std::int64_t y = 0; y < g.ny; ++y) {
                const T* irow = in.data.data() + ci * chan + (z + dz) * plane + (y + dy) * in.px + dx;
                const T* grow = go.data() + co0 * cstride + (z * g.ny + y) * nxr;
                for (std::int64_t x0 = 0; x0 < nxr; x0 += lanes) {
                  Vec v;
                  std::memcpy(&v, irow + x0, sizeof v);
                  for (int j = 0; j < kBlockC; ++j) {
                    Vec gv;
                    std::memcpy(&gv, grow + j * cstride + x0, sizeof gv);
                    acc[j] += gv * v;
                  }
                }
              }
            }
            for (std::int64_t j = 0; j < cb; ++j) {
              Acc sum = 0;
              for (int i = 0; i < lanes; ++i) sum += static_cast<Acc>(acc[j][i]);
              grad_kernel[((co0 + j) * c_in + ci) * taps + t] += static_cast<T>(sum);
            }
          }
        }
      }
    }
  }
}

/// Any of grad_in / grad_kernel / grad_bias may be null when not needed.
/// Gradients are accumulated (+=) into the destinations.
template <typename T>
void conv_backward(const ConvGeometry& c, const T* in, const T* kernel, const T* grad_out,
                   T* grad_in, T* grad_kernel, T* grad_bias) {
  const std::int64_t vox = c.grid.voxels();
  const std::int64_t taps = c.taps();
  if (grad_bias) {
    for (std::int64_t co = 0; co < c.out_channels; ++co) {
      Acc s = 0;
      const T* go = grad_out + co * vox;
      for (std::int64_t i = 0; i < vox; ++i) s += go[i];
      grad_bias[co] += static_cast<T>(s);
    }
  }
  if (grad_kernel) direct_kernel_grad(c, pad_input(c, c.in_channels, in), grad_out, grad_kernel);
  if (grad_in) {
    // Correlation of grad_out with the channel-transposed, flipped kernel.
    std::vector<T> flipped(static_cast<std::size_t>(c.out_channels * c.in_channels * taps));
    for (std::int64_t co = 0; co < c.out_channels; ++co) {
      for (std::int64_t ci = 0; ci < c.in_channels; ++ci) {
        for (std::int64_t t = 0; t < taps; ++t) {
          flipped[static_cast<std::size_t>((ci * c.out_channels + co) * taps + (taps - 1 - t))] =
              kernel[(co * c.in_channels + ci) * taps + t];
        }
      }
    }
    ConvGeometry tc = c;
    tc.in_channels = c.out_channels;
    tc.out_channels = c.in_channels;
    direct_conv(tc, pad_input(tc, tc.in_channels, grad_out), flipped.data(), static_cast<const T*>(nullptr),
                grad_in, true);
  }
}

/// Output grid of a factor-2 resample of the spatial axes of `g`.
inline Grid3 scaled_grid(const Grid3& g, bool halve) {
  Grid3 out = g;
  for (int d = 0; d < g.rank; ++d) {
    const int a = g.canonical(d);
    std::int64_t& e = a == 0 ? out.nz : a == 1 ? out.ny : out.nx;
    e = halve ? e / 2 : e * 2;
  }
  return out;
}

/// `argmax` receives, per output element, the flat input index it came from.
template <typename T>
void maxpool2_forward(std::int64_t channels, const Grid3& in_grid, const T* in, T* out,
                      std::int64_t* argmax) {
  const Grid3 og = scaled_grid(in_grid, true);
  const std::int64_t fz = in_grid.nz / og.nz, fy = in_grid.ny / og.ny, fx = in_grid.nx / og.nx;
  const std::int64_t ivox = in_grid.voxels(), ovox = og.voxels();
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t z = 0; z < og.nz; ++z) {
      for (std::int64_t y = 0; y < og.ny; ++y) {
        for (std::int64_t x = 0; x < og.nx; ++x) {
          std::int64_t best = -1;
          T best_v{};
          for (std::int64_t a = 0; a < fz; ++a) {
            for (std::int64_t b = 0; b < fy; ++b) {
              for (std::int64_t e = 0; e < fx; ++e) {
                const std::int64_t idx =
                    c * ivox + ((z * fz + a) * in_grid.ny + (y * fy + b)) * in_grid.nx + (x * fx + e);
                if (best < 0 || in[idx] > best_v) {
                  best = idx;
                  best_v = in[idx];
                }
              }
            }
          }
          const std::int64_t o = c * ovox + (z * og.ny + y) * og.nx + x;
          out[o] = best_v;
          argmax[o] = best;
        }
      }
    }
  }
}

template <typename T>
void upsample2_forward(std::int64_t channels, const Grid3& in_grid, const T* in, T* out) {
  const Grid3 og = scaled_grid(in_grid, false);
  const std::int64_t fz = og.nz / in_grid.nz, fy = og.ny / in_grid.ny, fx = og.nx / in_grid.nx;
  const std::int64_t ivox = in_grid.voxels(), ovox = og.voxels();
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t z = 0; z < og.nz; ++z) {
      for (std::int64_t y = 0; y < og.ny; ++y) {
        const T* irow = in + c * ivox + ((z / fz) * in_grid.ny + y / fy) * in_grid.nx;
        T* orow = out + c * ovox + (z * og.ny + y) * og.nx;
        if (fx == 2) {
          for (std::int64_t x = 0; x < in_grid.nx; ++x) orow[2 * x] = orow[2 * x + 1] = irow[x];
        } else {
          std::copy(irow, irow + og.nx, orow);
        }
      }
    }
  }
}

template <typename T>
void upsample2_backward(std::int64_t channels, const Grid3& in_grid, const T* grad_out, T* grad_in) {
  const Grid3 og = scaled_grid(in_grid, false);
  const std::int64_t fz = og.nz / in_grid.nz, fy = og.ny / in_grid.ny, fx = og.nx / in_grid.nx;
  const std::int64_t ivox = in_grid.voxels(), ovox = og.voxels();
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t z = 0; z < og.nz; ++z) {
      for (std::int64_t y = 0; y < og.ny; ++y) {
        T* irow = grad_in + c * ivox + ((z / fz) * in_grid.ny + y / fy) * in_grid.nx;
        const T* orow = grad_out + c * ovox + (z * og.ny + y) * og.nx;
        if (fx == 2) {
          for (std::int64_t x = 0; x < in_grid.nx; ++x) irow[x] += orow[2 * x] + orow[2 * x + 1];
        } else {
          for (std::int64_t x = 0; x < og.nx; ++x) irow[x] += orow[x];
        }
      }
    }
  }
}

// Sliding window sum of odd width `window` along every spatial axis of `g`,
// zero outside the grid. In-place on `buf` (one channel).
inline void box_sum(const Grid3& g, int window, std::vector<Acc>& buf) {
  const std::int64_t r = window / 2;
  std::vector<Acc> line;
  for (int d = 0; d < g.rank; ++d) {
    const int a = g.canonical(d);
    const std::int64_t n = g.extent(a);
    const std::int64_t stride = a == 2 ? 1 : a == 1 ? g.nx : g.nx * g.ny;
    line.resize(static_cast<std::size_t>(n));
    const std::int64_t outer = g.voxels() / n;
    for (std::int64_t o = 0; o < outer; ++o) {
      // Decompose the line start: lines run along axis `a`.
      std::int64_t base;
      if (a == 2) {
        base = o * g.nx;
      } else if (a == 1) {
        base = (o / g.nx) * g.ny * g.nx + (o % g.nx);
      } else {
        base = o;
      }
      for (std::int64_t i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = buf[static_cast<std::size_t>(base + i * stride)];
      for (std::int64_t i = 0; i < n; ++i) {
        Acc s = 0;
        const std::int64_t j0 = std::max<std::int64_t>(0, i - r), j1 = std::min(n - 1, i + r);
        for (std::int64_t j = j0; j <= j1; ++j) s += line[static_cast<std::size_t>(j)];
        buf[static_cast<std::size_t>(base + i * stride)] = s;
      }
    }
  }
}

// Window sums treat out-of-grid voxels as absent: they add nothing to the
// sums and are not counted in `count`, so local means use in-grid voxels.
struct NccSums {
  std::vector<Acc> si, sj, sii, sjj, sij, count;
};

template <typename T>
NccSums ncc_window_sums(const Grid3& g, int window, const T* a, const T* b) {
  const auto vox = static_cast<std::size_t>(g.voxels());
  NccSums s;
  s.si.resize(vox);
  s.sj.resize(vox);
  s.sii.resize(vox);
  s.sjj.resize(vox);
  s.sij.resize(vox);
  s.count.assign(vox, 1.0);
  for (std::size_t i = 0; i < vox; ++i) {
    const Acc x = a[i], y = b[i];
    s.si[i] = x;
    s.sj[i] = y;
    s.sii[i] = x * x;
    s.sjj[i] = y * y;
    s.sij[i] = x * y;
  }
  box_sum(g, window, s.si);
  box_sum(g, window, s.sj);
  box_sum(g, window, s.sii);
  box_sum(g, window, s.sjj);
  box_sum(g, window, s.sij);
  box_sum(g, window, s.count);
  return s;
}

/// Negated mean of the squared local correlation coefficient.
template <typename T>
Acc ncc_forward(std::int64_t channels, const Grid3& g, int window, const T* a, const T* b) {
  const std::int64_t vox = g.voxels();
  Acc total = 0;
  for (std::int64_t c = 0; c < channels; ++c) {
    const NccSums s = ncc_window_sums(g, window, a + c * vox, b + c * vox);
    for (std::size_t i = 0; i < static_cast<std::size_t>(vox); ++i) {
      const Acc n = s.count[i];
      const Acc cross = s.sij[i] - s.si[i] * s.sj[i] / n;
      const Acc vi = s.sii[i] - s.si[i] * s.si[i] / n;
      const Acc vj = s.sjj[i] - s.sj[i] * s.sj[i] / n;
      total += cross * cross / (vi * vj + kNccEpsilon);
    }
  }
  return -total / static_cast<Acc>(channels * vox);
}

template <typename T>
void ncc_backward(std::int64_t channels, const Grid3& g, int window, const T* a, const T* b,
                  Acc upstream, T* grad_a, T* grad_b) {
  const std::int64_t vox = g.voxels();
  const auto uvox = static_cast<std::size_t>(vox);
  const Acc scale = -upstream / static_cast<Acc>(channels * vox);
  std::vector<Acc> d_si(uvox), d_sj(uvox), d_sii(uvox), d_sjj(uvox), d_sij(uvox);
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* x = a + c * vox;
    const T* y = b + c * vox;
    const NccSums s = ncc_window_sums(g, window, x, y);
    for (std::size_t i = 0; i < uvox; ++i) {
      const Acc n = s.count[i];
      const Acc cross = s.sij[i] - s.si[i] * s.sj[i] / n;
      const Acc vi = s.sii[i] - s.si[i] * s.si[i] / n;
      const Acc vj = s.sjj[i] - s.sj[i] * s.sj[i] / n;
      const Acc den = vi * vj + kNccEpsilon;
      const Acc d_cross = 2 * cross / den;
      const Acc d_vi = -cross * cross * vj / (den * den);
      const Acc d_vj = -cross * cross * vi / (den * den);
      d_sij[i] = d_cross;
      d_sii[i] = d_vi;
      d_sjj[i] = d_vj;
      d_si[i] = -d_cross * s.sj[i] / n - 2 * d_vi * s.si[i] / n;
      d_sj[i] = -d_cross * s.si[i] / n - 2 * d_vj * s.sj[i] / n;
    }
    box_sum(g, window, d_si);
    box_sum(g, window, d_sj);
    box_sum(g, window, d_sii);
    box_sum(g, window, d_sjj);
    box_sum(g, window, d_sij);
    for (std::size_t i = 0; i < uvox; ++i) {
      const Acc xi = x[i], yi = y[i];
      if (grad_a) grad_a[c * vox + static_cast<std::int64_t>(i)] += static_cast<T>(scale * (d_si[i] + 2 * xi * d_sii[i] + yi * d_sij[i]));
      if (grad_b) grad_b[c * vox + static_cast<std::int64_t>(i)] += static_cast<T>(scale * (d_sj[i] + 2 * yi * d_sjj[i] + xi * d_sij[i]));
    }
  }
}

/// Calls fn(p, q) for each voxel p that has a forward neighbour q along
/// spatial axis `d`.
template <typename Fn>
void for_each_forward_pair(const Grid3& g, int d, Fn&& fn) {
  const int a = g.canonical(d);
  const std::int64_t stride = a == 2 ? 1 : a == 1 ? g.nx : g.nx * g.ny;
  for (std::int64_t z = 0; z < g.nz; ++z) {
    for (std::int64_t y = 0; y < g.ny; ++y) {
      for (std::int64_t x = 0; x < g.nx; ++x) {
        const std::int64_t coord = a == 0 ? z : a == 1 ? y : x;
        if (coord + 1 >= g.extent(a)) continue;
        const std::int64_t p = (z * g.ny + y) * g.nx + x;
        fn(p, p + stride);
      }
    }
  }
}

/// Mean over components, voxels and axes of weight(p) * (f(p+e) - f(p))^2.
/// `weight` may be null (all ones); it has one value per voxel.
template <typename T>
Acc gradmag_forward(std::int64_t components, const Grid3& g, const T* field, const T* weight) {
  const std::int64_t vox = g.voxels();
  Acc total = 0;
  for (std::int64_t c = 0; c < components; ++c) {
    const T* f = field + c * vox;
    for (int d = 0; d < g.rank; ++d) {
      for_each_forward_pair(g, d, [&](std::int64_t p, std::int64_t q) {
        const Acc diff = static_cast<Acc>(f[q]) - static_cast<Acc>(f[p]);
        total += (weight ? static_cast<Acc>(weight[p]) : 1.0) * diff * diff;
      });
    }
  }
  return total / static_cast<Acc>(components * vox * g.rank);
}

template <typename T>
void gradmag_backward(std::int64_t components, const Grid3& g, const T* field, const T* weight,
                      Acc upstream, T* grad_field) {
  const std::int64_t vox = g.voxels();
  const Acc scale = 2 * upstream / static_cast<Acc>(components * vox * g.rank);
  for (std::int64_t c = 0; c < components; ++c) {
    const T* f = field + c * vox;
    T* gf = grad_field + c * vox;
    for (int d = 0; d < g.rank; ++d) {
      for_each_forward_pair(g, d, [&](std::int64_t p, std::int64_t q) {
        const Acc w = weight ? static_cast<Acc>(weight[p]) : 1.0;
        const Acc v = scale * w * (static_cast<Acc>(f[q]) - static_cast<Acc>(f[p]));
        gf[q] += static_cast<T>(v);
        gf[p] -= static_cast<T>(v);
      });
    }
  }
}

// Per-axis linear sampling description: clamped sample position split into
// lower/upper neighbours and the fractional weight of the upper one.
struct AxisSample {
  std::int64_t lo = 0, hi = 0;
  double frac = 0;
  bool inside = true;  // false when clamping was active (zero derivative)
};

inline AxisSample sample_axis(double s, std::int64_t n) {
  AxisSample out;
  if (n == 1) {
    out.inside = false;
    return out;
  }
  const double hi_lim = static_cast<double>(n - 1);
  if (s <= 0) {
    out.inside = s == 0;
    s = 0;
  } else if (s >= hi_lim) {
    out.inside = false;
    s = hi_lim;
  }
  const double fl = std::floor(s);
  out.lo = static_cast<std::int64_t>(fl);
  out.hi = std::min(out.lo + 1, n - 1);
  out.frac = s - fl;
  return out;
}

// Shared per-voxel sampling geometry for warp_linear forward/backward.
struct VoxelSample {
  AxisSample axis[3];
};

template <typename T>
VoxelSample voxel_sample(const Grid3& g, const T* field, std::int64_t p, std::int64_t z,
                         std::int64_t y, std::int64_t x) {
  const std::int64_t vox = g.voxels();
  double pos[3] = {static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
  for (int d = 0; d < g.rank; ++d) pos[g.canonical(d)] += static_cast<double>(field[d * vox + p]);
  VoxelSample s;
  for (int a = 0; a < 3; ++a) s.axis[a] = sample_axis(pos[a], g.extent(a));
  return s;
}

/// Multilinear sampling of `image` ([channels, grid]) at p + u(p), clamped.
template <typename T>
void warp_linear_forward(std::int64_t channels, const Grid3& g, const T* image, const T* field, T* out) {
  const std::int64_t vox = g.voxels();
  for (std::int64_t z = 0; z < g.nz; ++z) {
    for (std::int64_t y = 0; y < g.ny; ++y) {
      for (std::int64_t x = 0; x < g.nx; ++x) {
        const std::int64_t p = (z * g.ny + y) * g.nx + x;
        const VoxelSample s = voxel_sample(g, field, p, z, y, x);
        for (std::int64_t c = 0; c < channels; ++c) {
          const T* im = image + c * vox;
          double v = 0;
          for (int corner = 0; corner < 8; ++corner) {
            double w = 1;
            std::int64_t idx[3];
            for (int a = 0; a < 3; ++a) {
              const bool up = (corner >> (2 - a)) & 1;
              const auto& ax = s.axis[a];
              w *= up ? ax.frac : 1.0 - ax.frac;
              idx[a] = up ? ax.hi : ax.lo;
            }
            if (w == 0) continue;
            v += w * static_cast<double>(im[(idx[0] * g.ny + idx[1]) * g.nx + idx[2]]);
          }
          out[c * vox + p] = static_cast<T>(v);
        }
      }
    }
  }
}

template <typename T>
void warp_linear_backward(std::int64_t channels, const Grid3& g, const T* image, const T* field,
                          const T* grad_out, T* grad_image, T* grad_field) {
  const std::int64_t vox = g.voxels();
  for (std::int64_t z = 0; z < g.nz; ++z) {
    for (std::int64_t y = 0; y < g.ny; ++y) {
      for (std::int64_t x = 0; x < g.nx; ++x) {
        const std::int64_t p = (z * g.ny + y) * g.nx + x;
        const VoxelSample s = voxel_sample(g, field, p, z, y, x);
        double dpos[3] = {0, 0, 0};
        for (std::int64_t c = 0; c < channels; ++c) {
          const T* im = image + c * vox;
          const double go = static_cast<double>(grad_out[c * vox + p]);
          for (int corner = 0; corner < 8; ++corner) {
            double wa[3];
            std::int64_t idx[3];
            bool up[3];
            for (int a = 0; a < 3; ++a) {
              up[a] = (corner >> (2 - a)) & 1;
              const auto& ax = s.axis[a];
              wa[a] = up[a] ? ax.frac : 1.0 - ax.frac;
              idx[a] = up[a] ? ax.hi : ax.lo;
            }
            const std::int64_t q = (idx[0] * g.ny + idx[1]) * g.nx + idx[2];
            const double w = wa[0] * wa[1] * wa[2];
            if (grad_image && w != 0) grad_image[c * vox + q] += static_cast<T>(go * w);
            if (grad_field) {
              const double v = static_cast<double>(im[q]) * go;
              for (int a = 0; a < 3; ++a) {
                if (!s.axis[a].inside) continue;
                double dw = up[a] ? 1.0 : -1.0;
                for (int b = 0; b < 3; ++b) {
                  if (b != a) dw *= wa[b];
                }
                dpos[a] += dw * v;
              }
            }
          }
        }
        if (grad_field) {
          for (int d = 0; d < g.rank; ++d) grad_field[d * vox + p] += static_cast<T>(dpos[g.canonical(d)]);
        }
      }
    }
  }
}

/// Mean per-voxel cross-entropy of softmax(logits) against integer labels.
template <typename T>
Acc cross_entropy_forward(std::int64_t classes, std::int64_t vox, const T* logits,
                          const std::int32_t* labels) {
  Acc total = 0;
  for (std::int64_t p = 0; p < vox; ++p) {
    double mx = logits[p];
    for (std::int64_t k = 1; k < classes; ++k) mx = std::max(mx, static_cast<double>(logits[k * vox + p]));
    double z = 0;
    for (std::int64_t k = 0; k < classes; ++k) z += std::exp(static_cast<double>(logits[k * vox + p]) - mx);
    total += std::log(z) + mx - static_cast<double>(logits[labels[p] * vox + p]);
  }
  return total / static_cast<Acc>(vox);
}

template <typename T>
void cross_entropy_backward(std::int64_t classes, std::int64_t vox, const T* logits,
                            const std::int32_t* labels, Acc upstream, T* grad_logits) {
  const Acc scale = upstream / static_cast<Acc>(vox);
  for (std::int64_t p = 0; p < vox; ++p) {
    double mx = logits[p];
    for (std::int64_t k = 1; k < classes; ++k) mx = std::max(mx, static_cast<double>(logits[k * vox + p]));
    double z = 0;
    for (std::int64_t k = 0; k < classes; ++k) z += std::exp(static_cast<double>(logits[k * vox + p]) - mx);
    for (std::int64_t k = 0; k < classes; ++k) {
      const double prob = std::exp(static_cast<double>(logits[k * vox + p]) - mx) / z;
      const double target = labels[p] == k ? 1.0 : 0.0;
      grad_logits[k * vox + p] += static_cast<T>(scale * (prob - target));
    }
  }
}

}  // namespace augmorph::diffcore::kernels
