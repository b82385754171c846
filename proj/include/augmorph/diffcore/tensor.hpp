#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace augmorph::diffcore {

using Shape = std::vector<std::int64_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array. `T` is float for production paths; the double
/// instantiation exists for gradient probing.
template <typename T>
struct BasicTensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;

  BasicTensor() = default;

  explicit BasicTensor(Shape s, T fill = T(0)) : shape(std::move(s)) {
    validate_extents();
    data.assign(static_cast<std::size_t>(numel(shape)), fill);
  }

  BasicTensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    validate_extents();
    if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
  }

  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] std::size_t rank() const { return shape.size(); }
  [[nodiscard]] std::int64_t dim(std::size_t axis) const { return shape.at(axis); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  template <typename U>
  [[nodiscard]] BasicTensor<U> cast() const {
    BasicTensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    out.requires_grad = requires_grad;
    return out;
  }

  /// Same data, new shape of equal element count.
  [[nodiscard]] BasicTensor reshaped(Shape s) const {
    return BasicTensor(std::move(s), data);
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape == b.shape && a.data == b.data;
  }

 private:
  void validate_extents() const {
    for (auto e : shape) {
      if (e <= 0) throw ShapeError("non-positive extent in shape " + to_string(shape));
    }
  }
};

using Tensor = BasicTensor<float>;

/// Spatial extents canonicalised to (z, y, x); leading axes absent from the
/// original rank are 1. Rank 1..3 is supported.
struct Grid3 {
  std::int64_t nz = 1, ny = 1, nx = 1;
  int rank = 0;

  [[nodiscard]] std::int64_t voxels() const { return nz * ny * nx; }
  [[nodiscard]] std::int64_t extent(int canonical_axis) const {
    return canonical_axis == 0 ? nz : canonical_axis == 1 ? ny : nx;
  }
  /// Canonical axis index (0..2) of spatial axis `d` of the original rank.
  [[nodiscard]] int canonical(int d) const { return 3 - rank + d; }
};

Grid3 make_grid(const Shape& spatial);

/// Grid of a [C, spatial...] tensor.
Grid3 channel_grid(const Shape& shape);

}  // namespace augmorph::diffcore
