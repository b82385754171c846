#pragma once

#include <cstdint>

#include "augmorph/diffcore/graph.hpp"
#include "augmorph/diffcore/tensor.hpp"

namespace augmorph {

/// Scalar intensity grid; shape holds spatial extents only.
using Volume = diffcore::Tensor;
/// Integer label grid aligned with a Volume.
using LabelMap = diffcore::LabelTensor;

/// View a volume as a single-channel [1, spatial...] engine tensor.
inline diffcore::Tensor with_channel(const Volume& v) {
  diffcore::Shape s{1};
  s.insert(s.end(), v.shape.begin(), v.shape.end());
  return diffcore::Tensor(std::move(s), v.data);
}

/// Inverse of with_channel for a single-channel tensor.
inline Volume drop_channel(const diffcore::Tensor& t) {
  if (t.rank() < 2 || t.dim(0) != 1) {
    throw diffcore::ShapeError("drop_channel: expected [1, spatial...], got " + diffcore::to_string(t.shape));
  }
  return Volume(diffcore::Shape(t.shape.begin() + 1, t.shape.end()), t.data);
}

}  // namespace augmorph
