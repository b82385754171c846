#include "augmorph/diffcore/tensor.hpp"

#include <sstream>

namespace augmorph::diffcore {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Grid3 make_grid(const Shape& spatial) {
  if (spatial.empty() || spatial.size() > 3) {
    throw ShapeError("spatial rank must be 1..3, got shape " + to_string(spatial));
  }
  Grid3 g;
  g.rank = static_cast<int>(spatial.size());
  std::int64_t ext[3] = {1, 1, 1};
  for (int d = 0; d < g.rank; ++d) ext[g.canonical(d)] = spatial[static_cast<std::size_t>(d)];
  g.nz = ext[0];
  g.ny = ext[1];
  g.nx = ext[2];
  return g;
}

Grid3 channel_grid(const Shape& shape) {
  if (shape.size() < 2) {
    throw ShapeError("expected [C, spatial...] tensor, got shape " + to_string(shape));
  }
  return make_grid(Shape(shape.begin() + 1, shape.end()));
}

}  // namespace augmorph::diffcore
