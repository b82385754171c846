#include "augmorph/dataio/vtf.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

namespace augmorph::dataio {

namespace {

constexpr char kMagic[4] = {'V', 'T', 'F', '1'};
constexpr std::size_t kMaxRank = 255;

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
  }
  return v;
}

template <typename E>
void write_payload(std::ostream& os, const std::vector<E>& data) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(E)));
  } else {
    for (E v : data) {
      auto le = to_little(std::bit_cast<std::uint32_t>(v));
      os.write(reinterpret_cast<const char*>(&le), sizeof(le));
    }
  }
}

template <typename E>
void write_record(std::ostream& os, VtfDtype dtype, const diffcore::Shape& shape, const std::vector<E>& data) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw VtfError(VtfErrorKind::bad_header, "vtf: rank " + std::to_string(shape.size()) + " not representable");
  }
  os.write(kMagic, 4);
  const unsigned char head[4] = {static_cast<unsigned char>(dtype), static_cast<unsigned char>(shape.size()), 0, 0};
  os.write(reinterpret_cast<const char*>(head), 4);
  for (auto e : shape) {
    if (e <= 0 || e > std::numeric_limits<std::uint32_t>::max()) {
      throw VtfError(VtfErrorKind::bad_header, "vtf: extent " + std::to_string(e) + " not representable");
    }
    const auto le = to_little(static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(&le), sizeof(le));
  }
  write_payload(os, data);
  if (!os) throw VtfError(VtfErrorKind::io, "vtf: write failed");
}

template <typename E>
std::vector<E> read_payload(std::istream& is, std::int64_t count) {
  std::vector<E> data(static_cast<std::size_t>(count));
  const auto bytes = static_cast<std::streamsize>(data.size() * sizeof(E));
  is.read(reinterpret_cast<char*>(data.data()), bytes);
  if (is.gcount() != bytes) {
    throw VtfError(VtfErrorKind::truncated, "vtf: payload truncated, expected " + std::to_string(bytes) +
                                                " bytes, got " + std::to_string(is.gcount()));
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : data) v = std::bit_cast<E>(to_little(std::bit_cast<std::uint32_t>(v)));
  }
  return data;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw VtfError(VtfErrorKind::io, "vtf: cannot open " + path.string() + " for writing");
  return os;
}

}  // namespace

void write_vtf(std::ostream& os, const diffcore::Tensor& t) {
  for (float v : t.data) {
    if (!std::isfinite(v)) throw VtfError(VtfErrorKind::bad_header, "vtf: refusing to write non-finite data");
  }
  write_record(os, VtfDtype::float32, t.shape, t.data);
}

void write_vtf(std::ostream& os, const LabelMap& t) { write_record(os, VtfDtype::int32, t.shape, t.data); }

VtfTensor read_vtf(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4) throw VtfError(VtfErrorKind::truncated, "vtf: file shorter than its magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw VtfError(VtfErrorKind::bad_magic, "vtf: bad magic");
  unsigned char head[4];
  is.read(reinterpret_cast<char*>(head), 4);
  if (is.gcount() != 4) throw VtfError(VtfErrorKind::truncated, "vtf: header truncated");
  if (head[0] > 1) throw VtfError(VtfErrorKind::unknown_dtype, "vtf: unknown dtype " + std::to_string(head[0]));
  const std::size_t ndim = head[1];
  if (ndim == 0) throw VtfError(VtfErrorKind::bad_header, "vtf: zero-rank tensor");
  if (head[2] != 0 || head[3] != 0) throw VtfError(VtfErrorKind::bad_header, "vtf: reserved bytes are not zero");
  diffcore::Shape shape(ndim);
  for (auto& e : shape) {
    std::uint32_t le = 0;
    is.read(reinterpret_cast<char*>(&le), sizeof(le));
    if (is.gcount() != sizeof(le)) throw VtfError(VtfErrorKind::truncated, "vtf: extents truncated");
    e = to_little(le);
    if (e == 0) throw VtfError(VtfErrorKind::bad_header, "vtf: zero extent");
  }
  const std::int64_t count = diffcore::numel(shape);
  if (static_cast<VtfDtype>(head[0]) == VtfDtype::float32) {
    return diffcore::Tensor(std::move(shape), read_payload<float>(is, count));
  }
  return LabelMap(std::move(shape), read_payload<std::int32_t>(is, count));
}

void write_vtf(const std::filesystem::path& path, const diffcore::Tensor& t) {
  auto os = open_out(path);
  write_vtf(os, t);
}

void write_vtf(const std::filesystem::path& path, const LabelMap& t) {
  auto os = open_out(path);
  write_vtf(os, t);
}

VtfTensor read_vtf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw VtfError(VtfErrorKind::io, "vtf: cannot open " + path.string());
  try {
    return read_vtf(is);
  } catch (const VtfError& e) {
    throw VtfError(e.kind(), std::string(e.what()) + " (" + path.string() + ")");
  }
}

diffcore::Tensor read_float_vtf(const std::filesystem::path& path) {
  auto v = read_vtf(path);
  if (auto* t = std::get_if<diffcore::Tensor>(&v)) return std::move(*t);
  throw VtfError(VtfErrorKind::bad_header, "vtf: expected float32 data in " + path.string());
}

LabelMap read_label_vtf(const std::filesystem::path& path) {
  auto v = read_vtf(path);
  if (auto* t = std::get_if<LabelMap>(&v)) return std::move(*t);
  throw VtfError(VtfErrorKind::bad_header, "vtf: expected int32 data in " + path.string());
}

}  // namespace augmorph::dataio
