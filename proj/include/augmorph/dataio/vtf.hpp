#pragma once

// VTF1 tensor file:
//   bytes 0..3   magic "VTF1"
//   byte  4      dtype (0 = float32, 1 = int32)
//   byte  5      ndim
//   bytes 6..7   reserved, zero
//   ndim x u32   extents, little-endian
//   payload      row-major little-endian elements

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <variant>

#include "augmorph/dataio/errors.hpp"
#include "augmorph/volume.hpp"

namespace augmorph::dataio {

enum class VtfDtype : std::uint8_t { float32 = 0, int32 = 1 };

using VtfTensor = std::variant<diffcore::Tensor, LabelMap>;

void write_vtf(std::ostream& os, const diffcore::Tensor& t);
void write_vtf(std::ostream& os, const LabelMap& t);
VtfTensor read_vtf(std::istream& is);

void write_vtf(const std::filesystem::path& path, const diffcore::Tensor& t);
void write_vtf(const std::filesystem::path& path, const LabelMap& t);
VtfTensor read_vtf(const std::filesystem::path& path);

/// Typed readers; a dtype other than the requested one is a bad_header error.
diffcore::Tensor read_float_vtf(const std::filesystem::path& path);
LabelMap read_label_vtf(const std::filesystem::path& path);

}  // namespace augmorph::dataio
