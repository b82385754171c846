#pragma once

// Checkpoint container: magic "VTFC", a little-endian u32 byte length, a
// JSON header {"format", "version", "kind", "hyperparameters", "tensors":
// [{"name", "shape", "dtype"}]}, then one VTF1 record per listed tensor.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "augmorph/diffcore/tensor.hpp"

namespace augmorph::dataio {

struct Checkpoint {
  std::string kind;
  nlohmann::json hyperparameters = nlohmann::json::object();
  std::vector<std::pair<std::string, diffcore::Tensor>> tensors;

  [[nodiscard]] const diffcore::Tensor& tensor(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace augmorph::dataio
