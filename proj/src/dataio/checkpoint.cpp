#include "augmorph/dataio/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <variant>

#include "augmorph/dataio/vtf.hpp"

namespace augmorph::dataio {

namespace {
constexpr char kMagic[4] = {'V', 'T', 'F', 'C'};
constexpr int kVersion = 1;
}  // namespace

const diffcore::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw DataError("checkpoint '" + kind + "' has no tensor named " + name);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = "vtf-checkpoint";
  header["version"] = kVersion;
  header["kind"] = ckpt.kind;
  header["hyperparameters"] = ckpt.hyperparameters;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape}, {"dtype", "float32"}});
  }
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint " + path.string() + " for writing");
  os.write(kMagic, 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  const unsigned char le[4] = {static_cast<unsigned char>(len), static_cast<unsigned char>(len >> 8),
                               static_cast<unsigned char>(len >> 16), static_cast<unsigned char>(len >> 24)};
  os.write(reinterpret_cast<const char*>(le), 4);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ckpt.tensors) write_vtf(os, t);
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  unsigned char le[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw VtfError(VtfErrorKind::bad_magic, "not a checkpoint file: " + path.string());
  }
  is.read(reinterpret_cast<char*>(le), 4);
  if (is.gcount() != 4) throw VtfError(VtfErrorKind::truncated, "checkpoint header truncated: " + path.string());
  const std::uint32_t len = le[0] | (le[1] << 8) | (le[2] << 16) | (static_cast<std::uint32_t>(le[3]) << 24);
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (static_cast<std::uint32_t>(is.gcount()) != len) {
    throw VtfError(VtfErrorKind::truncated, "checkpoint header truncated: " + path.string());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw VtfError(VtfErrorKind::bad_header, "checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != "vtf-checkpoint" || header.value("version", 0) != kVersion) {
    throw VtfError(VtfErrorKind::bad_header, "unsupported checkpoint format in " + path.string());
  }
  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.hyperparameters = header.at("hyperparameters");
  for (const auto& entry : header.at("tensors")) {
    auto rec = read_vtf(is);
    auto* t = std::get_if<diffcore::Tensor>(&rec);
    if (!t) throw VtfError(VtfErrorKind::bad_header, "checkpoint tensor is not float32");
    if (t->shape != entry.at("shape").get<diffcore::Shape>()) {
      throw VtfError(VtfErrorKind::bad_header, "checkpoint tensor " + entry.at("name").get<std::string>() +
                                                   " does not match its declared shape");
    }
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(*t));
  }
  return ckpt;
}

}  // namespace augmorph::dataio
