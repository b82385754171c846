#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "augmorph/volume.hpp"

namespace augmorph::dataio {

/// Paths are stored relative to the manifest's directory.
struct DatasetManifest {
  std::filesystem::path root;
  std::string atlas_image;
  std::string atlas_labels;
  std::vector<std::string> unlabeled;
  /// Ground truth of the unlabeled pool; read only by the supervised bound.
  std::vector<std::string> unlabeled_labels;
  std::vector<std::string> val_images, val_labels;
  std::vector<std::string> test_images, test_labels;
  std::vector<std::string> label_names;
  /// Generator provenance (parameters and per-subject seeds); may be empty.
  nlohmann::json provenance = nlohmann::json::object();

  void validate() const;
  [[nodiscard]] std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Everything a pipeline run needs, loaded into memory.
struct Dataset {
  Volume atlas;
  LabelMap atlas_labels;
  std::vector<Volume> unlabeled;
  std::vector<LabelMap> unlabeled_labels;
  std::vector<Volume> val_images;
  std::vector<LabelMap> val_labels;
  std::vector<Volume> test_images;
  std::vector<LabelMap> test_labels;
  std::vector<std::string> label_names;
  std::vector<std::string> test_ids;
};

Dataset load_dataset(const DatasetManifest& m);

}  // namespace augmorph::dataio
