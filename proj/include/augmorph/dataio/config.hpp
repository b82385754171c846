#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "augmorph/augment/augment.hpp"
#include "augmorph/dataio/toygen.hpp"

namespace augmorph::dataio {

struct ToyConfig {
  ToyGenParams params;
  std::size_t n_train = 21;  // the atlas plus 20 unlabeled subjects
  std::size_t n_val = 5;
  std::size_t n_test = 10;
};

struct SpatialConfig {
  std::vector<int> widths{16, 32, 32};
  double lambda_s = 1.0;
  int ncc_window = 9;
  int steps = 2000;
  double learning_rate = 5e-4;
};

struct AppearanceConfig {
  std::vector<int> widths{16, 32, 32};
  double lambda_a = 0.02;
  int steps = 2000;
  double learning_rate = 5e-4;
};

struct SegmenterConfig {
  std::vector<int> widths{8, 16, 16};
  int max_epochs = 20;
  int steps_per_epoch = 20;
  int batch_size = 16;
  int patience = 5;
  double learning_rate = 5e-4;
};

/// Everything a pipeline run depends on. The toy generator seed is the
/// master seed; every other stream is derived from it.
struct PipelineConfig {
  std::uint64_t seed = 42;
  int threads = 1;
  ToyConfig toy;
  SpatialConfig spatial;
  AppearanceConfig appearance;
  SegmenterConfig segmenter;
  augment::RandAugParams rand_aug;
  std::vector<std::string> methods;  // empty means all_methods()
  std::string baseline = "sas";

  /// Throws std::invalid_argument on out-of-range settings.
  void validate() const;
};

/// Report rows in table order.
std::vector<std::string> all_methods();

nlohmann::json to_json(const PipelineConfig& c);
/// Keys present in `j` override `base`; unknown keys are a DataError.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});
PipelineConfig read_config(const std::filesystem::path& path, PipelineConfig base = {});

}  // namespace augmorph::dataio
