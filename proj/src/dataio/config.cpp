#include "augmorph/dataio/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include "augmorph/dataio/errors.hpp"

namespace augmorph::dataio {

namespace {

using nlohmann::json;

// Reads `key` into `out` when present; type mismatches name the key.
template <typename T>
void read(const json& j, const char* section, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw DataError(std::string("config: ") + section + "." + key + " has the wrong type");
  }
}

void reject_unknown(const json& j, const char* section, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw DataError(std::string("config: section '") + section + "' must be an object");
  const std::set<std::string> names(known.begin(), known.end());
  for (const auto& [k, v] : j.items()) {
    if (!names.count(k)) throw DataError(std::string("config: unknown key '") + section + "." + k + "'");
  }
}

void check_widths(const std::vector<int>& w, const char* what) {
  if (w.empty()) throw std::invalid_argument(std::string(what) + ": widths must not be empty");
  for (int c : w) {
    if (c < 1) throw std::invalid_argument(std::string(what) + ": widths must be >= 1");
  }
}

}  // namespace

std::vector<std::string> all_methods() {
  return {"sas", "sas-aug", "rand-aug", "ours-coupled", "ours-indep", "ours-indep+rand-aug", "supervised", "atlas-only"};
}

void PipelineConfig::validate() const {
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  toy.params.validate();
  if (toy.n_train < 2 || toy.n_val < 1 || toy.n_test < 1) {
    throw std::invalid_argument("config: toy needs n_train >= 2 and n_val, n_test >= 1");
  }
  check_widths(spatial.widths, "spatial");
  check_widths(appearance.widths, "appearance");
  check_widths(segmenter.widths, "segmenter");
  if (spatial.steps < 0 || appearance.steps < 0) throw std::invalid_argument("config: steps must be >= 0");
  if (spatial.lambda_s < 0 || appearance.lambda_a < 0) throw std::invalid_argument("config: weights must be >= 0");
  if (segmenter.max_epochs < 0 || segmenter.steps_per_epoch < 1 || segmenter.batch_size < 1 || segmenter.patience < 1) {
    throw std::invalid_argument("config: segmenter epochs >= 0, steps_per_epoch, batch_size, patience >= 1");
  }
  if (!(rand_aug.factor_min > 0 && rand_aug.factor_min <= rand_aug.factor_max)) {
    throw std::invalid_argument("config: rand_aug factors need 0 < factor_min <= factor_max");
  }
  const auto known = all_methods();
  for (const auto& m : methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw std::invalid_argument("config: unknown method '" + m + "'");
    }
  }
  const auto& chosen = methods.empty() ? known : methods;
  if (std::find(chosen.begin(), chosen.end(), baseline) == chosen.end()) {
    throw std::invalid_argument("config: baseline '" + baseline + "' is not among the methods");
  }
}

json to_json(const PipelineConfig& c) {
  const auto& p = c.toy.params;
  return {{"seed", c.seed},
          {"threads", c.threads},
          {"toy",
           {{"image_size", p.image_size},
            {"label_count", p.label_count},
            {"anatomy_grid_spacing", p.anatomy.grid_spacing},
            {"anatomy_amplitude", p.anatomy.amplitude},
            {"anatomy_blur_radius", p.anatomy.blur_radius},
            {"region_radii", p.region_radii},
            {"fold_count", p.fold_count},
            {"fold_depth", p.fold_depth},
            {"base_intensities", p.base_intensities},
            {"intensity_jitter", p.intensity_jitter},
            {"bias_amplitude", p.bias_amplitude},
            {"bias_spacing", p.bias_spacing},
            {"noise_sigma", p.noise_sigma},
            {"n_train", c.toy.n_train},
            {"n_val", c.toy.n_val},
            {"n_test", c.toy.n_test}}},
          {"spatial",
           {{"widths", c.spatial.widths},
            {"lambda_s", c.spatial.lambda_s},
            {"ncc_window", c.spatial.ncc_window},
            {"steps", c.spatial.steps},
            {"learning_rate", c.spatial.learning_rate}}},
          {"appearance",
           {{"widths", c.appearance.widths},
            {"lambda_a", c.appearance.lambda_a},
            {"steps", c.appearance.steps},
            {"learning_rate", c.appearance.learning_rate}}},
          {"segmenter",
           {{"widths", c.segmenter.widths},
            {"max_epochs", c.segmenter.max_epochs},
            {"steps_per_epoch", c.segmenter.steps_per_epoch},
            {"batch_size", c.segmenter.batch_size},
            {"patience", c.segmenter.patience},
            {"learning_rate", c.segmenter.learning_rate}}},
          {"rand_aug",
           {{"grid_spacing", c.rand_aug.field.grid_spacing},
            {"amplitude", c.rand_aug.field.amplitude},
            {"blur_radius", c.rand_aug.field.blur_radius},
            {"factor_min", c.rand_aug.factor_min},
            {"factor_max", c.rand_aug.factor_max}}},
          {"methods", c.methods.empty() ? all_methods() : c.methods},
          {"baseline", c.baseline}};
}

PipelineConfig config_from_json(const json& j, PipelineConfig c) {
  reject_unknown(j, "", {"seed", "threads", "toy", "spatial", "appearance", "segmenter", "rand_aug", "methods", "baseline"});
  read(j, "", "seed", c.seed);
  read(j, "", "threads", c.threads);
  read(j, "", "methods", c.methods);
  read(j, "", "baseline", c.baseline);
  if (j.contains("toy")) {
    const auto& t = j["toy"];
    reject_unknown(t, "toy",
                   {"image_size", "label_count", "anatomy_grid_spacing", "anatomy_amplitude", "anatomy_blur_radius",
                    "region_radii", "fold_count", "fold_depth", "base_intensities", "intensity_jitter",
                    "bias_amplitude", "bias_spacing", "noise_sigma", "n_train", "n_val", "n_test"});
    auto& p = c.toy.params;
    read(t, "toy", "image_size", p.image_size);
    read(t, "toy", "label_count", p.label_count);
    read(t, "toy", "anatomy_grid_spacing", p.anatomy.grid_spacing);
    read(t, "toy", "anatomy_amplitude", p.anatomy.amplitude);
    read(t, "toy", "anatomy_blur_radius", p.anatomy.blur_radius);
    read(t, "toy", "region_radii", p.region_radii);
    read(t, "toy", "fold_count", p.fold_count);
    read(t, "toy", "fold_depth", p.fold_depth);
    read(t, "toy", "base_intensities", p.base_intensities);
    read(t, "toy", "intensity_jitter", p.intensity_jitter);
    read(t, "toy", "bias_amplitude", p.bias_amplitude);
    read(t, "toy", "bias_spacing", p.bias_spacing);
    read(t, "toy", "noise_sigma", p.noise_sigma);
    read(t, "toy", "n_train", c.toy.n_train);
    read(t, "toy", "n_val", c.toy.n_val);
    read(t, "toy", "n_test", c.toy.n_test);
  }
  if (j.contains("spatial")) {
    const auto& s = j["spatial"];
    reject_unknown(s, "spatial", {"widths", "lambda_s", "ncc_window", "steps", "learning_rate"});
    read(s, "spatial", "widths", c.spatial.widths);
    read(s, "spatial", "lambda_s", c.spatial.lambda_s);
    read(s, "spatial", "ncc_window", c.spatial.ncc_window);
    read(s, "spatial", "steps", c.spatial.steps);
    read(s, "spatial", "learning_rate", c.spatial.learning_rate);
  }
  if (j.contains("appearance")) {
    const auto& a = j["appearance"];
    reject_unknown(a, "appearance", {"widths", "lambda_a", "steps", "learning_rate"});
    read(a, "appearance", "widths", c.appearance.widths);
    read(a, "appearance", "lambda_a", c.appearance.lambda_a);
    read(a, "appearance", "steps", c.appearance.steps);
    read(a, "appearance", "learning_rate", c.appearance.learning_rate);
  }
  if (j.contains("segmenter")) {
    const auto& s = j["segmenter"];
    reject_unknown(s, "segmenter", {"widths", "max_epochs", "steps_per_epoch", "batch_size", "patience", "learning_rate"});
    read(s, "segmenter", "widths", c.segmenter.widths);
    read(s, "segmenter", "max_epochs", c.segmenter.max_epochs);
    read(s, "segmenter", "steps_per_epoch", c.segmenter.steps_per_epoch);
    read(s, "segmenter", "batch_size", c.segmenter.batch_size);
    read(s, "segmenter", "patience", c.segmenter.patience);
    read(s, "segmenter", "learning_rate", c.segmenter.learning_rate);
  }
  if (j.contains("rand_aug")) {
    const auto& r = j["rand_aug"];
    reject_unknown(r, "rand_aug", {"grid_spacing", "amplitude", "blur_radius", "factor_min", "factor_max"});
    read(r, "rand_aug", "grid_spacing", c.rand_aug.field.grid_spacing);
    read(r, "rand_aug", "amplitude", c.rand_aug.field.amplitude);
    read(r, "rand_aug", "blur_radius", c.rand_aug.field.blur_radius);
    read(r, "rand_aug", "factor_min", c.rand_aug.factor_min);
    read(r, "rand_aug", "factor_max", c.rand_aug.factor_max);
  }
  return c;
}

PipelineConfig read_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, std::move(base));
}

}  // namespace augmorph::dataio
