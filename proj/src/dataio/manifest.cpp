#include "augmorph/dataio/manifest.hpp"

#include <fstream>

#include "augmorph/dataio/errors.hpp"
#include "augmorph/dataio/vtf.hpp"

namespace augmorph::dataio {

void DatasetManifest::validate() const {
  auto paired = [](const std::vector<std::string>& a, const std::vector<std::string>& b, const char* what) {
    if (a.size() != b.size()) {
      throw DataError(std::string("manifest: ") + what + " lists differ in length (" + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()) + ")");
    }
  };
  if (atlas_image.empty() || atlas_labels.empty()) throw DataError("manifest: missing atlas_image or atlas_labels");
  if (unlabeled.empty()) throw DataError("manifest: unlabeled list is empty");
  if (!unlabeled_labels.empty()) paired(unlabeled, unlabeled_labels, "unlabeled/unlabeled_labels");
  paired(val_images, val_labels, "val_images/val_labels");
  paired(test_images, test_labels, "test_images/test_labels");
}

nlohmann::json to_json(const DatasetManifest& m) {
  return {{"atlas_image", m.atlas_image},
          {"atlas_labels", m.atlas_labels},
          {"unlabeled", m.unlabeled},
          {"unlabeled_labels", m.unlabeled_labels},
          {"val_images", m.val_images},
          {"val_labels", m.val_labels},
          {"test_images", m.test_images},
          {"test_labels", m.test_labels},
          {"label_names", m.label_names},
          {"provenance", m.provenance}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = root;
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw DataError(std::string("manifest: missing entry '") + key + "'");
    return j.at(key);
  };
  try {
    m.atlas_image = need("atlas_image").get<std::string>();
    m.atlas_labels = need("atlas_labels").get<std::string>();
    m.unlabeled = need("unlabeled").get<std::vector<std::string>>();
    m.unlabeled_labels = j.value("unlabeled_labels", std::vector<std::string>{});
    m.val_images = need("val_images").get<std::vector<std::string>>();
    m.val_labels = need("val_labels").get<std::vector<std::string>>();
    m.test_images = need("test_images").get<std::vector<std::string>>();
    m.test_labels = need("test_labels").get<std::vector<std::string>>();
    m.label_names = j.value("label_names", std::vector<std::string>{});
    m.provenance = j.value("provenance", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: malformed entry: ") + e.what());
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest " + path.string());
  os << to_json(m).dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

Dataset load_dataset(const DatasetManifest& m) {
  m.validate();
  auto load = [&](const std::string& rel) -> std::filesystem::path {
    const auto p = m.resolve(rel);
    if (!std::filesystem::exists(p)) throw DataError("manifest entry not found: " + p.string());
    return p;
  };
  Dataset d;
  d.atlas = read_float_vtf(load(m.atlas_image));
  d.atlas_labels = read_label_vtf(load(m.atlas_labels));
  for (const auto& p : m.unlabeled) d.unlabeled.push_back(read_float_vtf(load(p)));
  for (const auto& p : m.unlabeled_labels) d.unlabeled_labels.push_back(read_label_vtf(load(p)));
  for (const auto& p : m.val_images) d.val_images.push_back(read_float_vtf(load(p)));
  for (const auto& p : m.val_labels) d.val_labels.push_back(read_label_vtf(load(p)));
  for (const auto& p : m.test_images) {
    d.test_images.push_back(read_float_vtf(load(p)));
    d.test_ids.push_back(std::filesystem::path(p).stem().string());
  }
  for (const auto& p : m.test_labels) d.test_labels.push_back(read_label_vtf(load(p)));
  d.label_names = m.label_names;

  auto check = [&](const diffcore::Shape& s, const std::string& what) {
    if (s != d.atlas.shape) throw DataError("dataset: " + what + " grid differs from the atlas");
  };
  check(d.atlas_labels.shape, "atlas labels");
  for (const auto& v : d.unlabeled) check(v.shape, "unlabeled image");
  for (const auto& v : d.unlabeled_labels) check(v.shape, "unlabeled label map");
  for (const auto& v : d.val_images) check(v.shape, "validation image");
  for (const auto& v : d.val_labels) check(v.shape, "validation label map");
  for (const auto& v : d.test_images) check(v.shape, "test image");
  for (const auto& v : d.test_labels) check(v.shape, "test label map");
  return d;
}

}  // namespace augmorph::dataio
