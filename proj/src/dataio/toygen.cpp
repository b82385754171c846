#include "augmorph/dataio/toygen.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "augmorph/dataio/errors.hpp"
#include "augmorph/dataio/vtf.hpp"
#include "augmorph/parallel.hpp"
#include "augmorph/seeds.hpp"

namespace augmorph::dataio {

namespace {

// Region k (1..L-1) is a perturbed ellipse; regions nest by shrinking radius.
double region_fraction(const ToyGenParams& params, int k) {
  if (!params.region_radii.empty()) return params.region_radii[static_cast<std::size_t>(k - 1)];
  if (params.label_count <= 2) return 0.85;
  return 0.85 - 0.6 * static_cast<double>(k - 1) / static_cast<double>(params.label_count - 2);
}

std::string numbered(const char* stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu.vtf", stem, i);
  return buf;
}

}  // namespace

void ToyGenParams::validate() const {
  if (image_size.empty() || image_size.size() > 3) throw std::invalid_argument("toy: image rank must be 1..3");
  for (auto e : image_size) {
    if (e < 8) throw std::invalid_argument("toy: image extents must be >= 8");
  }
  if (label_count < 3) throw std::invalid_argument("toy: label_count must be >= 3 including background");
  if (static_cast<int>(base_intensities.size()) != label_count) {
    throw std::invalid_argument("toy: need one base intensity per label");
  }
  if (base_intensities[0] != 0.0) throw std::invalid_argument("toy: background intensity must be 0");
  for (int a = 0; a < label_count; ++a) {
    for (int b = a + 1; b < label_count; ++b) {
      if (std::abs(base_intensities[a] - base_intensities[b]) < 5 * noise_sigma) {
        throw std::invalid_argument("toy: base intensities must differ by at least 5x the noise sigma");
      }
    }
  }
  if (intensity_jitter < 0 || intensity_jitter >= 1) throw std::invalid_argument("toy: intensity_jitter must be in [0, 1)");
  if (bias_amplitude < 0 || bias_amplitude >= 1) throw std::invalid_argument("toy: bias_amplitude must be in [0, 1)");
  if (noise_sigma < 0) throw std::invalid_argument("toy: noise_sigma must be >= 0");
  if (!region_radii.empty()) {
    if (static_cast<int>(region_radii.size()) != label_count - 1) {
      throw std::invalid_argument("toy: need one region radius per foreground label");
    }
    for (std::size_t k = 0; k < region_radii.size(); ++k) {
      if (!(region_radii[k] > 0 && region_radii[k] < 1) || (k > 0 && region_radii[k] >= region_radii[k - 1])) {
        throw std::invalid_argument("toy: region radii must decrease strictly within (0, 1)");
      }
    }
  }
  if (fold_count < 0 || fold_depth < 0 || fold_depth >= 0.5) {
    throw std::invalid_argument("toy: fold_count must be >= 0 and fold_depth in [0, 0.5)");
  }
}

LabelMap toy_template_labels(const ToyGenParams& params) {
  params.validate();
  const auto& shape = params.image_size;
  const auto g = diffcore::make_grid(shape);
  const int rank = g.rank;
  LabelMap labels(shape);
  for (std::int64_t z = 0; z < g.nz; ++z) {
    for (std::int64_t y = 0; y < g.ny; ++y) {
      for (std::int64_t x = 0; x < g.nx; ++x) {
        const std::int64_t canon[3] = {z, y, x};
        double rel[3] = {0, 0, 0};
        for (int d = 0; d < rank; ++d) {
          const auto n = static_cast<double>(shape[static_cast<std::size_t>(d)]);
          rel[d] = (static_cast<double>(canon[g.canonical(d)]) - (n - 1) / 2) / (n / 2);
          if (d == 0 && rank > 1) rel[d] /= 0.85;
        }
        const double theta = rank >= 2 ? std::atan2(rel[rank - 2], rel[rank - 1]) : 0.0;
        double rho = 0;
        for (int d = 0; d < rank; ++d) rho += rel[d] * rel[d];
        rho = std::sqrt(rho);
        std::int32_t label = 0;
        for (int k = 1; k < params.label_count; ++k) {
          double wobble = 0.08 * std::sin(3 * theta + k);
          if (k == 2) wobble += params.fold_depth * std::sin(params.fold_count * theta);
          const double radius = region_fraction(params, k) * (1.0 + wobble);
          if (rho <= radius) label = k;
        }
        labels.data[static_cast<std::size_t>((z * g.ny + y) * g.nx + x)] = label;
      }
    }
  }
  return labels;
}

std::uint64_t toy_subject_seed(const ToyGenParams& params, std::size_t index) {
  return derive_seed(params.seed, index);
}

warpfield::DisplacementField toy_subject_field(const ToyGenParams& params, std::uint64_t subject_seed) {
  return warpfield::random_smooth_field(params.image_size, params.anatomy, derive_seed(subject_seed, 0));
}

ToySubject toy_subject(const ToyGenParams& params, std::uint64_t subject_seed, bool undeformed) {
  const LabelMap tmpl = toy_template_labels(params);
  ToySubject s;
  s.field = undeformed ? warpfield::DisplacementField::zeros(params.image_size) : toy_subject_field(params, subject_seed);
  s.labels = warpfield::warp_nearest(tmpl, s.field);

  std::vector<double> intensity = params.base_intensities;
  Volume bias(params.image_size, 1.0f);
  if (!undeformed) {
    std::mt19937_64 rng(derive_seed(subject_seed, 1));
    std::uniform_real_distribution<double> jitter(-params.intensity_jitter, params.intensity_jitter);
    for (std::size_t l = 1; l < intensity.size(); ++l) {
      const double j = params.intensity_jitter > 0 ? jitter(rng) : 0.0;
      intensity[l] *= 1.0 + j;
    }
    if (params.bias_amplitude > 0) {
      const auto field = warpfield::random_smooth_field(
          params.image_size, {params.bias_spacing, params.bias_amplitude, 2}, derive_seed(subject_seed, 2));
      for (std::size_t i = 0; i < bias.size(); ++i) bias.data[i] = 1.0f + field.components.data[i];
    }
  }

  // The template intensity image is warped with the anatomy, so region
  // edges get the partial-volume softening of linear interpolation.
  Volume painted(params.image_size);
  for (std::size_t i = 0; i < painted.size(); ++i) {
    painted.data[i] = static_cast<float>(intensity[static_cast<std::size_t>(tmpl.data[i])]);
  }
  painted = warpfield::warp_linear(painted, s.field);
  std::mt19937_64 noise_rng(derive_seed(subject_seed, 3));
  std::normal_distribution<double> noise(0.0, params.noise_sigma > 0 ? params.noise_sigma : 1.0);
  s.image = Volume(params.image_size);
  for (std::size_t i = 0; i < s.image.size(); ++i) {
    const double n = params.noise_sigma > 0 ? noise(noise_rng) : 0.0;
    s.image.data[i] = s.labels.data[i] == 0 ? 0.0f : static_cast<float>(painted.data[i] * bias.data[i] + n);
  }
  return s;
}

DatasetManifest generate_toy_dataset(const ToyGenParams& params, std::size_t n_train, std::size_t n_val,
                                     std::size_t n_test, const std::filesystem::path& out_dir, int threads) {
  params.validate();
  if (n_train < 2 || n_val < 1 || n_test < 1) {
    throw std::invalid_argument("toy: need >= 2 training subjects (atlas + 1) and >= 1 val/test subject");
  }
  namespace fs = std::filesystem;
  try {
    for (const char* sub : {"train", "val", "test"}) fs::create_directories(out_dir / sub);
  } catch (const fs::filesystem_error& e) {
    throw DataError("cannot create output directory " + out_dir.string() + ": " + e.what());
  }

  struct Job {
    std::string split;
    std::size_t local = 0;
    std::size_t stream = 0;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < n_train; ++i) jobs.push_back({"train", i, i});
  for (std::size_t i = 0; i < n_val; ++i) jobs.push_back({"val", i, n_train + i});
  for (std::size_t i = 0; i < n_test; ++i) jobs.push_back({"test", i, n_train + n_val + i});

  parallel_for(jobs.size(), threads, [&](std::size_t k) {
    const Job& job = jobs[k];
    const bool atlas = job.split == "train" && job.local == 0;
    const ToySubject s = toy_subject(params, toy_subject_seed(params, job.stream), atlas);
    write_vtf(out_dir / job.split / numbered("img", job.local), s.image);
    write_vtf(out_dir / job.split / numbered("lab", job.local), s.labels);
  });

  DatasetManifest m;
  m.root = out_dir;
  m.atlas_image = "train/" + numbered("img", 0);
  m.atlas_labels = "train/" + numbered("lab", 0);
  for (std::size_t i = 1; i < n_train; ++i) {
    m.unlabeled.push_back("train/" + numbered("img", i));
    m.unlabeled_labels.push_back("train/" + numbered("lab", i));
  }
  for (std::size_t i = 0; i < n_val; ++i) {
    m.val_images.push_back("val/" + numbered("img", i));
    m.val_labels.push_back("val/" + numbered("lab", i));
  }
  for (std::size_t i = 0; i < n_test; ++i) {
    m.test_images.push_back("test/" + numbered("img", i));
    m.test_labels.push_back("test/" + numbered("lab", i));
  }
  m.label_names.push_back("background");
  for (int k = 1; k < params.label_count; ++k) m.label_names.push_back("region" + std::to_string(k));

  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& job : jobs) {
    subjects.push_back({{"split", job.split},
                        {"index", job.local},
                        {"seed", toy_subject_seed(params, job.stream)},
                        {"undeformed", job.split == "train" && job.local == 0}});
  }
  m.provenance = {{"generator", "toy"},
                  {"params",
                   {{"image_size", params.image_size},
                    {"label_count", params.label_count},
                    {"anatomy_grid_spacing", params.anatomy.grid_spacing},
                    {"anatomy_amplitude", params.anatomy.amplitude},
                    {"anatomy_blur_radius", params.anatomy.blur_radius},
                    {"region_radii", params.region_radii},
                    {"fold_count", params.fold_count},
                    {"fold_depth", params.fold_depth},
                    {"base_intensities", params.base_intensities},
                    {"intensity_jitter", params.intensity_jitter},
                    {"bias_amplitude", params.bias_amplitude},
                    {"bias_spacing", params.bias_spacing},
                    {"noise_sigma", params.noise_sigma},
                    {"seed", params.seed}}},
                  {"subjects", subjects}};
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

}  // namespace augmorph::dataio
