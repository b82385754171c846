#pragma once

#include <filesystem>

#include "augmorph/segeval/segmenter.hpp"
#include "augmorph/xformmodels/models.hpp"

namespace augmorph::dataio {

// Checkpoint kinds "spatial", "appearance" and "segmenter". Architecture and
// scalar settings live in the JSON header, weights as named tensors.

void save_spatial(const std::filesystem::path& path, const xformmodels::SpatialModel& model);
xformmodels::SpatialModel load_spatial(const std::filesystem::path& path);

void save_appearance(const std::filesystem::path& path, const xformmodels::AppearanceModel& model);
xformmodels::AppearanceModel load_appearance(const std::filesystem::path& path);

void save_segmenter(const std::filesystem::path& path, const segeval::SegModel& model);
segeval::SegModel load_segmenter(const std::filesystem::path& path);

}  // namespace augmorph::dataio
