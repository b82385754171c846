#pragma once

// The experiment as separately runnable stages sharing one run directory:
//
//   <root>/resolved_config.json
//   <root>/data/manifest.json, train/, val/, test/
//   <root>/models/spatial.ckpt, appearance.ckpt, seg_<method>.ckpt
//   <root>/predictions/<method>/<test id>.vtf
//   <root>/curves/<stage>.csv
//   <root>/report/dice.csv, summary.json, improvements.csv, table.txt

#include <filesystem>
#include <iosfwd>
#include <string>

#include "augmorph/dataio/config.hpp"
#include "augmorph/dataio/manifest.hpp"
#include "augmorph/segeval/report.hpp"

namespace augmorph::dataio {

struct RunLayout {
  std::filesystem::path root;

  [[nodiscard]] std::filesystem::path data_dir() const { return root / "data"; }
  [[nodiscard]] std::filesystem::path manifest() const { return data_dir() / "manifest.json"; }
  [[nodiscard]] std::filesystem::path spatial_model() const { return root / "models" / "spatial.ckpt"; }
  [[nodiscard]] std::filesystem::path appearance_model() const { return root / "models" / "appearance.ckpt"; }
  [[nodiscard]] std::filesystem::path segmenter(const std::string& method) const {
    return root / "models" / ("seg_" + method + ".ckpt");
  }
  [[nodiscard]] std::filesystem::path predictions(const std::string& method) const {
    return root / "predictions" / method;
  }
  [[nodiscard]] std::filesystem::path curve(const std::string& stage) const { return root / "curves" / (stage + ".csv"); }
  [[nodiscard]] std::filesystem::path report_dir() const { return root / "report"; }
};

/// Method name for a train-seg mode ("indep" -> "ours-indep", ...).
std::string method_for_mode(const std::string& mode);

/// Seed stream ids under the master seed.
namespace streams {
inline constexpr std::uint64_t spatial_init = 1;
inline constexpr std::uint64_t spatial_train = 2;
inline constexpr std::uint64_t appearance_init = 3;
inline constexpr std::uint64_t appearance_train = 4;
inline constexpr std::uint64_t segmenter_init = 5;
inline constexpr std::uint64_t segmenter_train = 6;
inline constexpr std::uint64_t plans = 7;
inline constexpr std::uint64_t synth_dump = 8;
}  // namespace streams

void write_resolved_config(const RunLayout& run, const PipelineConfig& config);

DatasetManifest stage_gen_toy(const PipelineConfig& config, const RunLayout& run, std::ostream& log);
void stage_train_spatial(const PipelineConfig& config, const RunLayout& run, std::ostream& log);
void stage_train_appearance(const PipelineConfig& config, const RunLayout& run, std::ostream& log);
/// Trains the segmenter for `method` and writes its test predictions.
void stage_train_segmenter(const PipelineConfig& config, const RunLayout& run, const std::string& method,
                           std::ostream& log);
void stage_baseline_sas(const PipelineConfig& config, const RunLayout& run, std::ostream& log);
/// Writes `count` synthesized examples and provenance sidecars under `dir`.
void stage_synth_dump(const PipelineConfig& config, const RunLayout& run, const std::string& mode, std::size_t count,
                      const std::filesystem::path& dir, std::ostream& log);
/// Scores the configured methods' predictions and writes the report files.
segeval::EvalReport stage_evaluate(const PipelineConfig& config, const RunLayout& run, std::ostream& log);

/// Every stage in order; returns the evaluation.
segeval::EvalReport run_pipeline(const PipelineConfig& config, const RunLayout& run, std::ostream& log);

}  // namespace augmorph::dataio
