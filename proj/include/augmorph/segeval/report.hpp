#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "augmorph/volume.hpp"

namespace augmorph::segeval {

struct MethodPredictions {
  std::string name;
  std::map<std::string, LabelMap> by_subject;
};

struct MethodSummary {
  std::string name;
  double mean = 0;  // over subjects of the per-subject foreground mean
  double std = 0;   // population convention
  std::vector<double> label_mean;  // indexed like EvalReport::labels
  std::vector<double> label_std;
  double improvement_mean = 0;  // vs baseline, paired by subject
  double improvement_std = 0;
  int subjects_better = 0;      // subjects where this method beats the baseline
};

struct EvalReport {
  std::string baseline;
  std::vector<std::string> subjects;
  /// Foreground labels, largest atlas region first.
  std::vector<std::int32_t> labels;
  std::vector<std::string> label_names;
  /// dice[m][s][k] for method m, subject s, labels[k].
  std::vector<std::vector<std::vector<double>>> dice;
  std::vector<MethodSummary> methods;

  [[nodiscard]] const MethodSummary& method(const std::string& name) const;
  /// Per-subject foreground mean for one method.
  [[nodiscard]] std::vector<double> subject_means(const std::string& name) const;
};

/// Scores every method on every subject in `subject_ids` (paired with
/// `truth`). Throws DataError naming the method and subject when a
/// prediction is missing.
EvalReport evaluate_suite(const std::vector<MethodPredictions>& methods, const std::vector<std::string>& subject_ids,
                          const std::vector<LabelMap>& truth, const LabelMap& atlas_labels, int label_count,
                          const std::string& baseline, const std::vector<std::string>& label_names = {});

/// Columns: method,subject,label,dice.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
nlohmann::json report_summary_json(const EvalReport& report);
void write_report_json(const std::filesystem::path& path, const EvalReport& report);
/// Plain-text table in the row order given by `methods`.
std::string format_report_table(const EvalReport& report);

}  // namespace augmorph::segeval
