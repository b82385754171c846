#include "augmorph/segeval/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "augmorph/dataio/errors.hpp"
#include "augmorph/segeval/segmenter.hpp"

namespace augmorph::segeval {

namespace {

struct Moments {
  double mean = 0;
  double std = 0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Rounded so the JSON text does not depend on the last-bit behaviour of
// the summation order.
double rounded(double v) { return std::round(v * 1e9) / 1e9; }

}  // namespace

const MethodSummary& EvalReport::method(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.name == name) return m;
  }
  throw std::out_of_range("report: no method named '" + name + "'");
}

std::vector<double> EvalReport::subject_means(const std::string& name) const {
  std::size_t mi = 0;
  while (mi < methods.size() && methods[mi].name != name) ++mi;
  if (mi == methods.size()) throw std::out_of_range("report: no method named '" + name + "'");
  std::vector<double> out;
  for (const auto& per_label : dice[mi]) {
    out.push_back(std::accumulate(per_label.begin(), per_label.end(), 0.0) / static_cast<double>(per_label.size()));
  }
  return out;
}

EvalReport evaluate_suite(const std::vector<MethodPredictions>& methods, const std::vector<std::string>& subject_ids,
                          const std::vector<LabelMap>& truth, const LabelMap& atlas_labels, int label_count,
                          const std::string& baseline, const std::vector<std::string>& label_names) {
  if (subject_ids.size() != truth.size() || subject_ids.empty()) {
    throw std::invalid_argument("evaluate_suite: need one truth map per subject and at least one subject");
  }
  if (label_count < 2) throw std::invalid_argument("evaluate_suite: need at least one foreground label");
  if (std::none_of(methods.begin(), methods.end(), [&](const auto& m) { return m.name == baseline; })) {
    throw dataio::DataError("evaluate_suite: baseline method '" + baseline + "' has no predictions");
  }

  EvalReport r;
  r.baseline = baseline;
  r.subjects = subject_ids;
  std::vector<std::int64_t> volume(static_cast<std::size_t>(label_count), 0);
  for (auto l : atlas_labels.data) {
    if (l >= 0 && l < label_count) ++volume[static_cast<std::size_t>(l)];
  }
  for (int l = 1; l < label_count; ++l) r.labels.push_back(l);
  std::stable_sort(r.labels.begin(), r.labels.end(), [&](auto a, auto b) { return volume[a] > volume[b]; });
  for (auto l : r.labels) {
    r.label_names.push_back(static_cast<std::size_t>(l) < label_names.size() ? label_names[l]
                                                                            : "label" + std::to_string(l));
  }

  const std::size_t nl = r.labels.size();
  for (const auto& m : methods) {
    std::vector<std::vector<double>> per_subject;
    for (std::size_t s = 0; s < subject_ids.size(); ++s) {
      const auto it = m.by_subject.find(subject_ids[s]);
      if (it == m.by_subject.end() || it->second.data.empty()) {
        throw dataio::DataError("evaluate_suite: method '" + m.name + "' has no prediction for subject '" +
                                subject_ids[s] + "'");
      }
      std::vector<double> row;
      for (auto l : r.labels) row.push_back(dice(it->second, truth[s], l));
      per_subject.push_back(std::move(row));
    }
    r.dice.push_back(std::move(per_subject));
  }

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    MethodSummary sm;
    sm.name = methods[mi].name;
    r.methods.push_back(sm);
  }
  const auto base = r.subject_means(baseline);
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    MethodSummary& sm = r.methods[mi];
    const auto means = r.subject_means(sm.name);
    const auto mm = moments(means);
    sm.mean = mm.mean;
    sm.std = mm.std;
    for (std::size_t k = 0; k < nl; ++k) {
      std::vector<double> col;
      for (const auto& row : r.dice[mi]) col.push_back(row[k]);
      const auto lm = moments(col);
      sm.label_mean.push_back(lm.mean);
      sm.label_std.push_back(lm.std);
    }
    std::vector<double> diff;
    for (std::size_t s = 0; s < means.size(); ++s) {
      diff.push_back(means[s] - base[s]);
      if (means[s] > base[s]) ++sm.subjects_better;
    }
    const auto dm = moments(diff);
    sm.improvement_mean = dm.mean;
    sm.improvement_std = dm.std;
  }
  return r;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw dataio::DataError("cannot write " + path.string());
  os << "method,subject,label,dice\n";
  for (std::size_t mi = 0; mi < report.methods.size(); ++mi) {
    for (std::size_t s = 0; s < report.subjects.size(); ++s) {
      for (std::size_t k = 0; k < report.labels.size(); ++k) {
        os << report.methods[mi].name << ',' << report.subjects[s] << ',' << report.label_names[k] << ','
           << fixed(report.dice[mi][s][k]) << '\n';
      }
    }
  }
  if (!os) throw dataio::DataError("write failed: " + path.string());
}

nlohmann::json report_summary_json(const EvalReport& report) {
  nlohmann::json j;
  j["std_convention"] = "population";
  j["baseline"] = report.baseline;
  j["subjects"] = report.subjects;
  j["labels_by_atlas_volume"] = report.label_names;
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : report.methods) {
    nlohmann::json per_label = nlohmann::json::object();
    for (std::size_t k = 0; k < report.labels.size(); ++k) {
      per_label[report.label_names[k]] = {{"mean", rounded(m.label_mean[k])}, {"std", rounded(m.label_std[k])}};
    }
    methods.push_back({{"method", m.name},
                       {"mean_dice", rounded(m.mean)},
                       {"std_dice", rounded(m.std)},
                       {"improvement_vs_baseline", {{"mean", rounded(m.improvement_mean)}, {"std", rounded(m.improvement_std)}}},
                       {"subjects_better_than_baseline", m.subjects_better},
                       {"per_label", per_label}});
  }
  j["methods"] = methods;
  return j;
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw dataio::DataError("cannot write " + path.string());
  os << report_summary_json(report).dump(2) << '\n';
  if (!os) throw dataio::DataError("write failed: " + path.string());
}

std::string format_report_table(const EvalReport& report) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-22s %-17s %-22s %s\n", "method", "dice mean (std)",
                ("vs " + report.baseline + " (std)").c_str(), "subjects better");
  out += buf;
  for (const auto& m : report.methods) {
    std::snprintf(buf, sizeof buf, "%-22s %.3f (%.3f)     %+.3f (%.3f)         %d/%zu\n", m.name.c_str(), m.mean,
                  m.std, m.improvement_mean, m.improvement_std, m.subjects_better, report.subjects.size());
    out += buf;
  }
  out += "\nper-label mean dice (labels by atlas volume, largest first)\n";
  std::snprintf(buf, sizeof buf, "%-22s", "method");
  out += buf;
  for (const auto& n : report.label_names) {
    std::snprintf(buf, sizeof buf, " %10s", n.c_str());
    out += buf;
  }
  out += '\n';
  for (const auto& m : report.methods) {
    std::snprintf(buf, sizeof buf, "%-22s", m.name.c_str());
    out += buf;
    for (double v : m.label_mean) {
      std::snprintf(buf, sizeof buf, " %10.3f", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace augmorph::segeval
