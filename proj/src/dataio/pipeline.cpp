#include "augmorph/dataio/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <stdexcept>

#include "augmorph/augment/augment.hpp"
#include "augmorph/dataio/errors.hpp"
#include "augmorph/dataio/model_io.hpp"
#include "augmorph/dataio/vtf.hpp"
#include "augmorph/parallel.hpp"
#include "augmorph/seeds.hpp"
#include "augmorph/segeval/segmenter.hpp"

namespace augmorph::dataio {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

const fs::path& ensure_parent(const fs::path& path) {
  fs::create_directories(path.parent_path());
  return path;
}

std::ofstream open_out(const fs::path& path) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

Dataset load(const RunLayout& run) { return load_dataset(read_manifest(run.manifest())); }

int label_count_of(const Dataset& d) {
  if (!d.label_names.empty()) return static_cast<int>(d.label_names.size());
  return *std::max_element(d.atlas_labels.data.begin(), d.atlas_labels.data.end()) + 1;
}

xformmodels::SpatialModel load_spatial_stage(const RunLayout& run) {
  if (!fs::exists(run.spatial_model())) {
    throw DataError("spatial model not found at " + run.spatial_model().string() + " (run train-spatial first)");
  }
  return load_spatial(run.spatial_model());
}

xformmodels::AppearanceModel load_appearance_stage(const RunLayout& run) {
  if (!fs::exists(run.appearance_model())) {
    throw DataError("appearance model not found at " + run.appearance_model().string() +
                    " (run train-appearance first)");
  }
  return load_appearance(run.appearance_model());
}

void write_predictions(const RunLayout& run, const std::string& method, const Dataset& d,
                       const std::vector<LabelMap>& predictions) {
  const auto dir = run.predictions(method);
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < predictions.size(); ++i) write_vtf(dir / (d.test_ids[i] + ".vtf"), predictions[i]);
}

augment::SynthesisMode synthesis_mode_of(const std::string& method) {
  if (method == "ours-indep") return augment::SynthesisMode::indep;
  if (method == "ours-coupled") return augment::SynthesisMode::coupled;
  if (method == "rand-aug") return augment::SynthesisMode::rand_aug;
  return augment::SynthesisMode::indep_plus_rand;
}

}  // namespace

std::string method_for_mode(const std::string& mode) {
  if (mode == "indep") return "ours-indep";
  if (mode == "coupled") return "ours-coupled";
  if (mode == "indep+rand") return "ours-indep+rand-aug";
  if (mode == "rand-aug" || mode == "sas-aug" || mode == "atlas-only" || mode == "supervised") return mode;
  throw std::invalid_argument("unknown segmenter mode '" + mode + "'");
}

void write_resolved_config(const RunLayout& run, const PipelineConfig& config) {
  auto os = open_out(run.root / "resolved_config.json");
  os << to_json(config).dump(2) << '\n';
}

DatasetManifest stage_gen_toy(const PipelineConfig& config, const RunLayout& run, std::ostream& log) {
  const auto t0 = Clock::now();
  ToyGenParams params = config.toy.params;
  params.seed = config.seed;
  auto m = generate_toy_dataset(params, config.toy.n_train, config.toy.n_val, config.toy.n_test, run.data_dir(),
                                config.threads);
  log << "gen-toy: " << m.unlabeled.size() << " unlabeled, " << m.val_images.size() << " val, "
      << m.test_images.size() << " test in " << num(seconds_since(t0)) << " s\n";
  return m;
}

void stage_train_spatial(const PipelineConfig& config, const RunLayout& run, std::ostream& log) {
  const auto t0 = Clock::now();
  const Dataset d = load(run);
  const auto& sc = config.spatial;
  const int rank = static_cast<int>(d.atlas.rank());
  auto model = xformmodels::make_spatial_model(xformmodels::spatial_arch(rank, sc.widths), sc.lambda_s, sc.ncc_window,
                                               derive_seed(config.seed, streams::spatial_init));
  xformmodels::TrainOptions opt;
  opt.steps = sc.steps;
  opt.seed = derive_seed(config.seed, streams::spatial_train);
  opt.adam.learning_rate = sc.learning_rate;
  opt.on_step = [&](int step, double loss) {
    if ((step + 1) % 250 == 0) log << "  spatial step " << step + 1 << " loss " << num(loss) << '\n' << std::flush;
  };
  const auto result = xformmodels::train_spatial(std::move(model), d.atlas, d.unlabeled, opt);
  save_spatial(ensure_parent(run.spatial_model()), result.model);
  auto curve = open_out(run.curve("spatial"));
  curve << "step,forward_loss,inverse_loss\n";
  for (std::size_t s = 0; s < result.forward_losses.size(); ++s) {
    curve << s << ',' << num(result.forward_losses[s]) << ',' << num(result.inverse_losses[s]) << '\n';
  }
  log << "train-spatial: " << sc.steps << " steps in " << num(seconds_since(t0)) << " s\n";
}

void stage_train_appearance(const PipelineConfig& config, const RunLayout& run, std::ostream& log) {
  const auto t0 = Clock::now();
  const Dataset d = load(run);
  const auto spatial = load_spatial_stage(run);
  const auto& ac = config.appearance;
  const int rank = static_cast<int>(d.atlas.rank());
  auto model = xformmodels::make_appearance_model(xformmodels::appearance_arch(rank, ac.widths), ac.lambda_a,
                                                  derive_seed(config.seed, streams::appearance_init));
  xformmodels::TrainOptions opt;
  opt.steps = ac.steps;
  opt.seed = derive_seed(config.seed, streams::appearance_train);
  opt.adam.learning_rate = ac.learning_rate;
  opt.on_step = [&](int step, double loss) {
    if ((step + 1) % 250 == 0) log << "  appearance step " << step + 1 << " loss " << num(loss) << '\n' << std::flush;
  };
  const auto result =
      xformmodels::train_appearance(std::move(model), d.atlas, d.atlas_labels, d.unlabeled, spatial, opt);
  save_appearance(ensure_parent(run.appearance_model()), result.model);
  auto curve = open_out(run.curve("appearance"));
  curve << "step,loss\n";
  for (std::size_t s = 0; s < result.losses.size(); ++s) curve << s << ',' << num(result.losses[s]) << '\n';
  log << "train-appearance: " << ac.steps << " steps in " << num(seconds_since(t0)) << " s\n";
}

void stage_train_segmenter(const PipelineConfig& config, const RunLayout& run, const std::string& method,
                           std::ostream& log) {
  const auto t0 = Clock::now();
  const Dataset d = load(run);
  std::unique_ptr<segeval::ExampleSource> source;
  std::unique_ptr<augment::TransformBank> bank;

  if (method == "atlas-only") {
    source = std::make_unique<segeval::PoolSource>(std::vector<Volume>{d.atlas}, std::vector<LabelMap>{d.atlas_labels});
  } else if (method == "sas-aug" || method == "supervised") {
    std::vector<Volume> images{d.atlas};
    std::vector<LabelMap> labels{d.atlas_labels};
    if (method == "supervised") {
      if (d.unlabeled_labels.size() != d.unlabeled.size()) {
        throw DataError("supervised: the manifest lists no labels for the unlabeled pool");
      }
      labels.insert(labels.end(), d.unlabeled_labels.begin(), d.unlabeled_labels.end());
    } else {
      const auto spatial = load_spatial_stage(run);
      std::vector<LabelMap> pseudo(d.unlabeled.size());
      parallel_for(d.unlabeled.size(), config.threads, [&](std::size_t i) {
        pseudo[i] = augment::sas_propagate(spatial, d.atlas, d.atlas_labels, d.unlabeled[i]);
      });
      labels.insert(labels.end(), pseudo.begin(), pseudo.end());
    }
    images.insert(images.end(), d.unlabeled.begin(), d.unlabeled.end());
    source = std::make_unique<segeval::PoolSource>(std::move(images), std::move(labels));
  } else if (method == "rand-aug" || method == "ours-indep" || method == "ours-coupled" ||
             method == "ours-indep+rand-aug") {
    const auto mode = synthesis_mode_of(method);
    if (mode != augment::SynthesisMode::rand_aug) {
      bank = std::make_unique<augment::TransformBank>(d.atlas, d.atlas_labels, load_spatial_stage(run),
                                                      load_appearance_stage(run), d.unlabeled, config.threads);
    }
    source = std::make_unique<segeval::SynthesisSource>(d.atlas, d.atlas_labels, bank.get(), mode, d.unlabeled.size(),
                                                        derive_seed(config.seed, streams::plans), config.rand_aug);
  } else {
    throw std::invalid_argument("no segmenter is trained for method '" + method + "'");
  }

  const auto& sc = config.segmenter;
  auto model = segeval::make_seg_model(label_count_of(d), segeval::slice_shape_of(d.atlas.shape), sc.widths,
                                       derive_seed(config.seed, streams::segmenter_init));
  segeval::SegTrainConfig tc;
  tc.max_epochs = sc.max_epochs;
  tc.steps_per_epoch = sc.steps_per_epoch;
  tc.batch_size = sc.batch_size;
  tc.patience = sc.patience;
  tc.seed = derive_seed(config.seed, streams::segmenter_train);
  tc.threads = config.threads;
  tc.adam.learning_rate = sc.learning_rate;
  tc.on_epoch = [&](int epoch, double loss, double val) {
    log << "  " << method << " epoch " << epoch << " loss " << num(loss) << " val dice " << num(val) << '\n'
        << std::flush;
  };
  const auto result = segeval::train_segmenter(std::move(model), *source, d.val_images, d.val_labels, tc);
  save_segmenter(ensure_parent(run.segmenter(method)), result.model);

  auto curve = open_out(run.curve("seg_" + method));
  curve << "epoch,train_loss,val_dice\n";
  for (std::size_t e = 0; e < result.val_curve.size(); ++e) {
    curve << e << ',' << num(result.train_losses[e]) << ',' << num(result.val_curve[e]) << '\n';
  }

  std::vector<LabelMap> predictions(d.test_images.size());
  parallel_for(d.test_images.size(), config.threads,
               [&](std::size_t i) { predictions[i] = segeval::segment(result.model, d.test_images[i]); });
  write_predictions(run, method, d, predictions);
  log << "train-seg " << method << ": best epoch " << result.best_epoch << ", val dice " << num(result.best_val_dice)
      << " in " << num(seconds_since(t0)) << " s\n";
}

void stage_baseline_sas(const PipelineConfig& config, const RunLayout& run, std::ostream& log) {
  const Dataset d = load(run);
  const auto spatial = load_spatial_stage(run);
  std::vector<LabelMap> predictions(d.test_images.size());
  parallel_for(d.test_images.size(), config.threads, [&](std::size_t i) {
    predictions[i] = augment::sas_propagate(spatial, d.atlas, d.atlas_labels, d.test_images[i]);
  });
  write_predictions(run, "sas", d, predictions);
  log << "baseline-sas: " << predictions.size() << " test subjects\n";
}

void stage_synth_dump(const PipelineConfig& config, const RunLayout& run, const std::string& mode_name,
                      std::size_t count, const fs::path& dir, std::ostream& log) {
  const Dataset d = load(run);
  const auto mode = augment::parse_synthesis_mode(mode_name);
  std::unique_ptr<augment::TransformBank> bank;
  if (mode != augment::SynthesisMode::rand_aug) {
    bank = std::make_unique<augment::TransformBank>(d.atlas, d.atlas_labels, load_spatial_stage(run),
                                                    load_appearance_stage(run), d.unlabeled, config.threads);
  }
  const auto plans = augment::enumerate_plans(mode, d.unlabeled.size(), derive_seed(config.seed, streams::synth_dump), count);
  fs::create_directories(dir);
  parallel_for(plans.size(), config.threads, [&](std::size_t k) {
    const auto& plan = plans[k];
    const auto ex = bank ? bank->synthesize(plan, config.rand_aug)
                         : augment::rand_aug_example(d.atlas, d.atlas_labels, config.rand_aug, plan.seed);
    char stem[32];
    std::snprintf(stem, sizeof stem, "synth_%05zu", k);
    write_vtf(dir / (std::string(stem) + "_img.vtf"), ex.image);
    write_vtf(dir / (std::string(stem) + "_lab.vtf"), ex.labels);
    nlohmann::json side = {{"mode", augment::to_string(plan.mode)}, {"seed", plan.seed}, {"counter", plan.counter}};
    side["spatial_target"] = plan.spatial_target ? nlohmann::json(*plan.spatial_target) : nlohmann::json(nullptr);
    side["appearance_target"] =
        plan.appearance_target ? nlohmann::json(*plan.appearance_target) : nlohmann::json(nullptr);
    auto os = open_out(dir / (std::string(stem) + ".json"));
    os << side.dump(2) << '\n';
  });
  log << "synth dump: " << plans.size() << " " << augment::to_string(mode) << " examples in " << dir.string() << '\n';
}

segeval::EvalReport stage_evaluate(const PipelineConfig& config, const RunLayout& run, std::ostream& log) {
  const Dataset d = load(run);
  const auto methods = config.methods.empty() ? all_methods() : config.methods;
  std::vector<segeval::MethodPredictions> preds;
  for (const auto& m : methods) {
    segeval::MethodPredictions p{m, {}};
    for (const auto& id : d.test_ids) {
      const auto path = run.predictions(m) / (id + ".vtf");
      if (fs::exists(path)) p.by_subject.emplace(id, read_label_vtf(path));
    }
    preds.push_back(std::move(p));
  }
  auto report = segeval::evaluate_suite(preds, d.test_ids, d.test_labels, d.atlas_labels, label_count_of(d),
                                        config.baseline, d.label_names);

  const auto dir = run.report_dir();
  fs::create_directories(dir);
  segeval::write_report_csv(dir / "dice.csv", report);
  auto summary = segeval::report_summary_json(report);
  const auto n = d.unlabeled.size();
  summary["synthesis"] = {{"unlabeled_subjects", n},
                          {"indep_distinct_plans", augment::distinct_plan_count(augment::SynthesisMode::indep, n)},
                          {"coupled_distinct_plans", augment::distinct_plan_count(augment::SynthesisMode::coupled, n)}};
  summary["seed"] = config.seed;
  {
    auto os = open_out(dir / "summary.json");
    os << summary.dump(2) << '\n';
  }
  {
    // Per-subject mean Dice of each method against the baseline (plot-ready).
    auto os = open_out(dir / "improvements.csv");
    os << "method,subject,baseline_dice,method_dice,improvement\n";
    const auto base = report.subject_means(report.baseline);
    for (const auto& m : report.methods) {
      const auto means = report.subject_means(m.name);
      for (std::size_t s = 0; s < means.size(); ++s) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f\n", m.name.c_str(), report.subjects[s].c_str(), base[s],
                      means[s], means[s] - base[s]);
        os << buf;
      }
    }
  }
  const auto table = segeval::format_report_table(report);
  {
    auto os = open_out(dir / "table.txt");
    os << table;
  }
  log << table;
  return report;
}

segeval::EvalReport run_pipeline(const PipelineConfig& config, const RunLayout& run, std::ostream& log) {
  config.validate();
  write_resolved_config(run, config);
  stage_gen_toy(config, run, log);
  const auto methods = config.methods.empty() ? all_methods() : config.methods;
  auto wanted = [&](const std::string& m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  const bool need_spatial = std::any_of(methods.begin(), methods.end(), [](const auto& m) {
    return m == "sas" || m == "sas-aug" || m.rfind("ours-", 0) == 0;
  });
  const bool need_appearance =
      std::any_of(methods.begin(), methods.end(), [](const auto& m) { return m.rfind("ours-", 0) == 0; });
  if (need_spatial) stage_train_spatial(config, run, log);
  if (need_appearance) stage_train_appearance(config, run, log);
  if (wanted("sas")) stage_baseline_sas(config, run, log);
  for (const auto& m : methods) {
    if (m != "sas") stage_train_segmenter(config, run, m, log);
  }
  return stage_evaluate(config, run, log);
}

}  // namespace augmorph::dataio
