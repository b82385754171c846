// Command-line front end for the augmentation experiment. Each subcommand is
// one pipeline stage working in the run directory given by --out.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "augmorph/dataio/errors.hpp"
#include "augmorph/dataio/pipeline.hpp"
#include "augmorph/diffcore/tensor.hpp"

using namespace augmorph;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numeric = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned-transform data augmentation for one-shot segmentation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out = "run";
  app.add_option("--config", config_path, "JSON config; keys override the built-in defaults")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed (default 42)");
  app.add_option("--out", out, "run directory")->capture_default_str();
  app.add_option("--threads", threads, "worker threads (default 1)")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-toy", "generate the toy corpus into <out>/data");
  auto* spatial = app.add_subcommand("train-spatial", "train the forward and inverse registration networks");
  auto* appearance = app.add_subcommand("train-appearance", "train the appearance network");
  auto* synth = app.add_subcommand("synth", "synthesis utilities");
  synth->require_subcommand(1);
  auto* dump = synth->add_subcommand("dump", "write synthesized examples as VTF pairs with provenance sidecars");
  std::string dump_mode = "indep";
  std::size_t dump_count = 10;
  std::string dump_dir;
  dump->add_option("--mode", dump_mode, "indep, coupled, rand-aug or indep+rand")->capture_default_str();
  dump->add_option("--count", dump_count, "number of examples")->capture_default_str();
  dump->add_option("--dir", dump_dir, "output directory (default <out>/synth)");

  auto* seg = app.add_subcommand("train-seg", "train one segmenter and predict the test set");
  std::string seg_mode;
  seg->add_option("--mode", seg_mode, "training data")
      ->required()
      ->check(CLI::IsMember({"indep", "coupled", "rand-aug", "indep+rand", "sas-aug", "atlas-only", "supervised"}));
  auto* sas = app.add_subcommand("baseline-sas", "single-atlas segmentation of the test set");
  auto* evaluate = app.add_subcommand("evaluate", "score all predictions and write the report files");
  auto* report = app.add_subcommand("report", "evaluate and print the results table");
  auto* run = app.add_subcommand("run", "every stage in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e);
      return ok;
    }
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return usage;
  }

  try {
    dataio::PipelineConfig config;
    if (!config_path.empty()) config = dataio::read_config(config_path, config);
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
    config.validate();

    const dataio::RunLayout layout{out};
    std::filesystem::create_directories(layout.root);
    dataio::write_resolved_config(layout, config);

    if (gen->parsed()) dataio::stage_gen_toy(config, layout, std::cout);
    if (spatial->parsed()) dataio::stage_train_spatial(config, layout, std::cout);
    if (appearance->parsed()) dataio::stage_train_appearance(config, layout, std::cout);
    if (dump->parsed()) {
      const std::filesystem::path dir = dump_dir.empty() ? layout.root / "synth" : std::filesystem::path(dump_dir);
      dataio::stage_synth_dump(config, layout, dump_mode, dump_count, dir, std::cout);
    }
    if (seg->parsed()) dataio::stage_train_segmenter(config, layout, dataio::method_for_mode(seg_mode), std::cout);
    if (sas->parsed()) dataio::stage_baseline_sas(config, layout, std::cout);
    if (evaluate->parsed()) {
      std::ostringstream quiet;
      const auto r = dataio::stage_evaluate(config, layout, quiet);
      std::cout << "evaluate: " << r.methods.size() << " methods on " << r.subjects.size() << " subjects, report in "
                << layout.report_dir().string() << '\n';
    }
    if (report->parsed()) dataio::stage_evaluate(config, layout, std::cout);
    if (run->parsed()) dataio::run_pipeline(config, layout, std::cout);
  } catch (const diffcore::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return numeric;
  } catch (const dataio::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data;
  } catch (const diffcore::ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  }
  return ok;
}
