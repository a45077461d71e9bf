// bcore: coreset compression, weighted BLR inference and the offline /
// streaming experiment runners.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bcore/coreset.hpp"
#include "bcore/data.hpp"
#include "bcore/experiment.hpp"
#include "bcore/inference.hpp"
#include "bcore/pipeline.hpp"
#include "bcore/stream.hpp"

namespace fs = std::filesystem;
using namespace bcore;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kData = 2, kNumerical = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::size_t> budgets;
  std::string mode;
  bool sequential_timing = false;

  std::string data;
  std::string coreset;
  std::string posterior;
  std::size_t budget = 100;
  std::string method = "giga";
  Eigen::Index dimension = 500;
  std::string weighting = "laplace";
  std::uint32_t batch = 0;
  Eigen::Index draws = kDefaultPredictDraws;
  std::string format = "both";
  std::string run_dir;
};

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.budgets.empty()) {
    c.budgets = o.budgets;
    c.stream.budgets = o.budgets;
  }
  if (!o.mode.empty()) c.stream.modes = {stream_mode_from_string(o.mode)};
  if (o.sequential_timing) c.sequential_timing = true;
  c.validate();
  return c;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  return o.out;
}

/// Loads a dataset CSV written by `prepare` and standardizes it with the
/// parameters recorded in its sidecar; without them, fits on the data itself
/// when `fit_if_missing`.
Dataset load_standardized(const std::string& path, bool fit_if_missing) {
  if (path.empty()) throw ConfigError("--data is required");
  LoadedDataset loaded = load_dataset(path);
  if (loaded.provenance.standardization) {
    return apply_standardization(loaded.data, *loaded.provenance.standardization);
  }
  if (fit_if_missing) return apply_standardization(loaded.data, fit_standardization(loaded.data));
  std::cerr << "warning: " << path << " has no standardization record; using raw features\n";
  return loaded.data;
}

void run_prepare(const Options& o) {
  const ExperimentConfig c = load_config(o);
  const fs::path out = require_out(o);
  fs::create_directories(out / "datasets");
  const Dataset pool = load_source(c);
  const auto splits = prepare_splits(c, pool);
  const SeedTree root(c.seed);
  for (std::size_t d = 0; d < splits.size(); ++d) {
    const DatasetProvenance prov{"prepare", root.child("split", d).seed(), 0, splits[d].standardization};
    const std::string stem = "d" + std::to_string(d);
    save_dataset(out / "datasets" / (stem + "_train.csv"), splits[d].train_raw, prov);
    save_dataset(out / "datasets" / (stem + "_test.csv"), splits[d].test_raw, prov);
  }
  write_text_file(out / "config.json", c.to_json().dump(1) + "\n");
  std::cout << "wrote " << splits.size() << " train/test pairs to " << (out / "datasets").string() << "\n";
}

void run_coreset(const Options& o) {
  const ReductionSettings settings{reduction_from_string(o.method), o.budget, o.dimension,
                                   weighting_from_string(o.weighting)};
  if (settings.budget == 0) throw ConfigError("--budget must be positive");
  if (settings.dimension < 1) throw ConfigError("--dimension must be positive");
  const Dataset data = load_standardized(o.data, true);
  const std::uint64_t seed = o.seed.value_or(1);
  Coreset c = reduce_batch(data, settings, o.batch, SeedTree(seed));
  save_coreset(require_out(o), c);
  std::cout << Json{{"entries", c.size()},
                    {"relative_error", c.diagnostics().relative_error.value_or(-1.0)},
                    {"wall_clock_seconds", c.diagnostics().wall_clock_seconds}}
                   .dump()
            << "\n";
}

void run_train(const Options& o) {
  Dataset data = load_standardized(o.data, true);
  Eigen::VectorXd weights = Eigen::VectorXd::Ones(data.size());
  if (!o.coreset.empty()) {
    WeightedSubset sel = coreset_rows(data, load_coreset(o.coreset), o.batch);
    data = std::move(sel.data);
    weights = std::move(sel.weights);
  }
  const HmcSettings hmc = o.config.empty() ? HmcSettings{} : load_config(o).hmc;
  const TrainedPosterior fit = train_blr(data, weights, hmc, o.seed.value_or(1));
  save_posterior(require_out(o), fit.posterior);
  std::cout << Json{{"draws", fit.posterior.count()},
                    {"acceptance_rate", fit.posterior.acceptance_rate},
                    {"step_size", fit.posterior.step_size},
                    {"train_seconds", fit.seconds}}
                   .dump()
            << "\n";
}

void run_eval(const Options& o) {
  if (o.posterior.empty()) throw ConfigError("--posterior is required");
  const PosteriorSamples posterior = load_posterior(o.posterior);
  const Dataset test = load_standardized(o.data, false);
  const Json result{{"accuracy", evaluate_blr(posterior, test, o.draws)},
                    {"samples", test.size()},
                    {"draws", std::min(o.draws, posterior.count())}};
  if (!o.out.empty()) write_text_file(o.out, result.dump() + "\n");
  std::cout << result.dump() << "\n";
}

void run_report(const Options& o) {
  const std::string dir = !o.run_dir.empty() ? o.run_dir : o.out;
  if (dir.empty()) throw ConfigError("report needs a run directory");
  if (o.format == "csv" || o.format == "both") std::cout << cmd_report(dir, ReportFormat::csv).string() << "\n";
  if (o.format == "json" || o.format == "both") std::cout << cmd_report(dir, ReportFormat::json).string() << "\n";
}

fs::path failure_path(const Options& o) {
  if (o.out.empty()) return "bcore_failure.json";
  const fs::path out(o.out);
  if (fs::is_directory(out)) return out / "numerical_failure.json";
  return fs::path(o.out + ".failure.json");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian coreset compression and weighted logistic-regression inference"};
  app.require_subcommand(1);
  Options o;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config (JSON)");
    sub->add_option("--seed", o.seed, "Root seed, overrides the config");
    sub->add_option("--out", o.out, "Output directory or file");
  };

  auto* prepare = app.add_subcommand("prepare", "Draw the train/test pairs of a config and save them");
  add_common(prepare);

  auto* coreset = app.add_subcommand("coreset", "Build a coreset of one training CSV");
  add_common(coreset);
  coreset->add_option("--data", o.data, "Training CSV written by prepare")->required();
  coreset->add_option("--budget", o.budget, "Iteration budget m");
  coreset->add_option("--method", o.method, "giga | frankwolfe | random");
  coreset->add_option("--dimension", o.dimension, "Embedding dimension D");
  coreset->add_option("--weighting", o.weighting, "laplace | prior");
  coreset->add_option("--batch", o.batch, "Batch id stamped on the entries");

  auto* train = app.add_subcommand("train", "Sample the weighted BLR posterior by HMC");
  add_common(train);
  train->add_option("--data", o.data, "Training CSV")->required();
  train->add_option("--coreset", o.coreset, "Coreset JSON selecting weighted rows");
  train->add_option("--batch", o.batch, "Batch id of the coreset entries to use");

  auto* eval = app.add_subcommand("eval", "Posterior-predictive accuracy on a test CSV");
  add_common(eval);
  eval->add_option("--posterior", o.posterior, "Posterior file written by train")->required();
  eval->add_option("--data", o.data, "Test CSV")->required();
  eval->add_option("--draws", o.draws, "Number of trailing draws to average");

  auto* offline = app.add_subcommand("offline", "Run the offline experiment grid");
  add_common(offline);
  offline->add_option("--budgets", o.budgets, "Coreset budgets, comma separated")->delimiter(',');
  offline->add_flag("--sequential-timing", o.sequential_timing, "Run timed jobs one at a time");

  auto* stream = app.add_subcommand("stream", "Run the streaming experiment");
  add_common(stream);
  stream->add_option("--budgets", o.budgets, "Coreset budgets, comma separated")->delimiter(',');
  stream->add_option("--mode", o.mode, "pool | coreset | random (default: all in config)");
  stream->add_flag("--sequential-timing", o.sequential_timing, "Run timed jobs one at a time");

  auto* report = app.add_subcommand("report", "Regenerate reports from a run directory");
  report->add_option("run_dir", o.run_dir, "Run directory");
  report->add_option("--out", o.out, "Run directory (alternative to the positional)");
  report->add_option("--format", o.format, "csv | json | both")->check(CLI::IsMember({"csv", "json", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*prepare) run_prepare(o);
    else if (*coreset) run_coreset(o);
    else if (*train) run_train(o);
    else if (*eval) run_eval(o);
    else if (*offline) cmd_offline(load_config(o), require_out(o));
    else if (*stream) cmd_stream(load_config(o), require_out(o));
    else if (*report) run_report(o);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    const fs::path path = failure_path(o);
    try {
      write_text_file(path, Json{{"error", e.what()}, {"diagnostics", e.diagnostics()}}.dump(1) + "\n");
      std::cerr << "numerical failure: " << e.what() << " (diagnostics: " << path.string() << ")\n";
    } catch (const std::exception&) {
      std::cerr << "numerical failure: " << e.what() << "\n";
    }
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
}
