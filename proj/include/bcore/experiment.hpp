#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bcore/common.hpp"
#include "bcore/data.hpp"
#include "bcore/inference.hpp"
#include "bcore/pipeline.hpp"
#include "bcore/stream.hpp"

namespace bcore {

struct DataSource {
  enum class Kind { synthetic, csv } kind = Kind::synthetic;
  // synthetic
  Eigen::Index features = 20;
  double separation = 4.0;
  /// Size of the synthetic pool per class; 0 sizes it to the largest demand.
  Eigen::Index pool_positives = 0;
  Eigen::Index pool_negatives = 0;
  // csv
  std::vector<std::filesystem::path> paths;
  CsvSchema schema;
};

struct StreamConfig {
  std::size_t steps = 5;
  std::vector<std::size_t> budgets{100, 500};
  std::vector<StreamMode> modes{StreamMode::pool_full, StreamMode::coreset_aggregate,
                                StreamMode::random_aggregate};
  bool evaluate_on_union = true;
  CoresetStandardization standardization = CoresetStandardization::batch_moments;
};

enum class PosteriorPersistence { none, first_trial, all };

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DataSource data;
  std::size_t datasets = 5;
  ClassCounts train{800, 80};
  ClassCounts test{200, 200};
  Eigen::Index embedding_dimension = 500;
  WeightingDistribution weighting = WeightingDistribution::laplace;
  Reduction method = Reduction::giga;
  std::vector<std::size_t> budgets{100, 500, 1000};
  /// Size of the random-subset arm; 0 matches the entry count of the
  /// smallest-budget coreset of the same dataset.
  std::size_t random_subset_size = 0;
  HmcSettings hmc;
  Eigen::Index predict_draws = kDefaultPredictDraws;
  SvmSettings svm;
  std::size_t repetitions = 10;
  /// Worker threads for independent conditions; 0 = hardware concurrency.
  std::size_t parallelism = 0;
  /// Run every timed job alone so wall-clock numbers are not contended.
  bool sequential_timing = false;
  PosteriorPersistence save_posteriors = PosteriorPersistence::first_trial;
  StreamConfig stream;

  void validate() const;
  Json to_json() const;
  static ExperimentConfig from_json(const Json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// One train/test pair in raw feature units, plus the training-set
/// standardization applied to both.
struct PreparedSplit {
  Dataset train_raw;
  Dataset test_raw;
  StandardizationParams standardization;

  Dataset train() const { return apply_standardization(train_raw, standardization); }
  Dataset test() const { return apply_standardization(test_raw, standardization); }
};

/// Loads or generates the source pool named by the config. Seed path: "data".
Dataset load_source(const ExperimentConfig& config);

/// The config's `datasets` train/test pairs; pair d uses seed path ("split", d).
std::vector<PreparedSplit> prepare_splits(const ExperimentConfig& config, const Dataset& pool);

/// Stream batches (train + per-step test) for one trial, drawn disjointly
/// from the pool with seed path ("stream_split", trial).
std::vector<StreamBatch> prepare_stream_batches(const ExperimentConfig& config, const Dataset& pool,
                                                std::size_t trial);

std::string coreset_condition(std::size_t budget);

struct TrialRecord {
  std::size_t dataset = 0;
  std::string condition;
  std::size_t trial = 0;
  std::optional<double> accuracy;
  double train_seconds = 0.0;
  std::size_t train_size = 0;
  std::size_t train_minority = 0;
  std::optional<double> acceptance_rate;
  std::optional<double> step_size;
  std::string error;  // empty on success

  Json to_json() const;
  static TrialRecord from_json(const Json& j);
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. The first
/// exception thrown is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Offline grid. Writes under `out`: config.json, run.json, datasets/,
/// coresets/, trials.json, posteriors/ (per config), then the reports.
void cmd_offline(const ExperimentConfig& config, const std::filesystem::path& out);

/// Streaming grid. Writes config.json, run.json, stream_coresets/,
/// stream_records.json, then the reports.
void cmd_stream(const ExperimentConfig& config, const std::filesystem::path& out);

enum class ReportFormat { csv, json };

/// Rebuilds report.csv / report.json (offline) or stream_report.csv /
/// stream_report.json (stream) from the artifacts in `run_dir`. Returns the
/// written file. Throws DataError listing missing or corrupt artifacts.
std::filesystem::path cmd_report(const std::filesystem::path& run_dir, ReportFormat format);

/// Number of parallel workers the config resolves to.
std::size_t resolve_parallelism(const ExperimentConfig& config);

}  // namespace bcore
