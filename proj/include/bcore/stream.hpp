#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bcore/coreset.hpp"
#include "bcore/data.hpp"
#include "bcore/inference.hpp"
#include "bcore/pipeline.hpp"

namespace bcore {

enum class StreamMode { pool_full, coreset_aggregate, random_aggregate };

std::string to_string(StreamMode m);
StreamMode stream_mode_from_string(const std::string& s);

/// How the coreset arms standardize their training set at each step.
enum class CoresetStandardization {
  batch_moments,    // pooled moments of every raw batch seen so far, kept as O(F) summaries
  coreset_entries,  // moments of the stored coreset rows, weights ignored
};

std::string to_string(CoresetStandardization s);
CoresetStandardization coreset_standardization_from_string(const std::string& s);

/// One arriving batch: raw (unstandardized) training data and the test set
/// that becomes available with it.
struct StreamBatch {
  std::uint32_t id = 0;
  Dataset train;
  Dataset test;
};

struct StreamPlan {
  std::vector<StreamBatch> batches;
  StreamMode mode = StreamMode::pool_full;
  ReductionSettings reduction;  // method is forced to random for random_aggregate
  HmcSettings hmc;
  Eigen::Index predict_draws = kDefaultPredictDraws;
  /// Evaluate step i on the union of test sets 1..i (true) or on test set i.
  bool evaluate_on_union = true;
  CoresetStandardization coreset_standardization = CoresetStandardization::batch_moments;
  /// Step i draws from SeedTree(seed).child("step", i): "reduce" for the
  /// batch coreset, "hmc" for the sampler.
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  std::size_t stored_samples = 0;
  std::size_t stored_minority = 0;
  double train_seconds = 0.0;
  double reduction_seconds = 0.0;
  double accuracy = 0.0;
  std::size_t eval_samples = 0;
  double acceptance_rate = 0.0;
  double step_size = 0.0;
  std::optional<double> batch_relative_error;  // coreset arms only
};

struct StreamRun {
  std::vector<StepRecord> steps;
  /// Per-batch coresets in arrival order (empty for pool_full). Never
  /// modified after they are stored.
  std::vector<Coreset> batch_coresets;
};

StreamRun run_stream(const StreamPlan& plan);

}  // namespace bcore
