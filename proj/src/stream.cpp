#include "bcore/stream.hpp"

#include <set>
#include <stdexcept>

namespace bcore {

std::string to_string(StreamMode m) {
  switch (m) {
    case StreamMode::pool_full: return "pool";
    case StreamMode::coreset_aggregate: return "coreset";
    case StreamMode::random_aggregate: return "random";
  }
  return "unknown";
}

StreamMode stream_mode_from_string(const std::string& s) {
  if (s == "pool" || s == "pool_full") return StreamMode::pool_full;
  if (s == "coreset" || s == "coreset_aggregate") return StreamMode::coreset_aggregate;
  if (s == "random" || s == "random_aggregate") return StreamMode::random_aggregate;
  throw ConfigError("unknown stream mode '" + s + "' (expected pool, coreset or random)");
}

std::string to_string(CoresetStandardization s) {
  return s == CoresetStandardization::batch_moments ? "batch_moments" : "coreset_entries";
}

CoresetStandardization coreset_standardization_from_string(const std::string& s) {
  if (s == "batch_moments") return CoresetStandardization::batch_moments;
  if (s == "coreset_entries") return CoresetStandardization::coreset_entries;
  throw ConfigError("unknown coreset standardization '" + s +
                    "' (expected batch_moments or coreset_entries)");
}

void StreamPlan::validate() const {
  if (batches.empty()) throw ConfigError("stream plan has no batches");
  std::set<std::uint32_t> ids;
  const Eigen::Index f = batches.front().train.features();
  for (const auto& b : batches) {
    if (!ids.insert(b.id).second) throw ConfigError("stream batch ids must be distinct");
    if (b.train.features() != f || b.test.features() != f) {
      throw ConfigError("stream batches disagree on the feature count");
    }
  }
  if (mode != StreamMode::pool_full && reduction.budget == 0) {
    throw ConfigError("stream coreset budget must be positive");
  }
  if (reduction.dimension < 1) throw ConfigError("embedding dimension must be positive");
  if (predict_draws < 1) throw ConfigError("predict_draws must be positive");
  hmc.validate();
}

namespace {

Dataset test_set_for_step(const StreamPlan& plan, std::size_t i) {
  if (!plan.evaluate_on_union) return plan.batches[i].test;
  std::vector<Dataset> parts;
  parts.reserve(i + 1);
  for (std::size_t k = 0; k <= i; ++k) parts.push_back(plan.batches[k].test);
  return Dataset::concat(parts);
}

}  // namespace

StreamRun run_stream(const StreamPlan& plan) {
  plan.validate();
  const SeedTree root(plan.seed);
  ReductionSettings reduction = plan.reduction;
  if (plan.mode == StreamMode::random_aggregate) reduction.method = Reduction::random;

  StreamRun run;
  FeatureMoments moments;
  // Coreset arms keep only the raw rows their coresets reference; the rest of
  // each batch is dropped once it has been reduced.
  std::vector<Dataset> kept_rows;
  std::vector<Eigen::VectorXd> kept_weights;
  std::vector<Dataset> pooled;

  for (std::size_t i = 0; i < plan.batches.size(); ++i) {
    const StreamBatch& batch = plan.batches[i];
    const SeedTree step_seeds = root.child("step", i);
    moments.merge(FeatureMoments::of(batch.train));

    StepRecord rec;
    rec.step = i + 1;
    StandardizationParams params;
    Dataset train_raw = batch.train;
    Eigen::VectorXd weights;

    if (plan.mode == StreamMode::pool_full) {
      pooled.push_back(batch.train);
      train_raw = Dataset::concat(pooled);
      params = moments.params();
      weights = Eigen::VectorXd::Ones(train_raw.size());
    } else {
      Stopwatch clock;
      const StandardizationParams own = fit_standardization(batch.train);
      Coreset c = reduce_batch(apply_standardization(batch.train, own), reduction, batch.id,
                               step_seeds.child("reduce"));
      WeightedSubset sel = coreset_rows(batch.train, c, batch.id);
      rec.reduction_seconds = clock.seconds();
      rec.batch_relative_error = c.diagnostics().relative_error;
      kept_rows.push_back(std::move(sel.data));
      kept_weights.push_back(std::move(sel.weights));
      run.batch_coresets.push_back(std::move(c));

      train_raw = Dataset::concat(kept_rows);
      weights.resize(train_raw.size());
      Eigen::Index off = 0;
      for (const auto& w : kept_weights) {
        weights.segment(off, w.size()) = w;
        off += w.size();
      }
      params = plan.coreset_standardization == CoresetStandardization::batch_moments
                   ? moments.params()
                   : fit_standardization(train_raw);
    }

    if (!run.batch_coresets.empty()) {
      rec.stored_samples = aggregate(run.batch_coresets).size();
    } else {
      rec.stored_samples = static_cast<std::size_t>(train_raw.size());
    }
    rec.stored_minority = static_cast<std::size_t>(train_raw.count(Label::malicious));
    const Dataset train = apply_standardization(train_raw, params);
    const TrainedPosterior fit = train_blr(train, weights, plan.hmc, step_seeds.child("hmc").seed());
    rec.train_seconds = fit.seconds;
    rec.acceptance_rate = fit.posterior.acceptance_rate;
    rec.step_size = fit.posterior.step_size;

    const Dataset test = apply_standardization(test_set_for_step(plan, i), params);
    rec.eval_samples = static_cast<std::size_t>(test.size());
    rec.accuracy = evaluate_blr(fit.posterior, test, plan.predict_draws);
    run.steps.push_back(rec);
  }
  return run;
}

}  // namespace bcore
