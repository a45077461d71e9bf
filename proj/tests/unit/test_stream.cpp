#include <doctest.h>

#include "bcore/stream.hpp"

using namespace bcore;

namespace {

std::vector<StreamBatch> make_batches(std::size_t steps, std::uint64_t seed) {
  const ClassCounts train{100, 10}, test{30, 30};
  const Dataset pool = generate_synthetic(400 * 2, 200, 5, 4.0, seed);
  std::vector<ClassCounts> counts;
  for (std::size_t i = 0; i < steps; ++i) {
    counts.push_back(train);
    counts.push_back(test);
  }
  const auto parts = disjoint_stratified_splits(pool, counts, seed + 1);
  std::vector<StreamBatch> out;
  for (std::size_t i = 0; i < steps; ++i) {
    out.push_back({static_cast<std::uint32_t>(i + 1), parts[2 * i], parts[2 * i + 1]});
  }
  return out;
}

StreamPlan small_plan(StreamMode mode, std::size_t steps = 3) {
  StreamPlan p;
  p.batches = make_batches(steps, 7);
  p.mode = mode;
  p.reduction.budget = 20;
  p.reduction.dimension = 60;
  p.hmc.total_samples = 600;
  p.predict_draws = 200;
  p.seed = 99;
  return p;
}

bool same_entries(const Coreset& a, const Coreset& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a.entries()[k].id != b.entries()[k].id || a.entries()[k].weight != b.entries()[k].weight) return false;
  }
  return true;
}

void check_same_up_to_timing(const StreamRun& a, const StreamRun& b) {
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].stored_samples == b.steps[i].stored_samples);
    CHECK(a.steps[i].accuracy == b.steps[i].accuracy);
    CHECK(a.steps[i].step_size == b.steps[i].step_size);
    CHECK(a.steps[i].acceptance_rate == b.steps[i].acceptance_rate);
  }
  REQUIRE(a.batch_coresets.size() == b.batch_coresets.size());
  for (std::size_t i = 0; i < a.batch_coresets.size(); ++i) {
    CHECK(same_entries(a.batch_coresets[i], b.batch_coresets[i]));
  }
}

}  // namespace

TEST_CASE("pool arm stores every raw sample") {
  const StreamRun run = run_stream(small_plan(StreamMode::pool_full));
  REQUIRE(run.steps.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(run.steps[i].step == i + 1);
    CHECK(run.steps[i].stored_samples == 110 * (i + 1));
    CHECK(run.steps[i].stored_minority == 10 * (i + 1));
    CHECK(run.steps[i].eval_samples == 60 * (i + 1));
    CHECK_FALSE(run.steps[i].batch_relative_error.has_value());
    CHECK(run.steps[i].accuracy >= 0.0);
    CHECK(run.steps[i].accuracy <= 1.0);
  }
  CHECK(run.batch_coresets.empty());
}

TEST_CASE("coreset arm stores the sum of per-batch coreset entries") {
  const StreamRun run = run_stream(small_plan(StreamMode::coreset_aggregate));
  REQUIRE(run.batch_coresets.size() == 3);
  std::size_t total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const Coreset& c = run.batch_coresets[i];
    CHECK(c.size() <= 20);
    CHECK(c.rows(static_cast<std::uint32_t>(i + 1)).size() == c.size());
    total += c.size();
    CHECK(run.steps[i].stored_samples == total);
    REQUIRE(run.steps[i].batch_relative_error.has_value());
    CHECK(*run.steps[i].batch_relative_error < 1.0);
  }
  CHECK(run.steps.back().stored_samples < 3 * 110);
}

TEST_CASE("random arm keeps budget-sized uniform subsets") {
  const StreamRun run = run_stream(small_plan(StreamMode::random_aggregate));
  REQUIRE(run.batch_coresets.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(run.batch_coresets[i].diagnostics().method == "random");
    CHECK(run.batch_coresets[i].size() <= 20);
    for (const auto& e : run.batch_coresets[i].entries()) CHECK(e.weight == doctest::Approx(110.0 / 20.0));
  }
}

TEST_CASE("stream runs are deterministic apart from wall-clock fields") {
  for (StreamMode mode : {StreamMode::pool_full, StreamMode::coreset_aggregate}) {
    const StreamPlan plan = small_plan(mode, 2);
    check_same_up_to_timing(run_stream(plan), run_stream(plan));
  }
}

TEST_CASE("earlier batch coresets are unchanged by later batches") {
  StreamPlan two = small_plan(StreamMode::coreset_aggregate, 2);
  StreamPlan three = small_plan(StreamMode::coreset_aggregate, 3);
  const StreamRun a = run_stream(two), b = run_stream(three);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(same_entries(a.batch_coresets[i], b.batch_coresets[i]));
    CHECK(a.steps[i].accuracy == b.steps[i].accuracy);
  }
}

TEST_CASE("a one-step stream equals the offline pipeline with the same seeds") {
  const StreamPlan plan = small_plan(StreamMode::coreset_aggregate, 1);
  const StreamRun run = run_stream(plan);

  const StreamBatch& b = plan.batches.front();
  const SeedTree step = SeedTree(plan.seed).child("step", 0);
  const StandardizationParams params = fit_standardization(b.train);
  const Coreset c = reduce_batch(apply_standardization(b.train, params), plan.reduction, b.id, step.child("reduce"));
  CHECK(same_entries(c, run.batch_coresets.front()));

  const WeightedSubset sel = coreset_rows(apply_standardization(b.train, params), c, b.id);
  const TrainedPosterior fit = train_blr(sel.data, sel.weights, plan.hmc, step.child("hmc").seed());
  const double acc = evaluate_blr(fit.posterior, apply_standardization(b.test, params), plan.predict_draws);
  // Streaming moments and the two-pass fit agree to rounding, so the chains
  // agree closely but not bit for bit.
  CHECK(run.steps.front().accuracy == doctest::Approx(acc).epsilon(0.02));
  CHECK(run.steps.front().stored_samples == c.size());
}

TEST_CASE("current-batch evaluation uses only that batch's test set") {
  StreamPlan plan = small_plan(StreamMode::pool_full, 2);
  plan.evaluate_on_union = false;
  const StreamRun run = run_stream(plan);
  CHECK(run.steps[0].eval_samples == 60);
  CHECK(run.steps[1].eval_samples == 60);
}

TEST_CASE("coreset-entry standardization runs and differs only in scaling") {
  StreamPlan plan = small_plan(StreamMode::coreset_aggregate, 2);
  plan.coreset_standardization = CoresetStandardization::coreset_entries;
  const StreamRun a = run_stream(plan);
  plan.coreset_standardization = CoresetStandardization::batch_moments;
  const StreamRun b = run_stream(plan);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(same_entries(a.batch_coresets[i], b.batch_coresets[i]));
    CHECK(a.steps[i].stored_samples == b.steps[i].stored_samples);
  }
}

TEST_CASE("stream plan validation") {
  StreamPlan plan = small_plan(StreamMode::pool_full, 2);
  plan.batches[1].id = plan.batches[0].id;
  CHECK_THROWS_AS(plan.validate(), ConfigError);

  plan = small_plan(StreamMode::pool_full, 2);
  plan.batches[1].train = generate_synthetic(5, 5, 3, 1.0, 1);
  CHECK_THROWS_AS(plan.validate(), ConfigError);

  plan = small_plan(StreamMode::coreset_aggregate, 1);
  plan.reduction.budget = 0;
  CHECK_THROWS_AS(plan.validate(), ConfigError);

  plan.batches.clear();
  CHECK_THROWS_AS(run_stream(plan), ConfigError);

  CHECK(stream_mode_from_string("coreset") == StreamMode::coreset_aggregate);
  CHECK(to_string(StreamMode::random_aggregate) == "random");
  CHECK_THROWS_AS(stream_mode_from_string("bulk"), ConfigError);
  CHECK_THROWS_AS(coreset_standardization_from_string("none"), ConfigError);
}
