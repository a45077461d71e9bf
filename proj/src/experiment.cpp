#include "bcore/experiment.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "bcore/coreset.hpp"

namespace fs = std::filesystem;

namespace bcore {

// ---------------------------------------------------------------------------
// Config

namespace {

const std::set<std::string> kTopLevelKeys = {
    "seed",           "data",        "datasets",      "train",
    "test",           "embedding_dimension", "weighting", "method",
    "budgets",        "random_subset_size",  "hmc",       "predict_draws",
    "svm",            "repetitions", "parallelism",   "sequential_timing",
    "save_posteriors", "stream"};

std::string to_string(PosteriorPersistence p) {
  switch (p) {
    case PosteriorPersistence::none: return "none";
    case PosteriorPersistence::first_trial: return "first_trial";
    case PosteriorPersistence::all: return "all";
  }
  return "unknown";
}

PosteriorPersistence persistence_from_string(const std::string& s) {
  if (s == "none") return PosteriorPersistence::none;
  if (s == "first_trial") return PosteriorPersistence::first_trial;
  if (s == "all") return PosteriorPersistence::all;
  throw ConfigError("save_posteriors must be none, first_trial or all (got '" + s + "')");
}

ClassCounts counts_from_json(const Json& j, ClassCounts fallback) {
  return {j.value("positives", fallback.positives), j.value("negatives", fallback.negatives)};
}

Json counts_to_json(const ClassCounts& c) {
  return Json{{"positives", c.positives}, {"negatives", c.negatives}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (datasets < 1) throw ConfigError("datasets must be >= 1");
  if (train.positives < 1 || train.negatives < 1 || test.positives < 1 || test.negatives < 1) {
    throw ConfigError("train/test class counts must be positive");
  }
  if (embedding_dimension < 1) throw ConfigError("embedding_dimension must be positive");
  if (budgets.empty()) throw ConfigError("budgets must not be empty");
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (budgets[i] == 0) throw ConfigError("budgets must be positive");
    if (i > 0 && budgets[i] <= budgets[i - 1]) {
      throw ConfigError("budgets must be sorted ascending without repeats");
    }
  }
  if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
  if (predict_draws < 1) throw ConfigError("predict_draws must be positive");
  if (svm.epochs < 1) throw ConfigError("svm.epochs must be positive");
  if (data.kind == DataSource::Kind::synthetic) {
    if (data.features < 1) throw ConfigError("data.features must be positive");
    if (!(data.separation >= 0.0)) throw ConfigError("data.separation must be >= 0");
    if (data.pool_positives < 0 || data.pool_negatives < 0) {
      throw ConfigError("data pool sizes must be >= 0");
    }
  } else if (data.paths.empty()) {
    throw ConfigError("data.paths must list at least one CSV file");
  }
  if (stream.steps < 1) throw ConfigError("stream.steps must be >= 1");
  if (stream.modes.empty()) throw ConfigError("stream.modes must not be empty");
  for (std::size_t b : stream.budgets) {
    if (b == 0) throw ConfigError("stream budgets must be positive");
  }
  const bool needs_budget = std::any_of(stream.modes.begin(), stream.modes.end(),
                                        [](StreamMode m) { return m != StreamMode::pool_full; });
  if (needs_budget && stream.budgets.empty()) {
    throw ConfigError("stream.budgets must not be empty for coreset or random modes");
  }
  try {
    hmc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("hmc: ") + e.what());
  }
}

Json ExperimentConfig::to_json() const {
  Json d;
  if (data.kind == DataSource::Kind::synthetic) {
    d = Json{{"source", "synthetic"},
             {"features", data.features},
             {"separation", data.separation},
             {"pool_positives", data.pool_positives},
             {"pool_negatives", data.pool_negatives}};
  } else {
    std::vector<std::string> paths;
    for (const auto& p : data.paths) paths.push_back(p.string());
    d = Json{{"source", "csv"}, {"paths", paths}, {"schema", data.schema.to_json()}};
  }
  std::vector<std::string> modes;
  for (StreamMode m : stream.modes) modes.push_back(to_string(m));
  return Json{{"seed", seed},
              {"data", d},
              {"datasets", datasets},
              {"train", counts_to_json(train)},
              {"test", counts_to_json(test)},
              {"embedding_dimension", embedding_dimension},
              {"weighting", to_string(weighting)},
              {"method", to_string(method)},
              {"budgets", budgets},
              {"random_subset_size", random_subset_size},
              {"hmc", hmc.to_json()},
              {"predict_draws", predict_draws},
              {"svm", Json{{"epochs", svm.epochs}, {"reg", svm.reg}}},
              {"repetitions", repetitions},
              {"parallelism", parallelism},
              {"sequential_timing", sequential_timing},
              {"save_posteriors", to_string(save_posteriors)},
              {"stream", Json{{"steps", stream.steps},
                              {"budgets", stream.budgets},
                              {"modes", modes},
                              {"evaluate_on", stream.evaluate_on_union ? "union" : "current"},
                              {"standardization", to_string(stream.standardization)}}}};
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kTopLevelKeys.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("data")) {
      const Json& d = j.at("data");
      const std::string source = d.value("source", "synthetic");
      if (source == "synthetic") {
        c.data.kind = DataSource::Kind::synthetic;
        c.data.features = d.value("features", c.data.features);
        c.data.separation = d.value("separation", c.data.separation);
        c.data.pool_positives = d.value("pool_positives", c.data.pool_positives);
        c.data.pool_negatives = d.value("pool_negatives", c.data.pool_negatives);
      } else if (source == "csv") {
        c.data.kind = DataSource::Kind::csv;
        for (const auto& p : d.at("paths")) c.data.paths.emplace_back(p.get<std::string>());
        if (d.contains("schema")) c.data.schema = CsvSchema::from_json(d.at("schema"));
      } else {
        throw ConfigError("data.source must be synthetic or csv (got '" + source + "')");
      }
    }
    c.datasets = j.value("datasets", c.datasets);
    if (j.contains("train")) c.train = counts_from_json(j.at("train"), c.train);
    if (j.contains("test")) c.test = counts_from_json(j.at("test"), c.test);
    c.embedding_dimension = j.value("embedding_dimension", c.embedding_dimension);
    if (j.contains("weighting")) c.weighting = weighting_from_string(j.at("weighting").get<std::string>());
    if (j.contains("method")) c.method = reduction_from_string(j.at("method").get<std::string>());
    if (j.contains("budgets")) c.budgets = j.at("budgets").get<std::vector<std::size_t>>();
    c.random_subset_size = j.value("random_subset_size", c.random_subset_size);
    if (j.contains("hmc")) c.hmc = HmcSettings::from_json(j.at("hmc"));
    c.predict_draws = j.value("predict_draws", c.predict_draws);
    if (j.contains("svm")) {
      c.svm.epochs = j.at("svm").value("epochs", c.svm.epochs);
      c.svm.reg = j.at("svm").value("reg", c.svm.reg);
    }
    c.repetitions = j.value("repetitions", c.repetitions);
    c.parallelism = j.value("parallelism", c.parallelism);
    c.sequential_timing = j.value("sequential_timing", c.sequential_timing);
    if (j.contains("save_posteriors")) {
      c.save_posteriors = persistence_from_string(j.at("save_posteriors").get<std::string>());
    }
    if (j.contains("stream")) {
      const Json& s = j.at("stream");
      c.stream.steps = s.value("steps", c.stream.steps);
      if (s.contains("budgets")) c.stream.budgets = s.at("budgets").get<std::vector<std::size_t>>();
      if (s.contains("modes")) {
        c.stream.modes.clear();
        for (const auto& m : s.at("modes")) c.stream.modes.push_back(stream_mode_from_string(m.get<std::string>()));
      }
      const std::string eval = s.value("evaluate_on", std::string("union"));
      if (eval != "union" && eval != "current") {
        throw ConfigError("stream.evaluate_on must be union or current (got '" + eval + "')");
      }
      c.stream.evaluate_on_union = eval == "union";
      if (s.contains("standardization")) {
        c.stream.standardization =
            coreset_standardization_from_string(s.at("standardization").get<std::string>());
      }
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  ExperimentConfig c = from_json(j);
  // Relative CSV paths are resolved against the config file's directory.
  for (auto& p : c.data.paths) {
    if (p.is_relative()) p = path.parent_path() / p;
  }
  return c;
}

std::size_t resolve_parallelism(const ExperimentConfig& config) {
  if (config.sequential_timing) return 1;
  if (config.parallelism > 0) return config.parallelism;
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Data preparation

Dataset load_source(const ExperimentConfig& config) {
  const SeedTree root(config.seed);
  if (config.data.kind == DataSource::Kind::synthetic) {
    const auto per_class = [&](Eigen::Index train, Eigen::Index test, Eigen::Index pool) {
      if (pool > 0) return pool;
      const auto steps = static_cast<Eigen::Index>(config.stream.steps);
      const auto sets = static_cast<Eigen::Index>(config.datasets);
      return 2 * std::max(sets, steps) * (train + test);
    };
    return generate_synthetic(
        per_class(config.train.positives, config.test.positives, config.data.pool_positives),
        per_class(config.train.negatives, config.test.negatives, config.data.pool_negatives),
        config.data.features, config.data.separation, root.child("data").seed());
  }
  std::vector<Dataset> parts;
  for (const auto& p : config.data.paths) parts.push_back(ingest_csv(p, config.data.schema).data);
  return Dataset::concat(parts);
}

std::vector<PreparedSplit> prepare_splits(const ExperimentConfig& config, const Dataset& pool) {
  const SeedTree root(config.seed);
  const std::vector<ClassCounts> requests{config.train, config.test};
  std::vector<PreparedSplit> out;
  for (std::size_t d = 0; d < config.datasets; ++d) {
    auto parts = disjoint_stratified_splits(pool, requests, root.child("split", d).seed());
    StandardizationParams params = fit_standardization(parts[0]);
    out.push_back({std::move(parts[0]), std::move(parts[1]), std::move(params)});
  }
  return out;
}

std::vector<StreamBatch> prepare_stream_batches(const ExperimentConfig& config, const Dataset& pool,
                                                std::size_t trial) {
  const SeedTree root(config.seed);
  const std::size_t steps = config.stream.steps;
  std::vector<ClassCounts> requests(steps, config.train);
  requests.insert(requests.end(), steps, config.test);
  auto parts = disjoint_stratified_splits(pool, requests, root.child("stream_split", trial).seed());
  std::vector<StreamBatch> batches;
  for (std::size_t i = 0; i < steps; ++i) {
    batches.push_back({static_cast<std::uint32_t>(i + 1), std::move(parts[i]), std::move(parts[steps + i])});
  }
  return batches;
}

std::string coreset_condition(std::size_t budget) { return "blr_coreset_m" + std::to_string(budget); }

// ---------------------------------------------------------------------------
// Records

namespace {

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> optional_from(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

Json TrialRecord::to_json() const {
  return Json{{"dataset", dataset},
              {"condition", condition},
              {"trial", trial},
              {"accuracy", optional_json(accuracy)},
              {"train_seconds", train_seconds},
              {"train_size", train_size},
              {"train_minority", train_minority},
              {"acceptance_rate", optional_json(acceptance_rate)},
              {"step_size", optional_json(step_size)},
              {"error", error}};
}

TrialRecord TrialRecord::from_json(const Json& j) {
  TrialRecord r;
  r.dataset = j.at("dataset").get<std::size_t>();
  r.condition = j.at("condition").get<std::string>();
  r.trial = j.at("trial").get<std::size_t>();
  r.accuracy = optional_from(j, "accuracy");
  r.train_seconds = j.at("train_seconds").get<double>();
  r.train_size = j.at("train_size").get<std::size_t>();
  r.train_minority = j.at("train_minority").get<std::size_t>();
  r.acceptance_rate = optional_from(j, "acceptance_rate");
  r.step_size = optional_from(j, "step_size");
  r.error = j.value("error", std::string());
  return r;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Shared run metadata

namespace {

constexpr const char* kTimingCaveat =
    "wall-clock fields depend on the host and on concurrent load; compare ratios within one run, "
    "not absolute values across hosts";

std::string host_name() {
  char buf[256] = {0};
  if (gethostname(buf, sizeof(buf) - 1) != 0) return "unknown";
  return buf;
}

Json run_metadata(const ExperimentConfig& config, const std::string& kind) {
  return Json{{"kind", kind},
              {"host", host_name()},
              {"hardware_threads", std::thread::hardware_concurrency()},
              {"parallelism", resolve_parallelism(config)},
              {"sequential_timing", config.sequential_timing},
              {"timing_caveat", kTimingCaveat},
              {"seed", config.seed}};
}

void write_json(const fs::path& path, const Json& j) { write_text_file(path, j.dump(1) + "\n"); }

std::string error_text(const std::exception& e) {
  std::string s = e.what();
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

void write_failure(const fs::path& dir, const std::string& name, const std::exception& e) {
  fs::create_directories(dir);
  Json j{{"error", error_text(e)}};
  if (const auto* ne = dynamic_cast<const NumericalError*>(&e)) j["diagnostics"] = ne->diagnostics();
  write_json(dir / (name + ".json"), j);
}

bool non_decreasing(const std::vector<double>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i] < trace[i - 1]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Offline grid

struct CoresetSummary {
  std::size_t dataset = 0;
  std::size_t budget = 0;
  std::size_t entries = 0;
  std::size_t minority = 0;
  double construction_seconds = 0.0;
  std::optional<double> relative_error;
  std::optional<double> residual_norm;
  bool alignment_monotone = true;
  bool early_stop = false;
  std::size_t coreset_bytes = 0;
  std::size_t raw_bytes = 0;
  std::string error;

  Json to_json() const {
    return Json{{"dataset", dataset},
                {"budget", budget},
                {"entries", entries},
                {"minority", minority},
                {"construction_seconds", construction_seconds},
                {"relative_error", optional_json(relative_error)},
                {"residual_norm", optional_json(residual_norm)},
                {"alignment_monotone", alignment_monotone},
                {"early_stop", early_stop},
                {"coreset_bytes", coreset_bytes},
                {"raw_bytes", raw_bytes},
                {"error", error}};
  }
  static CoresetSummary from_json(const Json& j) {
    CoresetSummary s;
    s.dataset = j.at("dataset").get<std::size_t>();
    s.budget = j.at("budget").get<std::size_t>();
    s.entries = j.at("entries").get<std::size_t>();
    s.minority = j.at("minority").get<std::size_t>();
    s.construction_seconds = j.at("construction_seconds").get<double>();
    s.relative_error = optional_from(j, "relative_error");
    s.residual_norm = optional_from(j, "residual_norm");
    s.alignment_monotone = j.at("alignment_monotone").get<bool>();
    s.early_stop = j.value("early_stop", false);
    s.coreset_bytes = j.at("coreset_bytes").get<std::size_t>();
    s.raw_bytes = j.at("raw_bytes").get<std::size_t>();
    s.error = j.value("error", std::string());
    return s;
  }
};

enum class ArmKind { svm, full, random, coreset };

struct TrialJob {
  std::size_t dataset;
  ArmKind kind;
  std::size_t budget;  // coreset arms
  std::string condition;
  std::size_t trial;
};

std::string dataset_stem(std::size_t d) { return "d" + std::to_string(d); }

}  // namespace

void cmd_offline(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  fs::create_directories(out / "datasets");
  fs::create_directories(out / "coresets");
  write_json(out / "config.json", config.to_json());
  const std::size_t threads = resolve_parallelism(config);
  const SeedTree root(config.seed);

  const Dataset pool = load_source(config);
  const std::vector<PreparedSplit> splits = prepare_splits(config, pool);
  std::vector<Dataset> train_sets, test_sets;
  for (std::size_t d = 0; d < splits.size(); ++d) {
    train_sets.push_back(splits[d].train());
    test_sets.push_back(splits[d].test());
    const DatasetProvenance prov{config.data.kind == DataSource::Kind::synthetic ? "synthetic" : "csv",
                                 root.child("split", d).seed(), 0, splits[d].standardization};
    save_dataset(out / "datasets" / (dataset_stem(d) + "_train.csv"), splits[d].train_raw, prov);
    save_dataset(out / "datasets" / (dataset_stem(d) + "_test.csv"), splits[d].test_raw, prov);
  }

  // Coresets: one per (dataset, budget), shared by every repetition.
  const std::size_t nb = config.budgets.size();
  std::vector<std::optional<Coreset>> coresets(splits.size() * nb);
  std::vector<CoresetSummary> summaries(coresets.size());
  parallel_for(coresets.size(), threads, [&](std::size_t k) {
    const std::size_t d = k / nb;
    const std::size_t budget = config.budgets[k % nb];
    CoresetSummary& s = summaries[k];
    s.dataset = d;
    s.budget = budget;
    s.raw_bytes = dataset_to_csv(splits[d].train_raw).size();
    const ReductionSettings settings{config.method, budget, config.embedding_dimension, config.weighting};
    try {
      Stopwatch clock;
      Coreset c = reduce_batch(train_sets[d], settings, 0, root.child("dataset", d).child("coreset", budget));
      s.construction_seconds = clock.seconds();
      const WeightedSubset sel = coreset_rows(splits[d].train_raw, c, 0);
      s.entries = c.size();
      s.minority = static_cast<std::size_t>(sel.data.count(Label::malicious));
      s.relative_error = c.diagnostics().relative_error;
      s.residual_norm = c.diagnostics().residual_norm;
      s.alignment_monotone = non_decreasing(c.diagnostics().alignment_trace);
      s.early_stop = c.diagnostics().early_stop;
      // Stored footprint: entries (ids, weights) and the selected raw rows.
      Json stored = c.to_json();
      stored.erase("diagnostics");
      s.coreset_bytes = stored.dump().size() + dataset_to_csv(sel.data).size();
      save_coreset(out / "coresets" / (dataset_stem(d) + "_m" + std::to_string(budget) + ".json"), c);
      coresets[k] = std::move(c);
    } catch (const std::exception& e) {
      s.error = error_text(e);
      write_failure(out / "failures", dataset_stem(d) + "_coreset_m" + std::to_string(budget), e);
    }
  });
  Json summary_json = Json::array();
  for (const auto& s : summaries) summary_json.push_back(s.to_json());
  write_json(out / "coresets.json", Json{{"coresets", summary_json}});

  std::vector<TrialJob> jobs;
  for (std::size_t d = 0; d < splits.size(); ++d) {
    for (std::size_t r = 0; r < config.repetitions; ++r) {
      jobs.push_back({d, ArmKind::svm, 0, "svm", r});
      jobs.push_back({d, ArmKind::full, 0, "blr_full", r});
      jobs.push_back({d, ArmKind::random, 0, "blr_random", r});
      for (std::size_t b : config.budgets) jobs.push_back({d, ArmKind::coreset, b, coreset_condition(b), r});
    }
  }
  std::sort(jobs.begin(), jobs.end(), [](const TrialJob& a, const TrialJob& b) {
    return std::tie(a.dataset, a.condition, a.trial) < std::tie(b.dataset, b.condition, b.trial);
  });

  const bool save_any = config.save_posteriors != PosteriorPersistence::none;
  if (save_any) fs::create_directories(out / "posteriors");
  std::vector<TrialRecord> records(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t k) {
    const TrialJob& job = jobs[k];
    TrialRecord& rec = records[k];
    rec.dataset = job.dataset;
    rec.condition = job.condition;
    rec.trial = job.trial;
    const SeedTree seeds = root.child("dataset", job.dataset);
    const Dataset& train = train_sets[job.dataset];
    const Dataset& test = test_sets[job.dataset];
    try {
      if (job.kind == ArmKind::svm) {
        rec.train_size = static_cast<std::size_t>(train.size());
        rec.train_minority = static_cast<std::size_t>(train.count(Label::malicious));
        Stopwatch clock;
        const double reg = config.svm.reg > 0.0 ? config.svm.reg : 1.0 / static_cast<double>(train.size());
        const Eigen::VectorXd theta =
            svm_train(train, config.svm.epochs, reg, seeds.child("svm").child("trial", job.trial).seed());
        rec.train_seconds = clock.seconds();
        rec.accuracy = svm_accuracy(theta, test);
        return;
      }
      Dataset fit_data = train;
      Eigen::VectorXd weights;
      std::uint64_t hmc_seed = 0;
      if (job.kind == ArmKind::full) {
        weights = Eigen::VectorXd::Ones(train.size());
        hmc_seed = seeds.child("hmc_full").child("trial", job.trial).seed();
      } else if (job.kind == ArmKind::coreset) {
        const auto it = std::find(config.budgets.begin(), config.budgets.end(), job.budget);
        const auto& c = coresets[job.dataset * nb + static_cast<std::size_t>(it - config.budgets.begin())];
        if (!c) throw std::runtime_error("coreset construction failed for this condition");
        WeightedSubset sel = coreset_rows(train, *c, 0);
        fit_data = std::move(sel.data);
        weights = std::move(sel.weights);
        hmc_seed = seeds.child("hmc_coreset", job.budget).child("trial", job.trial).seed();
      } else {
        std::size_t m = config.random_subset_size;
        if (m == 0) {
          const auto& first = coresets[job.dataset * nb];
          if (!first) throw std::runtime_error("random arm size follows a failed coreset");
          m = first->size();
        }
        const Coreset c = random_construct(train.size(), m,
                                           seeds.child("random_subset").child("trial", job.trial).seed());
        WeightedSubset sel = coreset_rows(train, c, 0);
        fit_data = std::move(sel.data);
        weights = std::move(sel.weights);
        hmc_seed = seeds.child("hmc_random").child("trial", job.trial).seed();
      }
      rec.train_size = static_cast<std::size_t>(fit_data.size());
      rec.train_minority = static_cast<std::size_t>(fit_data.count(Label::malicious));
      const TrainedPosterior fit = train_blr(fit_data, weights, config.hmc, hmc_seed);
      rec.train_seconds = fit.seconds;
      rec.acceptance_rate = fit.posterior.acceptance_rate;
      rec.step_size = fit.posterior.step_size;
      rec.accuracy = evaluate_blr(fit.posterior, test, config.predict_draws);
      if (config.save_posteriors == PosteriorPersistence::all ||
          (config.save_posteriors == PosteriorPersistence::first_trial && job.trial == 0)) {
        save_posterior(out / "posteriors" /
                           (dataset_stem(job.dataset) + "_" + job.condition + "_t" + std::to_string(job.trial) + ".bin"),
                       fit.posterior);
      }
    } catch (const std::exception& e) {
      rec.accuracy.reset();
      rec.error = error_text(e);
      write_failure(out / "failures",
                    dataset_stem(job.dataset) + "_" + job.condition + "_t" + std::to_string(job.trial), e);
    }
  });

  Json trials = Json::array();
  for (const auto& r : records) trials.push_back(r.to_json());
  write_json(out / "trials.json", Json{{"trials", trials}});
  write_json(out / "run.json", run_metadata(config, "offline"));
  cmd_report(out, ReportFormat::csv);
  cmd_report(out, ReportFormat::json);
}

// ---------------------------------------------------------------------------
// Streaming grid

namespace {

struct StreamArm {
  std::string name;
  StreamMode mode;
  std::size_t budget;
};

std::vector<StreamArm> stream_arms(const ExperimentConfig& config) {
  std::vector<StreamArm> arms;
  for (StreamMode m : config.stream.modes) {
    if (m == StreamMode::pool_full) {
      arms.push_back({"pool", m, 0});
      continue;
    }
    for (std::size_t b : config.stream.budgets) {
      arms.push_back({to_string(m) + "_m" + std::to_string(b), m, b});
    }
  }
  return arms;
}

struct StreamRecord {
  std::string arm;
  std::string mode;
  std::size_t budget = 0;
  std::size_t trial = 0;
  StepRecord step;
  std::string error;

  Json to_json() const {
    return Json{{"arm", arm},
                {"mode", mode},
                {"budget", budget},
                {"trial", trial},
                {"step", step.step},
                {"stored_samples", step.stored_samples},
                {"stored_minority", step.stored_minority},
                {"train_seconds", step.train_seconds},
                {"reduction_seconds", step.reduction_seconds},
                {"accuracy", error.empty() ? Json(step.accuracy) : Json(nullptr)},
                {"eval_samples", step.eval_samples},
                {"acceptance_rate", step.acceptance_rate},
                {"step_size", step.step_size},
                {"batch_relative_error", optional_json(step.batch_relative_error)},
                {"error", error}};
  }
  static StreamRecord from_json(const Json& j) {
    StreamRecord r;
    r.arm = j.at("arm").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.budget = j.at("budget").get<std::size_t>();
    r.trial = j.at("trial").get<std::size_t>();
    r.step.step = j.at("step").get<std::size_t>();
    r.step.stored_samples = j.at("stored_samples").get<std::size_t>();
    r.step.stored_minority = j.at("stored_minority").get<std::size_t>();
    r.step.train_seconds = j.at("train_seconds").get<double>();
    r.step.reduction_seconds = j.at("reduction_seconds").get<double>();
    r.step.accuracy = j.at("accuracy").is_null() ? 0.0 : j.at("accuracy").get<double>();
    r.step.eval_samples = j.at("eval_samples").get<std::size_t>();
    r.step.acceptance_rate = j.at("acceptance_rate").get<double>();
    r.step.step_size = j.at("step_size").get<double>();
    r.step.batch_relative_error = optional_from(j, "batch_relative_error");
    r.error = j.value("error", std::string());
    return r;
  }
};

}  // namespace

void cmd_stream(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  fs::create_directories(out / "stream_coresets");
  write_json(out / "config.json", config.to_json());
  const SeedTree root(config.seed);
  const Dataset pool = load_source(config);
  const std::vector<StreamArm> arms = stream_arms(config);

  struct Job {
    std::size_t arm;
    std::size_t trial;
  };
  std::vector<Job> jobs;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    for (std::size_t r = 0; r < config.repetitions; ++r) jobs.push_back({a, r});
  }
  std::vector<std::vector<StreamRecord>> results(jobs.size());
  parallel_for(jobs.size(), resolve_parallelism(config), [&](std::size_t k) {
    const StreamArm& arm = arms[jobs[k].arm];
    const std::size_t trial = jobs[k].trial;
    StreamPlan plan;
    plan.batches = prepare_stream_batches(config, pool, trial);
    plan.mode = arm.mode;
    plan.reduction = {config.method, std::max<std::size_t>(arm.budget, 1), config.embedding_dimension,
                      config.weighting};
    plan.hmc = config.hmc;
    plan.predict_draws = config.predict_draws;
    plan.evaluate_on_union = config.stream.evaluate_on_union;
    plan.coreset_standardization = config.stream.standardization;
    plan.seed = root.child("stream_trial", trial).seed();
    const std::string stem = arm.name + "_t" + std::to_string(trial);
    try {
      const StreamRun run = run_stream(plan);
      for (const auto& s : run.steps) results[k].push_back({arm.name, to_string(arm.mode), arm.budget, trial, s, ""});
      for (std::size_t b = 0; b < run.batch_coresets.size(); ++b) {
        save_coreset(out / "stream_coresets" / (stem + "_b" + std::to_string(b + 1) + ".json"),
                     run.batch_coresets[b]);
      }
    } catch (const std::exception& e) {
      StreamRecord failed{arm.name, to_string(arm.mode), arm.budget, trial, {}, error_text(e)};
      results[k].push_back(failed);
      write_failure(out / "failures", stem, e);
    }
  });

  Json records = Json::array();
  for (const auto& rs : results) {
    for (const auto& r : rs) records.push_back(r.to_json());
  }
  Json meta = run_metadata(config, "stream");
  meta["evaluate_on"] = config.stream.evaluate_on_union ? "union" : "current";
  meta["coreset_standardization"] = to_string(config.stream.standardization);
  write_json(out / "stream_records.json", Json{{"records", records}});
  write_json(out / "run.json", meta);
  cmd_report(out, ReportFormat::csv);
  cmd_report(out, ReportFormat::json);
}

// ---------------------------------------------------------------------------
// Reports

namespace {

struct Stats {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
};

/// Mean and sample standard deviation (0 for a single value).
Stats stats_of(const std::vector<double>& v) {
  Stats s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  return Json(v).dump();  // shortest round-trip form
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// A report table: ordered columns, rows of values that are numbers, strings
/// or null. Emitted identically as CSV and JSON.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Json>> rows;

  std::string csv() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << "\n";
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) os << ",";
        const Json& v = row[i];
        if (v.is_null()) continue;
        if (v.is_string()) os << csv_field(v.get<std::string>());
        else if (v.is_boolean()) os << (v.get<bool>() ? "true" : "false");
        else if (v.is_number_float()) os << fmt(v.get<double>());
        else os << v.dump();
      }
      os << "\n";
    }
    return os.str();
  }

  Json json() const {
    Json arr = Json::array();
    for (const auto& row : rows) {
      Json o = Json::object();
      for (std::size_t i = 0; i < columns.size(); ++i) o[columns[i]] = row[i];
      arr.push_back(o);
    }
    return arr;
  }
};

Json load_artifact(const fs::path& path) {
  try {
    return Json::parse(read_text_file(path));
  } catch (const std::exception& e) {
    throw DataError("corrupt artifact " + path.string() + ": " + e.what());
  }
}

Json nullable(double v, bool present) { return present ? Json(v) : Json(nullptr); }

Table offline_table(const std::vector<TrialRecord>& trials, const std::vector<CoresetSummary>& coresets) {
  Table t;
  t.columns = {"dataset",          "condition",          "trials",
               "failures",         "accuracy_mean",      "accuracy_sd",
               "train_seconds_mean", "train_seconds_sd", "train_size_mean",
               "train_minority_mean", "acceptance_rate_mean", "coreset_entries",
               "coreset_minority", "coreset_seconds",    "coreset_relative_error",
               "alignment_monotone", "storage_ratio",    "errors"};
  std::map<std::size_t, std::map<std::string, std::vector<const TrialRecord*>>> groups;
  std::vector<std::string> condition_order;
  for (const auto& r : trials) {
    groups[r.dataset][r.condition].push_back(&r);
    if (std::find(condition_order.begin(), condition_order.end(), r.condition) == condition_order.end()) {
      condition_order.push_back(r.condition);
    }
  }
  std::sort(condition_order.begin(), condition_order.end());

  struct Pooled {
    std::vector<double> means, variances, seconds;
    std::size_t trials = 0, failures = 0;
  };
  std::map<std::string, Pooled> pooled;

  for (const auto& [d, by_cond] : groups) {
    for (const auto& cond : condition_order) {
      const auto it = by_cond.find(cond);
      if (it == by_cond.end()) continue;
      std::vector<double> acc, secs, sizes, minority, accept;
      std::set<std::string> errors;
      std::size_t failures = 0;
      for (const TrialRecord* r : it->second) {
        if (!r->error.empty() || !r->accuracy) {
          ++failures;
          errors.insert(r->error);
          continue;
        }
        acc.push_back(*r->accuracy);
        secs.push_back(r->train_seconds);
        sizes.push_back(static_cast<double>(r->train_size));
        minority.push_back(static_cast<double>(r->train_minority));
        if (r->acceptance_rate) accept.push_back(*r->acceptance_rate);
      }
      const Stats a = stats_of(acc), s = stats_of(secs), sz = stats_of(sizes), mi = stats_of(minority),
                  ac = stats_of(accept);
      std::string err;
      for (const auto& e : errors) err += (err.empty() ? "" : "; ") + e;
      const bool ok = a.n > 0;
      std::vector<Json> row{Json(std::to_string(d)), Json(cond), Json(it->second.size()), Json(failures),
                            nullable(a.mean, ok), nullable(a.sd, ok), nullable(s.mean, ok), nullable(s.sd, ok),
                            nullable(sz.mean, ok), nullable(mi.mean, ok), nullable(ac.mean, ac.n > 0)};
      const CoresetSummary* cs = nullptr;
      for (const auto& c : coresets) {
        if (c.dataset == d && coreset_condition(c.budget) == cond) cs = &c;
      }
      if (cs && cs->error.empty()) {
        row.push_back(Json(cs->entries));
        row.push_back(Json(cs->minority));
        row.push_back(Json(cs->construction_seconds));
        row.push_back(optional_json(cs->relative_error));
        row.push_back(Json(cs->alignment_monotone));
        row.push_back(Json(static_cast<double>(cs->coreset_bytes) / static_cast<double>(cs->raw_bytes)));
      } else {
        if (cs) err += (err.empty() ? "" : "; ") + ("coreset: " + cs->error);
        for (int i = 0; i < 6; ++i) row.push_back(Json(nullptr));
      }
      row.push_back(Json(err));
      t.rows.push_back(std::move(row));

      Pooled& p = pooled[cond];
      p.trials += it->second.size();
      p.failures += failures;
      if (ok) {
        p.means.push_back(a.mean);
        p.variances.push_back(a.sd * a.sd);
        p.seconds.push_back(s.mean);
      }
    }
  }
  // Across datasets: grand mean of per-dataset means; the spread is the pooled
  // within-dataset (across-repetition) standard deviation.
  for (const auto& cond : condition_order) {
    const Pooled& p = pooled[cond];
    const bool ok = !p.means.empty();
    const Stats m = stats_of(p.means), v = stats_of(p.variances), s = stats_of(p.seconds);
    std::vector<Json> row{Json("all"), Json(cond), Json(p.trials), Json(p.failures),
                          nullable(m.mean, ok), nullable(std::sqrt(v.mean), ok), nullable(s.mean, ok),
                          Json(nullptr), Json(nullptr), Json(nullptr), Json(nullptr)};
    std::vector<double> entries, minority, secs, rel;
    for (const auto& c : coresets) {
      if (coreset_condition(c.budget) != cond || !c.error.empty()) continue;
      entries.push_back(static_cast<double>(c.entries));
      minority.push_back(static_cast<double>(c.minority));
      secs.push_back(c.construction_seconds);
      if (c.relative_error) rel.push_back(*c.relative_error);
    }
    const bool has = !entries.empty();
    row.push_back(nullable(stats_of(entries).mean, has));
    row.push_back(nullable(stats_of(minority).mean, has));
    row.push_back(nullable(stats_of(secs).mean, has));
    row.push_back(nullable(stats_of(rel).mean, !rel.empty()));
    row.push_back(Json(nullptr));
    row.push_back(Json(nullptr));
    row.push_back(Json(""));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table stream_table(const std::vector<StreamRecord>& records) {
  Table t;
  t.columns = {"arm",           "mode",          "budget",        "step",
               "trials",        "failures",      "stored_samples_mean", "stored_minority_mean",
               "accuracy_mean", "accuracy_sd",   "train_seconds_mean", "train_seconds_sd",
               "reduction_seconds_mean", "acceptance_rate_mean", "eval_samples", "errors"};
  std::map<std::pair<std::string, std::size_t>, std::vector<const StreamRecord*>> groups;
  std::map<std::string, std::vector<const StreamRecord*>> failed;
  std::vector<std::string> arm_order;
  for (const auto& r : records) {
    if (std::find(arm_order.begin(), arm_order.end(), r.arm) == arm_order.end()) arm_order.push_back(r.arm);
    if (!r.error.empty()) failed[r.arm].push_back(&r);
    else groups[{r.arm, r.step.step}].push_back(&r);
  }
  for (const auto& arm : arm_order) {
    std::string errs;
    for (const auto* f : failed[arm]) errs += (errs.empty() ? "" : "; ") + f->error;
    for (const auto& [key, rs] : groups) {
      if (key.first != arm) continue;
      std::vector<double> stored, minority, acc, secs, red, accept;
      for (const auto* r : rs) {
        stored.push_back(static_cast<double>(r->step.stored_samples));
        minority.push_back(static_cast<double>(r->step.stored_minority));
        acc.push_back(r->step.accuracy);
        secs.push_back(r->step.train_seconds);
        red.push_back(r->step.reduction_seconds);
        accept.push_back(r->step.acceptance_rate);
      }
      const Stats a = stats_of(acc), s = stats_of(secs);
      t.rows.push_back({Json(arm), Json(rs.front()->mode), Json(rs.front()->budget), Json(key.second),
                        Json(rs.size() + failed[arm].size()), Json(failed[arm].size()),
                        Json(stats_of(stored).mean), Json(stats_of(minority).mean), Json(a.mean), Json(a.sd),
                        Json(s.mean), Json(s.sd), Json(stats_of(red).mean), Json(stats_of(accept).mean),
                        Json(rs.front()->step.eval_samples), Json(errs)});
    }
    if (failed[arm].size() > 0 && std::none_of(groups.begin(), groups.end(),
                                               [&](const auto& g) { return g.first.first == arm; })) {
      const auto* f = failed[arm].front();
      std::vector<Json> row{Json(arm), Json(f->mode), Json(f->budget), Json(nullptr),
                            Json(failed[arm].size()), Json(failed[arm].size())};
      for (int i = 0; i < 9; ++i) row.push_back(Json(nullptr));
      row.push_back(Json(errs));
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

}  // namespace

fs::path cmd_report(const fs::path& run_dir, ReportFormat format) {
  std::vector<std::string> missing;
  if (!fs::is_directory(run_dir)) throw DataError("run directory " + run_dir.string() + " does not exist");
  const fs::path meta_path = run_dir / "run.json";
  if (!fs::exists(meta_path)) {
    missing.push_back("run.json");
    if (!fs::exists(run_dir / "trials.json") && !fs::exists(run_dir / "stream_records.json")) {
      missing.push_back("trials.json or stream_records.json");
    }
    std::string list;
    for (const auto& m : missing) list += "\n  " + m;
    throw DataError("missing artifacts in " + run_dir.string() + ":" + list);
  }
  const Json meta = load_artifact(meta_path);
  const std::string kind = meta.value("kind", "");
  const std::vector<std::string> needed =
      kind == "offline" ? std::vector<std::string>{"trials.json", "coresets.json"}
                        : std::vector<std::string>{"stream_records.json"};
  if (kind != "offline" && kind != "stream") throw DataError("run.json has unknown kind '" + kind + "'");
  for (const auto& n : needed) {
    if (!fs::exists(run_dir / n)) missing.push_back(n);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += "\n  " + m;
    throw DataError("missing artifacts in " + run_dir.string() + ":" + list);
  }

  Table table;
  try {
    if (kind == "offline") {
      std::vector<TrialRecord> trials;
      const Json trials_json = load_artifact(run_dir / "trials.json");
      for (const auto& j : trials_json.at("trials")) trials.push_back(TrialRecord::from_json(j));
      std::vector<CoresetSummary> coresets;
      const Json coresets_json = load_artifact(run_dir / "coresets.json");
      for (const auto& j : coresets_json.at("coresets")) {
        coresets.push_back(CoresetSummary::from_json(j));
      }
      table = offline_table(trials, coresets);
    } else {
      std::vector<StreamRecord> records;
      const Json records_json = load_artifact(run_dir / "stream_records.json");
      for (const auto& j : records_json.at("records")) {
        records.push_back(StreamRecord::from_json(j));
      }
      table = stream_table(records);
    }
  } catch (const Json::exception& e) {
    throw DataError("corrupt artifact in " + run_dir.string() + ": " + e.what());
  }

  const std::string stem = kind == "offline" ? "report" : "stream_report";
  fs::path target;
  if (format == ReportFormat::csv) {
    target = run_dir / (stem + ".csv");
    write_text_file(target, table.csv());
  } else {
    target = run_dir / (stem + ".json");
    write_json(target, Json{{"metadata", meta}, {"rows", table.json()}});
  }
  return target;
}

}  // namespace bcore
