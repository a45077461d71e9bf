#include <doctest.h>

#include <atomic>
#include <filesystem>

#include "../run_compare.hpp"
#include "bcore/experiment.hpp"

using namespace bcore;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seed = 5;
  c.data.features = 4;
  c.datasets = 2;
  c.train = {60, 10};
  c.test = {20, 20};
  c.embedding_dimension = 30;
  c.budgets = {10, 20};
  c.hmc.total_samples = 400;
  c.predict_draws = 100;
  c.svm.epochs = 5;
  c.repetitions = 2;
  c.parallelism = 2;
  c.stream.steps = 2;
  c.stream.budgets = {10};
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config defaults round trip through JSON") {
  const ExperimentConfig c;
  CHECK(c.budgets == std::vector<std::size_t>{100, 500, 1000});
  CHECK(c.hmc.retained() == 2500);
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  const ExperimentConfig tiny = tiny_config();
  CHECK(ExperimentConfig::from_json(tiny.to_json()).to_json() == tiny.to_json());
}

TEST_CASE("shipped configs load") {
  for (const char* name : {"sim1.json", "sim2.json"}) {
    const ExperimentConfig c = ExperimentConfig::load(fs::path(BCORE_CONFIGS) / name);
    CHECK(c.datasets >= 1);
  }
  const ExperimentConfig sim2 = ExperimentConfig::load(fs::path(BCORE_CONFIGS) / "sim2.json");
  CHECK(sim2.sequential_timing);
  CHECK(resolve_parallelism(sim2) == 1);
}

TEST_CASE("config validation rejects malformed input") {
  Json j = ExperimentConfig{}.to_json();
  j["unexpected"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig{}.to_json();
  j["budgets"] = {500, 100};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig{}.to_json();
  j["budgets"] = {100, 100};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig{}.to_json();
  j["datasets"] = "five";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig{}.to_json();
  j["method"] = "kmeans";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig{}.to_json();
  j["hmc"]["thin"] = 0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig{}.to_json();
  j["stream"]["evaluate_on"] = "future";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig{}.to_json();
  j["data"] = Json{{"source", "csv"}, {"paths", Json::array()}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  CHECK_THROWS_AS(ExperimentConfig::from_json(Json::array()), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("relative CSV paths resolve against the config directory") {
  const fs::path dir = fresh_dir("bcore_test_cfg");
  fs::create_directories(dir);
  Json j = ExperimentConfig{}.to_json();
  j["data"] = Json{{"source", "csv"}, {"paths", {"flows.csv"}}};
  write_text_file(dir / "c.json", j.dump());
  const ExperimentConfig c = ExperimentConfig::load(dir / "c.json");
  CHECK(c.data.paths.front() == dir / "flows.csv");
}

TEST_CASE("prepared splits are disjoint, stratified and standardized on train") {
  const ExperimentConfig c = tiny_config();
  const Dataset pool = load_source(c);
  const auto splits = prepare_splits(c, pool);
  REQUIRE(splits.size() == 2);
  for (const auto& s : splits) {
    CHECK(s.train_raw.count(Label::legitimate) == 60);
    CHECK(s.train_raw.count(Label::malicious) == 10);
    CHECK(s.test_raw.count(Label::legitimate) == 20);
    CHECK(s.test_raw.count(Label::malicious) == 20);
    const Dataset tr = s.train();
    for (Eigen::Index f = 0; f < tr.features(); ++f) CHECK(std::abs(tr.x().col(f).mean()) < 1e-12);
  }
  // Same seed reproduces the same draw; dataset 1 differs from dataset 0.
  const auto again = prepare_splits(c, load_source(c));
  CHECK(again[1].train_raw.x() == splits[1].train_raw.x());
  CHECK_FALSE(splits[0].train_raw.x() == splits[1].train_raw.x());
}

TEST_CASE("stream batches are disjoint and vary by trial") {
  const ExperimentConfig c = tiny_config();
  const Dataset pool = load_source(c);
  const auto t0 = prepare_stream_batches(c, pool, 0);
  const auto t1 = prepare_stream_batches(c, pool, 1);
  REQUIRE(t0.size() == 2);
  CHECK(t0[0].id == 1);
  CHECK(t0[1].id == 2);
  CHECK(t0[0].train.size() == 70);
  CHECK(t0[1].test.size() == 40);
  CHECK_FALSE(t0[0].train.x() == t1[0].train.x());
  for (Eigen::Index i = 0; i < t0[0].train.size(); ++i) {
    for (Eigen::Index k = 0; k < t0[1].train.size(); ++k) {
      REQUIRE_FALSE(t0[0].train.x().row(i) == t0[1].train.x().row(k));
    }
  }
}

TEST_CASE("trial records round trip") {
  TrialRecord r;
  r.dataset = 3;
  r.condition = "blr_coreset_m100";
  r.trial = 7;
  r.accuracy = 0.875;
  r.train_seconds = 1.5;
  r.train_size = 90;
  r.train_minority = 9;
  r.acceptance_rate = 0.8;
  const TrialRecord back = TrialRecord::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  TrialRecord failed;
  failed.error = "boom";
  CHECK_FALSE(TrialRecord::from_json(failed.to_json()).accuracy.has_value());
  CHECK(coreset_condition(500) == "blr_coreset_m500");
}

TEST_CASE("parallel_for covers every index and rethrows") {
  std::vector<std::atomic<int>> hits(50);
  parallel_for(50, 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 4) throw DataError("bad");
                               }),
                  DataError);
}

TEST_CASE("offline run writes artifacts and reports regenerate identically") {
  const ExperimentConfig c = tiny_config();
  const fs::path dir = fresh_dir("bcore_test_offline");
  cmd_offline(c, dir);
  for (const char* f : {"config.json", "run.json", "trials.json", "coresets.json", "report.csv", "report.json",
                        "datasets/d0_train.csv", "datasets/d1_test.csv", "coresets/d0_m10.json",
                        "coresets/d1_m20.json", "posteriors/d0_blr_full_t0.bin"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  CHECK_FALSE(fs::exists(dir / "posteriors/d0_blr_full_t1.bin"));
  CHECK_FALSE(fs::exists(dir / "failures"));

  const Json trials = Json::parse(read_text_file(dir / "trials.json"));
  // 2 datasets x 2 repetitions x (svm, full, random, two coreset budgets).
  CHECK(trials.at("trials").size() == 2 * 2 * 5);
  for (const auto& t : trials.at("trials")) {
    CHECK(t.at("error") == "");
    CHECK(t.at("accuracy").get<double>() > 0.5);
  }

  const std::string csv = read_text_file(dir / "report.csv");
  const std::string json = read_text_file(dir / "report.json");
  fs::remove(dir / "report.csv");
  fs::remove(dir / "report.json");
  CHECK(cmd_report(dir, ReportFormat::csv) == dir / "report.csv");
  cmd_report(dir, ReportFormat::json);
  CHECK(read_text_file(dir / "report.csv") == csv);
  CHECK(read_text_file(dir / "report.json") == json);

  // CSV and JSON carry the same numbers.
  const Json rows = Json::parse(json).at("rows");
  std::istringstream lines(csv);
  std::string header, line;
  std::getline(lines, header);
  const auto columns = runcmp::split_csv_line(header);
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto cells = runcmp::split_csv_line(line);
    REQUIRE(n < rows.size());
    for (std::size_t i = 0; i < columns.size(); ++i) {
      const Json& v = rows[n].at(columns[i]);
      if (v.is_number()) CHECK(std::stod(cells[i]) == v.get<double>());
      else if (v.is_null()) CHECK(cells[i].empty());
    }
    ++n;
  }
  CHECK(n == rows.size());
  // Per-dataset rows for five conditions plus five pooled rows.
  CHECK(n == 2 * 5 + 5);

  const Json meta = Json::parse(json).at("metadata");
  CHECK(meta.at("kind") == "offline");
  CHECK(meta.contains("timing_caveat"));
}

TEST_CASE("offline runs with one seed agree apart from wall-clock fields") {
  ExperimentConfig c = tiny_config();
  c.datasets = 1;
  c.repetitions = 1;
  const fs::path a = fresh_dir("bcore_test_det_a"), b = fresh_dir("bcore_test_det_b");
  cmd_offline(c, a);
  c.parallelism = 1;  // worker count must not change results
  cmd_offline(c, b);
  Json ja = Json::parse(read_text_file(a / "run.json")), jb = Json::parse(read_text_file(b / "run.json"));
  // Only the recorded worker count may differ.
  ja.erase("parallelism");
  jb.erase("parallelism");
  write_text_file(a / "run.json", ja.dump());
  write_text_file(b / "run.json", jb.dump());
  Json ca = Json::parse(read_text_file(a / "config.json"));
  ca["parallelism"] = 1;
  write_text_file(a / "config.json", ca.dump(1) + "\n");
  for (const char* f : {"report.json"}) {
    Json ra = Json::parse(read_text_file(a / f)), rb = Json::parse(read_text_file(b / f));
    ra["metadata"].erase("parallelism");
    rb["metadata"].erase("parallelism");
    write_text_file(a / f, ra.dump());
    write_text_file(b / f, rb.dump());
  }
  CHECK(runcmp::first_difference(a, b) == "");
}

TEST_CASE("stream run writes per-step records and a report") {
  ExperimentConfig c = tiny_config();
  c.repetitions = 1;
  const fs::path dir = fresh_dir("bcore_test_stream");
  cmd_stream(c, dir);
  const Json records = Json::parse(read_text_file(dir / "stream_records.json")).at("records");
  // Arms: pool, coreset_m10, random_m10; two steps each.
  CHECK(records.size() == 6);
  for (const auto& r : records) {
    if (r.at("arm") == "pool") CHECK(r.at("stored_samples") == 70 * r.at("step").get<int>());
    CHECK(r.at("error") == "");
  }
  CHECK(fs::exists(dir / "stream_coresets/coreset_m10_t0_b1.json"));
  CHECK(fs::exists(dir / "stream_coresets/random_m10_t0_b2.json"));
  const std::string report = read_text_file(dir / "stream_report.csv");
  fs::remove(dir / "stream_report.csv");
  cmd_report(dir, ReportFormat::csv);
  CHECK(read_text_file(dir / "stream_report.csv") == report);
  const Json meta = Json::parse(read_text_file(dir / "stream_report.json")).at("metadata");
  CHECK(meta.at("evaluate_on") == "union");
  CHECK(meta.at("coreset_standardization") == "batch_moments");
}

TEST_CASE("report on missing artifacts names what is missing") {
  const fs::path empty = fresh_dir("bcore_test_empty");
  fs::create_directories(empty);
  try {
    cmd_report(empty, ReportFormat::csv);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("run.json") != std::string::npos);
    CHECK(msg.find("trials.json") != std::string::npos);
  }
  CHECK_THROWS_AS(cmd_report(empty / "absent", ReportFormat::csv), DataError);

  write_text_file(empty / "run.json", R"({"kind": "offline"})");
  try {
    cmd_report(empty, ReportFormat::json);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("coresets.json") != std::string::npos);
  }
  write_text_file(empty / "trials.json", "{not json");
  write_text_file(empty / "coresets.json", R"({"coresets": []})");
  CHECK_THROWS_AS(cmd_report(empty, ReportFormat::json), DataError);
}
