#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include "bcore/data.hpp"

using namespace bcore;
namespace fs = std::filesystem;

namespace {

CsvSchema benign_schema() {
  return CsvSchema::from_json(Json::parse(read_text_file(fs::path(BCORE_FIXTURES) / "flows_schema.json")));
}

Dataset small_dataset(std::initializer_list<std::pair<double, double>> rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), 1);
  Eigen::VectorXd y(x.rows());
  Eigen::Index i = 0;
  for (const auto& [v, label] : rows) {
    x(i, 0) = v;
    y[i++] = label;
  }
  return Dataset(x, y);
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bcore_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("dataset construction enforces its invariants") {
  Eigen::MatrixXd x(2, 1);
  x << 1, 2;
  CHECK_THROWS_AS(Dataset(x, Eigen::Vector3d(1, 1, 1)), std::invalid_argument);
  CHECK_THROWS_AS(Dataset(x, Eigen::Vector2d(1, 0)), std::invalid_argument);
  x(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Dataset(x, Eigen::Vector2d(1, -1)), std::invalid_argument);
  CHECK_THROWS_AS(Dataset(Eigen::MatrixXd(0, 1), Eigen::VectorXd(0)), std::invalid_argument);
}

TEST_CASE("csv ingestion drops rows with missing values and keeps the rest unchanged") {
  const IngestResult r = ingest_csv(fs::path(BCORE_FIXTURES) / "flows_small.csv", benign_schema());
  CHECK(r.raw_rows == 6);
  CHECK(r.dropped == 3);
  REQUIRE(r.data.size() == 3);
  REQUIRE(r.feature_names == std::vector<std::string>{"Destination Port", "Flow Duration", "Total Fwd Packets"});
  CHECK(r.data.x()(0, 0) == 80);
  CHECK(r.data.x()(0, 1) == 1200);
  CHECK(r.data.x()(1, 2) == 120);
  CHECK(r.data.y()[1] == -1);
  CHECK(r.data.x()(2, 0) == 8080);
  CHECK(r.data.count(Label::malicious) == 1);
}

TEST_CASE("three-row csv with one NaN field gives two rows and one drop") {
  std::istringstream in("a,b,label\n1,2,1\nNaN,3,-1\n4,5,-1\n");
  CsvSchema schema;
  schema.label_column = "label";
  schema.label_map = {{"1", Label::legitimate}, {"-1", Label::malicious}};
  const IngestResult r = ingest_csv(in, schema);
  CHECK(r.data.size() == 2);
  CHECK(r.dropped == 1);
}

TEST_CASE("csv ingestion rejects bad input") {
  CsvSchema schema;
  schema.label_column = "label";
  schema.label_map = {{"1", Label::legitimate}};

  SUBCASE("unmapped label") {
    std::istringstream in("a,label\n1,1\n2,7\n");
    CHECK_THROWS_AS(ingest_csv(in, schema), DataError);
  }
  SUBCASE("missing label column") {
    std::istringstream in("a,b\n1,1\n");
    CHECK_THROWS_AS(ingest_csv(in, schema), DataError);
  }
  SUBCASE("no surviving rows") {
    std::istringstream in("a,label\n,1\nInfinity,1\n");
    CHECK_THROWS_AS(ingest_csv(in, schema), DataError);
  }
  SUBCASE("non-numeric feature") {
    std::istringstream in("a,label\nabc,1\n");
    CHECK_THROWS_AS(ingest_csv(in, schema), DataError);
  }
  SUBCASE("unreadable file") {
    CHECK_THROWS_AS(ingest_csv(fs::path("/nonexistent/flows.csv"), schema), DataError);
  }
  SUBCASE("schema without label map") {
    CHECK_THROWS_AS(CsvSchema::from_json(Json{{"label_column", "x"}}), ConfigError);
  }
}

TEST_CASE("csv records honour quoting") {
  std::istringstream in("\"a,b\",\"say \"\"hi\"\"\",\"multi\nline\"\nnext,row\n");
  std::vector<std::string> fields;
  REQUIRE(read_csv_record(in, fields));
  CHECK(fields == std::vector<std::string>{"a,b", "say \"hi\"", "multi\nline"});
  REQUIRE(read_csv_record(in, fields));
  CHECK(fields == std::vector<std::string>{"next", "row"});
  CHECK_FALSE(read_csv_record(in, fields));
}

TEST_CASE("stratified subsampling returns exact class counts without replacement") {
  const Dataset pool = generate_synthetic(1000, 200, 5, 2.0, 11);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto idx = stratified_subsample_indices(pool, 800, 80, seed);
    CHECK(idx.size() == 880);
    CHECK(std::set<Eigen::Index>(idx.begin(), idx.end()).size() == 880);
    const Dataset s = pool.subset(idx);
    CHECK(s.count(Label::legitimate) == 800);
    CHECK(s.count(Label::malicious) == 80);
  }
  const Dataset test = stratified_subsample(pool, 200, 200, 3);
  CHECK(test.size() == 400);
  CHECK(test.count(Label::malicious) == 200);

  const Dataset only_neg = stratified_subsample(pool, 0, 5, 4);
  CHECK(only_neg.size() == 5);
  CHECK(only_neg.count(Label::malicious) == 5);

  CHECK(stratified_subsample_indices(pool, 800, 80, 9) == stratified_subsample_indices(pool, 800, 80, 9));
  CHECK(stratified_subsample_indices(pool, 800, 80, 9) != stratified_subsample_indices(pool, 800, 80, 10));
  CHECK_THROWS_AS(stratified_subsample(pool, 1001, 1, 0), DataError);
  CHECK_THROWS_AS(stratified_subsample(pool, 1, 201, 0), DataError);
}

TEST_CASE("disjoint splits do not share rows") {
  Dataset pool = generate_synthetic(100, 40, 3, 1.0, 5);
  // Tag every row with its index so overlap is detectable.
  Eigen::MatrixXd x(pool.size(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = static_cast<double>(i);
  pool = Dataset(x, pool.y());
  const std::vector<ClassCounts> req{{30, 10}, {30, 10}, {40, 20}};
  const auto parts = disjoint_stratified_splits(pool, req, 77);
  std::set<double> seen;
  std::size_t total = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    CHECK(parts[k].count(Label::legitimate) == req[k].positives);
    CHECK(parts[k].count(Label::malicious) == req[k].negatives);
    for (Eigen::Index i = 0; i < parts[k].size(); ++i) seen.insert(parts[k].x()(i, 0));
    total += static_cast<std::size_t>(parts[k].size());
  }
  CHECK(seen.size() == total);
  const std::vector<ClassCounts> too_many{{60, 30}, {60, 30}};
  CHECK_THROWS_AS(disjoint_stratified_splits(pool, too_many, 1), DataError);
}

TEST_CASE("standardization examples") {
  const auto p = fit_standardization(small_dataset({{1, 1}, {3, -1}}));
  CHECK(p.mean[0] == doctest::Approx(2));
  CHECK(p.scale[0] == doctest::Approx(1));

  const auto c = fit_standardization(small_dataset({{5, 1}, {5, -1}, {5, 1}}));
  CHECK(c.mean[0] == doctest::Approx(5));
  CHECK(c.scale[0] == 1.0);

  CHECK_THROWS_AS(fit_standardization(small_dataset({{5, 1}})), std::invalid_argument);

  StandardizationParams q{Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 1.0)};
  CHECK(apply_standardization(small_dataset({{2, 1}}), q).x()(0, 0) == 0.0);
  q.scale[0] = 2.0;
  CHECK(apply_standardization(small_dataset({{4, 1}}), q).x()(0, 0) == 1.0);

  StandardizationParams wrong{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2)};
  CHECK_THROWS_AS(apply_standardization(small_dataset({{4, 1}}), wrong), std::invalid_argument);
}

TEST_CASE("standardized training data has zero mean and unit variance") {
  Dataset train = stratified_subsample(generate_synthetic(2000, 400, 20, 4.0, 3), 800, 80, 8);
  // One constant feature checks the zero-variance override.
  Eigen::MatrixXd x = train.x();
  x.col(3).setConstant(7.5);
  train = Dataset(x, train.y());
  const auto params = fit_standardization(train);
  CHECK(params.scale[3] == 1.0);
  const Dataset z = apply_standardization(train, params);
  for (Eigen::Index f = 0; f < z.features(); ++f) {
    const double mean = z.x().col(f).mean();
    CHECK(std::abs(mean) < 1e-9);
    if (f == 3) continue;
    const double var = (z.x().col(f).array() - mean).square().mean();
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
  }
}

TEST_CASE("standardization round trip and train-only parameters") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(3.0, 5.0);
  Eigen::MatrixXd x(50, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const Dataset d(x, Eigen::VectorXd::Ones(50));
  const auto params = fit_standardization(d);
  const Dataset back = invert_standardization(apply_standardization(d, params), params);
  CHECK(((back.x() - x).array().abs() / x.array().abs().max(1e-300)).maxCoeff() < 1e-9);

  // Test data is transformed with the supplied parameters only.
  const Dataset shifted(x.array() + 10.0, Eigen::VectorXd::Ones(50));
  const Dataset t = apply_standardization(shifted, params);
  for (Eigen::Index f = 0; f < 6; ++f) {
    CHECK(t.x().col(f).mean() == doctest::Approx(10.0 / params.scale[f]).epsilon(1e-9));
  }
}

TEST_CASE("feature moments merge exactly like a pooled fit") {
  const Dataset a = generate_synthetic(50, 10, 4, 2.0, 1);
  const Dataset b = generate_synthetic(30, 70, 4, 3.0, 2);
  const Dataset c = generate_synthetic(5, 5, 4, 1.0, 3);
  FeatureMoments m = FeatureMoments::of(a);
  m.merge(FeatureMoments::of(b));
  m.merge(FeatureMoments::of(c));
  const std::vector<Dataset> parts{a, b, c};
  const auto pooled = fit_standardization(Dataset::concat(parts));
  const auto merged = m.params();
  CHECK((merged.mean - pooled.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((merged.scale - pooled.scale).cwiseAbs().maxCoeff() < 1e-12);

  FeatureMoments empty;
  empty.merge(FeatureMoments::of(a));
  CHECK(empty.params().mean == fit_standardization(a).mean);
  CHECK(empty.params().scale == fit_standardization(a).scale);
}

TEST_CASE("synthetic generator") {
  const Dataset a = generate_synthetic(300, 30, 10, 6.0, 42);
  const Dataset b = generate_synthetic(300, 30, 10, 6.0, 42);
  CHECK(a.x() == b.x());
  CHECK(a.y() == b.y());
  CHECK(a.count(Label::legitimate) == 300);
  CHECK(a.count(Label::malicious) == 30);
  CHECK_FALSE(generate_synthetic(300, 30, 10, 6.0, 43).x() == a.x());

  // Class means sit +-separation/2 along a unit direction.
  const Dataset big = generate_synthetic(20000, 20000, 5, 6.0, 9);
  Eigen::VectorXd mp = Eigen::VectorXd::Zero(5), mn = Eigen::VectorXd::Zero(5);
  for (Eigen::Index i = 0; i < big.size(); ++i) {
    (big.y()[i] > 0 ? mp : mn) += big.x().row(i).transpose();
  }
  mp /= 20000.0;
  mn /= 20000.0;
  CHECK((mp - mn).norm() == doctest::Approx(6.0).epsilon(0.02));
  CHECK((mp + mn).norm() < 0.05);

  CHECK_THROWS_AS(generate_synthetic(1, 1, 0, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic(1, 1, 2, -1.0, 1), std::invalid_argument);
}

TEST_CASE("dataset persistence round trip with provenance sidecar") {
  const fs::path dir = temp_dir("data_io");
  const Dataset d = generate_synthetic(20, 5, 3, 2.0, 1);
  const auto params = fit_standardization(d);
  save_dataset(dir / "train.csv", d, {"synthetic", 99, 4, params});
  CHECK(fs::exists(sidecar_path(dir / "train.csv")));
  const LoadedDataset back = load_dataset(dir / "train.csv");
  CHECK(back.data.x() == d.x());
  CHECK(back.data.y() == d.y());
  CHECK(back.provenance.source == "synthetic");
  CHECK(back.provenance.seed == 99);
  CHECK(back.provenance.dropped == 4);
  REQUIRE(back.provenance.standardization);
  CHECK(back.provenance.standardization->mean == params.mean);
  CHECK(back.provenance.standardization->scale == params.scale);
}
