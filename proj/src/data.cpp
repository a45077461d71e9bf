#include "bcore/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace bcore {

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Parses a feature cell. Returns nullopt for values that count as missing;
// throws for text that is not a number at all.
std::optional<double> parse_cell(std::string_view raw) {
  const std::string_view s = trim(raw);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec == std::errc::result_out_of_range) return std::nullopt;
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError("non-numeric feature value '" + std::string(s) + "'");
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(Eigen::MatrixXd x, Eigen::VectorXd y) : x_(std::move(x)), y_(std::move(y)) {
  if (x_.rows() < 1 || x_.cols() < 1)
    throw std::invalid_argument("dataset needs at least one sample and one feature");
  if (y_.size() != x_.rows())
    throw std::invalid_argument("label count does not match sample count");
  if (!x_.allFinite()) throw std::invalid_argument("dataset contains non-finite values");
  for (Eigen::Index i = 0; i < y_.size(); ++i)
    if (y_[i] != 1.0 && y_[i] != -1.0)
      throw std::invalid_argument("labels must be +1 or -1");
}

Eigen::Index Dataset::count(Label label) const noexcept {
  const double v = static_cast<double>(static_cast<int>(label));
  return (y_.array() == v).count();
}

Dataset Dataset::subset(std::span<const Eigen::Index> rows) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), x_.cols());
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Eigen::Index r = rows[k];
    if (r < 0 || r >= size()) throw std::out_of_range("subset row out of range");
    x.row(static_cast<Eigen::Index>(k)) = x_.row(r);
    y[static_cast<Eigen::Index>(k)] = y_[r];
  }
  return Dataset(std::move(x), std::move(y));
}

Dataset Dataset::concat(std::span<const Dataset> parts) {
  if (parts.empty()) throw std::invalid_argument("concat of zero datasets");
  const Eigen::Index f = parts.front().features();
  Eigen::Index n = 0;
  for (const auto& p : parts) {
    if (p.features() != f) throw std::invalid_argument("feature dimension mismatch in concat");
    n += p.size();
  }
  Eigen::MatrixXd x(n, f);
  Eigen::VectorXd y(n);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    x.middleRows(at, p.size()) = p.x();
    y.segment(at, p.size()) = p.y();
    at += p.size();
  }
  return Dataset(std::move(x), std::move(y));
}

// ---------------------------------------------------------------------------
// CSV

CsvSchema CsvSchema::from_json(const Json& j) {
  CsvSchema s;
  try {
    if (j.contains("feature_columns")) s.feature_columns = j.at("feature_columns").get<std::vector<std::string>>();
    if (j.contains("exclude_columns")) s.exclude_columns = j.at("exclude_columns").get<std::vector<std::string>>();
    if (j.contains("label_column")) s.label_column = j.at("label_column").get<std::string>();
    for (const auto& [key, value] : j.at("label_map").items()) {
      const int v = value.get<int>();
      if (v != 1 && v != -1) throw ConfigError("label_map values must be +1 or -1");
      s.label_map[key] = static_cast<Label>(v);
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad CSV schema: ") + e.what());
  }
  if (s.label_map.empty()) throw ConfigError("CSV schema needs a non-empty label_map");
  return s;
}

Json CsvSchema::to_json() const {
  Json j;
  j["feature_columns"] = feature_columns;
  j["exclude_columns"] = exclude_columns;
  j["label_column"] = label_column;
  Json m = Json::object();
  for (const auto& [k, v] : label_map) m[k] = static_cast<int>(v);
  j["label_map"] = m;
  return j;
}

bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c = 0;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get();
      break;
    } else {
      field.push_back(c);
    }
  }
  if (!any) return false;
  if (in_quotes) throw DataError("unterminated quoted CSV field");
  fields.push_back(std::move(field));
  return true;
}

IngestResult ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CSV file " + path.string());
  return ingest_csv(in, schema, path.string());
}

IngestResult ingest_csv(std::istream& in, const CsvSchema& schema, const std::string& source_name) {
  std::vector<std::string> header;
  if (!read_csv_record(in, header)) throw DataError(source_name + ": empty CSV (no header)");

  std::unordered_map<std::string, std::size_t> column_of;
  for (std::size_t c = 0; c < header.size(); ++c) column_of.emplace(std::string(trim(header[c])), c);

  const auto label_it = column_of.find(schema.label_column);
  if (label_it == column_of.end())
    throw DataError(source_name + ": label column '" + schema.label_column + "' not in header");
  const std::size_t label_col = label_it->second;

  std::vector<std::size_t> feature_cols;
  std::vector<std::string> feature_names;
  if (schema.feature_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      const std::string name(trim(header[c]));
      if (c == label_col) continue;
      if (std::find(schema.exclude_columns.begin(), schema.exclude_columns.end(), name) !=
          schema.exclude_columns.end())
        continue;
      feature_cols.push_back(c);
      feature_names.push_back(name);
    }
  } else {
    for (const auto& name : schema.feature_columns) {
      const auto it = column_of.find(name);
      if (it == column_of.end())
        throw DataError(source_name + ": feature column '" + name + "' not in header");
      feature_cols.push_back(it->second);
      feature_names.push_back(name);
    }
  }
  if (feature_cols.empty()) throw DataError(source_name + ": schema selects no feature columns");

  const auto wildcard = schema.label_map.find("*");
  std::vector<double> values;
  std::vector<double> labels;
  std::size_t raw = 0;
  std::size_t dropped = 0;
  std::vector<std::string> fields;
  std::vector<double> row(feature_cols.size());
  while (read_csv_record(in, fields)) {
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;  // blank line
    ++raw;
    if (fields.size() != header.size())
      throw DataError(source_name + ": record " + std::to_string(raw) + " has " +
                      std::to_string(fields.size()) + " fields, header has " +
                      std::to_string(header.size()));
    const std::string label_text(trim(fields[label_col]));
    auto lit = schema.label_map.find(label_text);
    if (lit == schema.label_map.end()) lit = wildcard;
    if (lit == schema.label_map.end())
      throw DataError(source_name + ": record " + std::to_string(raw) + " has unmapped label '" +
                      label_text + "'");
    bool missing = false;
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      std::optional<double> v;
      try {
        v = parse_cell(fields[feature_cols[k]]);
      } catch (const DataError& e) {
        throw DataError(source_name + ": record " + std::to_string(raw) + ", column '" +
                        feature_names[k] + "': " + e.what());
      }
      if (!v) {
        missing = true;
        break;
      }
      row[k] = *v;
    }
    if (missing) {
      ++dropped;
      continue;
    }
    values.insert(values.end(), row.begin(), row.end());
    labels.push_back(static_cast<double>(static_cast<int>(lit->second)));
  }
  if (labels.empty()) throw DataError(source_name + ": no rows survive cleaning");

  const auto n = static_cast<Eigen::Index>(labels.size());
  const auto f = static_cast<Eigen::Index>(feature_cols.size());
  Eigen::MatrixXd x = Eigen::Map<const RowMatrix>(values.data(), n, f);
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(labels.data(), n);
  return IngestResult{Dataset(std::move(x), std::move(y)), std::move(feature_names), raw, dropped};
}

// ---------------------------------------------------------------------------
// Subsampling

std::vector<Eigen::Index> stratified_subsample_indices(const Dataset& data, Eigen::Index n_pos,
                                                       Eigen::Index n_neg, std::uint64_t seed) {
  if (n_pos < 0 || n_neg < 0) throw std::invalid_argument("negative subsample count");
  std::vector<Eigen::Index> pos;
  std::vector<Eigen::Index> neg;
  for (Eigen::Index i = 0; i < data.size(); ++i) (data.y()[i] > 0 ? pos : neg).push_back(i);
  if (static_cast<Eigen::Index>(pos.size()) < n_pos)
    throw DataError("requested " + std::to_string(n_pos) + " positives, only " +
                    std::to_string(pos.size()) + " available");
  if (static_cast<Eigen::Index>(neg.size()) < n_neg)
    throw DataError("requested " + std::to_string(n_neg) + " negatives, only " +
                    std::to_string(neg.size()) + " available");

  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first k entries become a uniform k-subset.
  const auto draw = [&rng](std::vector<Eigen::Index>& pool, Eigen::Index k) {
    for (Eigen::Index i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
    }
    pool.resize(static_cast<std::size_t>(k));
  };
  draw(pos, n_pos);
  draw(neg, n_neg);
  std::vector<Eigen::Index> out;
  out.reserve(pos.size() + neg.size());
  out.insert(out.end(), pos.begin(), pos.end());
  out.insert(out.end(), neg.begin(), neg.end());
  std::sort(out.begin(), out.end());
  return out;
}

Dataset stratified_subsample(const Dataset& data, Eigen::Index n_pos, Eigen::Index n_neg,
                             std::uint64_t seed) {
  const auto idx = stratified_subsample_indices(data, n_pos, n_neg, seed);
  return data.subset(idx);
}

std::vector<Dataset> disjoint_stratified_splits(const Dataset& data,
                                                std::span<const ClassCounts> requests,
                                                std::uint64_t seed) {
  // Draw the union once, then deal it out in order; a uniform subset of the
  // shuffled union is itself uniform.
  Eigen::Index total_pos = 0;
  Eigen::Index total_neg = 0;
  for (const auto& r : requests) {
    total_pos += r.positives;
    total_neg += r.negatives;
  }
  std::vector<Eigen::Index> pos;
  std::vector<Eigen::Index> neg;
  for (Eigen::Index i = 0; i < data.size(); ++i) (data.y()[i] > 0 ? pos : neg).push_back(i);
  if (static_cast<Eigen::Index>(pos.size()) < total_pos ||
      static_cast<Eigen::Index>(neg.size()) < total_neg)
    throw DataError("not enough samples for the requested disjoint splits");
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);

  std::vector<Dataset> out;
  std::size_t at_pos = 0;
  std::size_t at_neg = 0;
  for (const auto& r : requests) {
    std::vector<Eigen::Index> idx;
    idx.insert(idx.end(), pos.begin() + static_cast<std::ptrdiff_t>(at_pos),
               pos.begin() + static_cast<std::ptrdiff_t>(at_pos + static_cast<std::size_t>(r.positives)));
    idx.insert(idx.end(), neg.begin() + static_cast<std::ptrdiff_t>(at_neg),
               neg.begin() + static_cast<std::ptrdiff_t>(at_neg + static_cast<std::size_t>(r.negatives)));
    at_pos += static_cast<std::size_t>(r.positives);
    at_neg += static_cast<std::size_t>(r.negatives);
    std::sort(idx.begin(), idx.end());
    out.push_back(data.subset(idx));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standardization

Json StandardizationParams::to_json() const {
  return Json{{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
              {"scale", std::vector<double>(scale.data(), scale.data() + scale.size())}};
}

StandardizationParams StandardizationParams::from_json(const Json& j) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("scale").get<std::vector<double>>();
  if (m.size() != s.size()) throw DataError("standardization mean/scale length mismatch");
  StandardizationParams p;
  p.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
  p.scale = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
  return p;
}

StandardizationParams fit_standardization(const Dataset& train) {
  return fit_standardization(std::span<const Dataset>(&train, 1));
}

StandardizationParams fit_standardization(std::span<const Dataset> parts) {
  if (parts.empty()) throw std::invalid_argument("standardization needs data");
  FeatureMoments total;
  for (const auto& p : parts) total.merge(FeatureMoments::of(p));
  return total.params();
}

FeatureMoments FeatureMoments::of(const Dataset& data) {
  FeatureMoments m;
  m.count = static_cast<double>(data.size());
  m.mean = data.x().colwise().mean().transpose();
  m.m2 = (data.x().rowwise() - m.mean.transpose()).colwise().squaredNorm().transpose();
  return m;
}

void FeatureMoments::merge(const FeatureMoments& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  if (other.mean.size() != mean.size()) throw std::invalid_argument("feature dimension mismatch");
  // Chan et al. pairwise update.
  const Eigen::VectorXd delta = other.mean - mean;
  const double total = count + other.count;
  mean += delta * (other.count / total);
  m2 += other.m2 + delta.cwiseAbs2() * (count * other.count / total);
  count = total;
}

StandardizationParams FeatureMoments::params() const {
  if (count < 2) throw std::invalid_argument("standardization needs at least two samples");
  StandardizationParams p;
  p.mean = mean;
  p.scale = (m2 / count).cwiseSqrt();
  for (Eigen::Index k = 0; k < p.scale.size(); ++k)
    if (!(p.scale[k] >= kMinScale)) p.scale[k] = 1.0;
  return p;
}

Dataset apply_standardization(const Dataset& data, const StandardizationParams& params) {
  if (params.mean.size() != data.features() || params.scale.size() != data.features())
    throw std::invalid_argument("standardization dimension mismatch");
  Eigen::MatrixXd x = (data.x().rowwise() - params.mean.transpose()).array().rowwise() /
                      params.scale.transpose().array();
  return Dataset(std::move(x), data.y());
}

Dataset invert_standardization(const Dataset& data, const StandardizationParams& params) {
  if (params.mean.size() != data.features() || params.scale.size() != data.features())
    throw std::invalid_argument("standardization dimension mismatch");
  Eigen::MatrixXd x = (data.x().array().rowwise() * params.scale.transpose().array()).matrix();
  x.rowwise() += params.mean.transpose();
  return Dataset(std::move(x), data.y());
}

// ---------------------------------------------------------------------------
// Synthetic

Dataset generate_synthetic(Eigen::Index n_pos, Eigen::Index n_neg, Eigen::Index features,
                           double separation, std::uint64_t seed) {
  if (features < 1) throw std::invalid_argument("synthetic data needs at least one feature");
  if (!(separation >= 0) || !std::isfinite(separation))
    throw std::invalid_argument("separation must be finite and non-negative");
  if (n_pos < 0 || n_neg < 0 || n_pos + n_neg < 1)
    throw std::invalid_argument("synthetic data needs at least one sample");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd u(features);
  do {
    for (Eigen::Index k = 0; k < features; ++k) u[k] = normal(rng);
  } while (u.norm() == 0.0);
  u.normalize();

  const Eigen::Index n = n_pos + n_neg;
  Eigen::MatrixXd x(n, features);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double label = i < n_pos ? 1.0 : -1.0;
    for (Eigen::Index k = 0; k < features; ++k) x(i, k) = normal(rng);
    x.row(i) += (label * separation / 2.0) * u.transpose();
    y[i] = label;
  }
  return Dataset(std::move(x), std::move(y));
}

// ---------------------------------------------------------------------------
// Persistence

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  return std::filesystem::path(csv_path.string() + ".json");
}

std::string dataset_to_csv(const Dataset& data) {
  std::string out;
  for (Eigen::Index k = 0; k < data.features(); ++k) out += "f" + std::to_string(k) + ",";
  out += "label\n";
  char buf[32];
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index k = 0; k < data.features(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g,", data.x()(i, k));
      out += buf;
    }
    out += data.y()[i] > 0 ? "1\n" : "-1\n";
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data,
                  const DatasetProvenance& provenance) {
  write_text_file(path, dataset_to_csv(data));
  Json side{{"source", provenance.source},
            {"seed", provenance.seed},
            {"dropped", provenance.dropped},
            {"samples", data.size()},
            {"features", data.features()}};
  side["standardization"] =
      provenance.standardization ? provenance.standardization->to_json() : Json(nullptr);
  write_text_file(sidecar_path(path), side.dump() + "\n");
}

LoadedDataset load_dataset(const std::filesystem::path& path) {
  CsvSchema schema;
  schema.label_column = "label";
  schema.label_map = {{"1", Label::legitimate}, {"-1", Label::malicious}};
  auto ingested = ingest_csv(path, schema);
  DatasetProvenance prov;
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    try {
      const Json j = Json::parse(read_text_file(side));
      prov.source = j.value("source", "");
      prov.seed = j.value("seed", std::uint64_t{0});
      prov.dropped = j.value("dropped", std::size_t{0});
      if (j.contains("standardization") && !j["standardization"].is_null())
        prov.standardization = StandardizationParams::from_json(j["standardization"]);
    } catch (const Json::exception& e) {
      throw DataError("corrupt sidecar " + side.string() + ": " + e.what());
    }
  }
  return LoadedDataset{std::move(ingested.data), std::move(prov)};
}

}  // namespace bcore
