#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bcore/common.hpp"

namespace bcore {

/// Binary flow class. The numeric values are the ones used inside the
/// logistic likelihood.
enum class Label : int { legitimate = 1, malicious = -1 };

/// Labelled N x F design matrix. Immutable after construction; the
/// constructor enforces N >= 1, F >= 1, finite entries and labels in {+1,-1}.
class Dataset {
 public:
  Dataset(Eigen::MatrixXd x, Eigen::VectorXd y);

  const Eigen::MatrixXd& x() const noexcept { return x_; }
  const Eigen::VectorXd& y() const noexcept { return y_; }
  Eigen::Index size() const noexcept { return x_.rows(); }
  Eigen::Index features() const noexcept { return x_.cols(); }
  Eigen::Index count(Label label) const noexcept;

  Dataset subset(std::span<const Eigen::Index> rows) const;

  static Dataset concat(std::span<const Dataset> parts);

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

/// Column mapping for a flow CSV. When `feature_columns` is empty every column
/// except the label column and `exclude_columns` is a feature.
struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::vector<std::string> exclude_columns;
  std::string label_column = "Label";
  /// Raw label text -> class. The key "*" matches any unlisted value.
  std::map<std::string, Label> label_map;

  static CsvSchema from_json(const Json& j);
  Json to_json() const;
};

struct IngestResult {
  Dataset data;
  std::vector<std::string> feature_names;
  std::size_t raw_rows = 0;
  std::size_t dropped = 0;
};

/// Streams an RFC-4180 CSV with a header row. Rows containing a missing
/// feature value (empty, NaN, +-Infinity) are dropped and counted.
IngestResult ingest_csv(const std::filesystem::path& path, const CsvSchema& schema);
IngestResult ingest_csv(std::istream& in, const CsvSchema& schema,
                        const std::string& source_name = "<stream>");

/// Splits one logical CSV record (which may span physical lines when a quoted
/// field contains a newline). Returns false at end of input.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields);

// ---------------------------------------------------------------------------
// Subsampling

/// Indices (ascending) of exactly n_pos legitimate and n_neg malicious rows
/// drawn uniformly without replacement.
std::vector<Eigen::Index> stratified_subsample_indices(const Dataset& data,
                                                       Eigen::Index n_pos,
                                                       Eigen::Index n_neg,
                                                       std::uint64_t seed);

Dataset stratified_subsample(const Dataset& data, Eigen::Index n_pos, Eigen::Index n_neg,
                             std::uint64_t seed);

struct ClassCounts {
  Eigen::Index positives = 0;
  Eigen::Index negatives = 0;
};

/// Draws len(requests) mutually disjoint stratified subsets from `data`.
std::vector<Dataset> disjoint_stratified_splits(const Dataset& data,
                                                std::span<const ClassCounts> requests,
                                                std::uint64_t seed);

// ---------------------------------------------------------------------------
// Standardization

struct StandardizationParams {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  Json to_json() const;
  static StandardizationParams from_json(const Json& j);
};

inline constexpr double kMinScale = 1e-12;

/// Per-feature mean and population standard deviation; scales below kMinScale
/// are replaced by 1.
StandardizationParams fit_standardization(const Dataset& train);

/// Same statistics computed from pooled sufficient statistics of several
/// datasets, without concatenating them.
StandardizationParams fit_standardization(std::span<const Dataset> parts);

/// Per-feature (count, mean, sum of squared deviations). Merging is exact up
/// to rounding, so a stream can drop raw batches and keep only these.
struct FeatureMoments {
  double count = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd m2;

  static FeatureMoments of(const Dataset& data);
  void merge(const FeatureMoments& other);
  StandardizationParams params() const;
};

Dataset apply_standardization(const Dataset& data, const StandardizationParams& params);
Dataset invert_standardization(const Dataset& data, const StandardizationParams& params);

// ---------------------------------------------------------------------------
// Synthetic flows

/// Two unit-variance isotropic Gaussians centred at +-separation/2 along a
/// random unit direction drawn from `seed`.
Dataset generate_synthetic(Eigen::Index n_pos, Eigen::Index n_neg, Eigen::Index features,
                           double separation, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Persistence

struct DatasetProvenance {
  std::string source;
  std::uint64_t seed = 0;
  std::size_t dropped = 0;
  std::optional<StandardizationParams> standardization;
};

std::string dataset_to_csv(const Dataset& data);

/// Writes `path` as CSV (columns f0..f{F-1},label) and `path`.json as a
/// one-line provenance sidecar.
void save_dataset(const std::filesystem::path& path, const Dataset& data,
                  const DatasetProvenance& provenance);

struct LoadedDataset {
  Dataset data;
  DatasetProvenance provenance;
};

LoadedDataset load_dataset(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

}  // namespace bcore
