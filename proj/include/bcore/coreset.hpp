#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bcore/common.hpp"
#include "bcore/embed.hpp"

namespace bcore {

/// Row `row` of the batch (training set) identified by `batch`.
struct SampleId {
  std::uint32_t batch = 0;
  Eigen::Index row = 0;

  friend bool operator==(const SampleId&, const SampleId&) = default;
  friend auto operator<=>(const SampleId&, const SampleId&) = default;
};

struct CoresetEntry {
  SampleId id;
  double weight = 0.0;
};

struct CoresetDiagnostics {
  std::string method;
  std::size_t budget = 0;
  std::size_t iterations_run = 0;
  /// |sum_i v_i - sum_n w_n v_n| in embedding space, when an embedding is known.
  std::optional<double> residual_norm;
  /// residual_norm / |sum_i v_i|: a projected-space surrogate for the
  /// relative log-likelihood error, not the sup-norm bound itself.
  std::optional<double> relative_error;
  /// Cosine between the total and the current iterate, per iteration.
  std::vector<double> alignment_trace;
  double wall_clock_seconds = 0.0;
  bool early_stop = false;
  std::string stop_reason;
};

/// Weighted sample subset bound to the likelihood family it approximates.
/// Every stored weight is strictly positive.
class Coreset {
 public:
  Coreset(std::string model_family, std::vector<CoresetEntry> entries, CoresetDiagnostics diagnostics);

  const std::string& model_family() const noexcept { return model_family_; }
  const std::vector<CoresetEntry>& entries() const noexcept { return entries_; }
  const CoresetDiagnostics& diagnostics() const noexcept { return diagnostics_; }
  CoresetDiagnostics& diagnostics() noexcept { return diagnostics_; }
  std::size_t size() const noexcept { return entries_.size(); }

  double total_weight() const noexcept;
  /// Rows and weights of the entries drawn from `batch`, in entry order.
  std::vector<Eigen::Index> rows(std::uint32_t batch) const;
  Eigen::VectorXd weights(std::uint32_t batch) const;
  /// Entry weights scattered into a length-n vector (zeros elsewhere).
  Eigen::VectorXd dense_weights(Eigen::Index n, std::uint32_t batch = 0) const;

  Json to_json() const;
  static Coreset from_json(const Json& j);

 private:
  std::string model_family_;
  std::vector<CoresetEntry> entries_;
  CoresetDiagnostics diagnostics_;
};

// ---------------------------------------------------------------------------
// Geodesic step

/// Step size along the great circle from the unit iterate y toward the unit
/// vector l_n that maximizes alignment with the unit target l, given
/// zeta0 = <l, y>, zeta1 = <l, l_n>, zeta2 = <y, l_n>. The stationary point
/// (zeta1 - zeta0 zeta2) / ((zeta1 - zeta0 zeta2) + (zeta0 - zeta1 zeta2)) is
/// clipped to [0, 1] and compared against both endpoints.
struct GeodesicStep {
  double gamma = 0.0;
  double alignment = 0.0;  // <l, y(gamma)> after the step
  bool degenerate = false;  // stationary-point denominator below 1e-14
};

GeodesicStep geodesic_step(double zeta0, double zeta1, double zeta2);

/// <l, ((1 - g) y + g l_n) / |(1 - g) y + g l_n|> from the three inner products.
double alignment_after_step(double zeta0, double zeta1, double zeta2, double gamma);

// ---------------------------------------------------------------------------
// Constructors

/// Greedy iterative geodesic ascent with at most `iterations` steps. Repeat
/// selections update the existing entry. Lowest index wins exact ties.
Coreset giga_construct(const LikelihoodEmbedding& emb, std::size_t iterations,
                       const std::string& model_family = kLogisticFamily, std::uint32_t batch = 0);

/// Frank-Wolfe on |sum v - sum w v|^2 over {w >= 0, sum_n w_n |v_n| = sum_n |v_n|}
/// with exact line search.
Coreset frankwolfe_construct(const LikelihoodEmbedding& emb, std::size_t iterations,
                             const std::string& model_family = kLogisticFamily,
                             std::uint32_t batch = 0);

/// m rows uniformly without replacement, each weighted data_size / m.
Coreset random_construct(Eigen::Index data_size, std::size_t m, std::uint64_t seed,
                         const std::string& model_family = kLogisticFamily, std::uint32_t batch = 0);

/// Residual of the coreset's weighted sum against the total of `emb`. Only
/// entries from `batch` are used.
double coreset_residual(const LikelihoodEmbedding& emb, const Coreset& coreset, std::uint32_t batch = 0);

/// Fills residual_norm / relative_error of the coreset's diagnostics.
void score_coreset(const LikelihoodEmbedding& emb, Coreset& coreset, std::uint32_t batch = 0);

/// Union of coresets of the same model family with provenance kept. Source
/// ids must be disjoint.
Coreset aggregate(std::span<const Coreset> coresets);

void save_coreset(const std::filesystem::path& path, const Coreset& coreset);
Coreset load_coreset(const std::filesystem::path& path);

}  // namespace bcore
