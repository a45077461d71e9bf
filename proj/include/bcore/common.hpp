#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <json.hpp>

namespace bcore {

using Json = nlohmann::json;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Error families. The CLI maps each to a distinct exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure (optimizer divergence, persistent HMC divergence, ...).
/// Carries a JSON diagnostics record that callers may persist.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, Json diagnostics = Json::object())
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
  const Json& diagnostics() const noexcept { return diagnostics_; }

 private:
  Json diagnostics_;
};

// ---------------------------------------------------------------------------
// Logistic helpers.

/// log(sigmoid(m)) = -log(1 + exp(-m)) without overflow for any finite m.
inline double log_sigmoid(double m) noexcept {
  if (m >= 0) return -std::log1p(std::exp(-m));
  return m - std::log1p(std::exp(m));
}

inline double sigmoid(double m) noexcept {
  if (m >= 0) return 1.0 / (1.0 + std::exp(-m));
  const double e = std::exp(m);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Hierarchical seed derivation.
//
// Every random stream in the system is keyed by a path of (tag, index) pairs
// below the root seed: seed(path) = mix(...mix(mix(root, tag0, idx0), tag1,
// idx1)...), where mix folds an FNV-1a hash of the tag and the index into the
// state through the splitmix64 finalizer. Paths are listed in README.md.

std::uint64_t splitmix64(std::uint64_t x) noexcept;

class SeedTree {
 public:
  explicit SeedTree(std::uint64_t root) : state_(root) {}

  SeedTree child(std::string_view tag, std::uint64_t index = 0) const noexcept;
  std::uint64_t seed() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Binary matrix artifacts: one line of JSON header, a newline, then rows*cols
// little-endian IEEE-754 doubles in row-major order. The header always carries
// "rows" and "cols"; callers add their own metadata.

void write_matrix_file(const std::filesystem::path& path, Json header,
                       const Eigen::Ref<const Eigen::MatrixXd>& m);

struct MatrixFile {
  Json header;
  Eigen::MatrixXd matrix;
};

MatrixFile read_matrix_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace bcore
