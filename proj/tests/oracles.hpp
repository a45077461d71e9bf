#pragma once

// Independent reference computations used by the unit and acceptance tests.
// None of them call into the library's algorithms.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Alignment <l, (1-g) y + g ln> / |(1-g) y + g ln| computed from the vectors.
inline double step_alignment(const Eigen::VectorXd& l, const Eigen::VectorXd& y, const Eigen::VectorXd& ln,
                             double g) {
  const Eigen::VectorXd z = (1.0 - g) * y + g * ln;
  const double n = z.norm();
  return n > 0 ? l.dot(z) / n : -std::numeric_limits<double>::infinity();
}

struct GridMax {
  double gamma;
  double alignment;
};

/// Dense grid over [0, 1] followed by golden-section refinement inside the
/// best grid cell.
inline GridMax maximize_on_grid(const std::function<double(double)>& f, int points = 4001) {
  int best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < points; ++i) {
    const double v = f(static_cast<double>(i) / (points - 1));
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  double lo = std::max(0, best - 1) / static_cast<double>(points - 1);
  double hi = std::min(points - 1, best + 1) / static_cast<double>(points - 1);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
    if (f(a) < f(b)) lo = a;
    else hi = b;
  }
  const double g = 0.5 * (lo + hi);
  GridMax out{g, f(g)};
  // Endpoints may beat the interior refinement when the maximum sits there.
  for (double e : {0.0, 1.0}) {
    if (f(e) > out.alignment) out = {e, f(e)};
  }
  return out;
}

/// Smallest |total - sum_{n in S} w_n v_n| over supports S with |S| <= max_support
/// and w >= 0, by enumeration of linearly independent supports with a least
/// squares solve each (a nonnegative optimum over any cone is attained on
/// such a support).
inline double best_nonnegative_residual(const Eigen::MatrixXd& v /* N x D */, const Eigen::VectorXd& total,
                                        int max_support) {
  const int n = static_cast<int>(v.rows());
  double best = total.norm();  // empty support
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    const int k = __builtin_popcount(mask);
    if (k > max_support) continue;
    Eigen::MatrixXd a(v.cols(), k);
    int c = 0;
    for (int i = 0; i < n; ++i) {
      if (mask & (1u << i)) a.col(c++) = v.row(i).transpose();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < k) continue;
    const Eigen::VectorXd w = qr.solve(total);
    if ((w.array() < 0).any()) continue;
    best = std::min(best, (total - a * w).norm());
  }
  return best;
}

/// Posterior mean and standard deviation of a 1-D or 2-D density given by its
/// unnormalized log on a tensor grid with the trapezoid rule.
struct Moments {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

inline Moments grid_moments(const std::function<double(const Eigen::VectorXd&)>& log_density, int dim,
                            double lo, double hi, int points) {
  const double h = (hi - lo) / (points - 1);
  std::vector<double> axis(points);
  for (int i = 0; i < points; ++i) axis[i] = lo + h * i;
  const auto weight = [&](int i) { return (i == 0 || i == points - 1) ? 0.5 : 1.0; };

  std::vector<Eigen::VectorXd> nodes;
  std::vector<double> logs, weights;
  Eigen::VectorXd t(dim);
  if (dim == 1) {
    for (int i = 0; i < points; ++i) {
      t[0] = axis[i];
      nodes.push_back(t);
      logs.push_back(log_density(t));
      weights.push_back(weight(i));
    }
  } else {
    for (int i = 0; i < points; ++i) {
      for (int j = 0; j < points; ++j) {
        t << axis[i], axis[j];
        nodes.push_back(t);
        logs.push_back(log_density(t));
        weights.push_back(weight(i) * weight(j));
      }
    }
  }
  const double peak = *std::max_element(logs.begin(), logs.end());
  double z = 0.0;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(dim), m2 = Eigen::VectorXd::Zero(dim);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double p = weights[k] * std::exp(logs[k] - peak);
    z += p;
    m1 += p * nodes[k];
    m2 += p * nodes[k].cwiseProduct(nodes[k]);
  }
  m1 /= z;
  m2 /= z;
  return {m1, (m2 - m1.cwiseProduct(m1)).cwiseMax(0.0).cwiseSqrt()};
}

/// Log posterior of weighted logistic regression written out term by term.
inline double blr_log_posterior(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                const Eigen::VectorXd& theta) {
  double s = -0.5 * theta.squaredNorm();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = y[i] * x.row(i).dot(theta);
    s += w[i] * (m >= 0 ? -std::log1p(std::exp(-m)) : m - std::log1p(std::exp(m)));
  }
  return s;
}

}  // namespace oracle
