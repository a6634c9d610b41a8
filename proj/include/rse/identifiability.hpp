#pragma once

// Measurement distance and outlier observability/identifiability levels for
// linear(ized) measurement maps.

#include <algorithm>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace rse {

struct IdentifiabilityReport {
  int measurements = 0;  // M
  int columns = 0;
  int numeric_rank = 0;
  int distance = 0;  // D
  int observability = 0;    // K_o
  int identifiability = 0;  // K_i
  double rank_tolerance = 0.0;

  bool full_column_rank() const { return numeric_rank == columns; }
};

inline double default_rank_tolerance(const Eigen::MatrixXd& a, double sigma_max) {
  return static_cast<double>(std::max(a.rows(), a.cols())) *
         std::numeric_limits<double>::epsilon() * sigma_max;
}

/// Number of singular values above `tol` (default max(m,n) * eps * sigma_max).
inline int numeric_rank(const Eigen::MatrixXd& a, std::optional<double> tol = std::nullopt,
                        double* used_tol = nullptr) {
  if (a.size() == 0) throw std::invalid_argument("numeric rank of an empty matrix");
  const Eigen::VectorXd s = Eigen::BDCSVD<Eigen::MatrixXd>(a).singularValues();
  const double t = tol.value_or(default_rank_tolerance(a, s.size() ? s(0) : 0.0));
  if (used_tol) *used_tol = t;
  return static_cast<int>((s.array() > t).count());
}

/// M + 1 - rank(H).
inline int linear_distance(const Eigen::MatrixXd& h, std::optional<double> tol = std::nullopt) {
  return static_cast<int>(h.rows()) + 1 - numeric_rank(h, tol);
}

/// (K_o, K_i) = (D - 1, floor((D - 1) / 2)).
inline std::pair<int, int> sparsity_levels(int distance) {
  if (distance < 1) throw std::invalid_argument("measurement distance must be at least 1");
  return {distance - 1, (distance - 1) / 2};
}

inline IdentifiabilityReport analyze_linear(const Eigen::MatrixXd& h,
                                            std::optional<double> tol = std::nullopt) {
  IdentifiabilityReport r;
  r.measurements = static_cast<int>(h.rows());
  r.columns = static_cast<int>(h.cols());
  r.numeric_rank = numeric_rank(h, tol, &r.rank_tolerance);
  r.distance = r.measurements + 1 - r.numeric_rank;
  std::tie(r.observability, r.identifiability) = sparsity_levels(r.distance);
  return r;
}

inline nlohmann::json to_json(const IdentifiabilityReport& r) {
  return {{"M", r.measurements},
          {"columns", r.columns},
          {"numeric_rank", r.numeric_rank},
          {"full_column_rank", r.full_column_rank()},
          {"distance", r.distance},
          {"K_o", r.observability},
          {"K_i", r.identifiability},
          {"rank_tolerance", r.rank_tolerance}};
}

inline constexpr int kBruteForceMaxRows = 20;

/// min over x != 0 of ||H x||_0, by enumerating row subsets Z with
/// rank(H_Z) < n: D = M - max |Z|. Rank-deficient subsets are closed under
/// taking subsets, so the search only extends deficient sets.
inline int brute_force_distance(const Eigen::MatrixXd& h) {
  const int m = static_cast<int>(h.rows());
  const int n = static_cast<int>(h.cols());
  if (m > kBruteForceMaxRows) {
    throw std::invalid_argument("brute-force distance limited to " +
                                std::to_string(kBruteForceMaxRows) + " rows");
  }
  if (m == 0 || n == 0 || h.isZero(0.0)) {
    throw std::invalid_argument("measurement distance undefined for a zero map");
  }
  const double tol = default_rank_tolerance(h, Eigen::BDCSVD<Eigen::MatrixXd>(h).singularValues()(0));
  auto deficient = [&](const std::vector<int>& rows) {
    if (rows.empty()) return true;
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), n);
    for (std::size_t i = 0; i < rows.size(); ++i) sub.row(i) = h.row(rows[i]);
    return numeric_rank(sub, tol) < n;
  };

  int best = 0;
  std::vector<int> current;
  // Depth-first over deficient sets in increasing index order.
  auto extend = [&](auto&& self, int next) -> void {
    best = std::max(best, static_cast<int>(current.size()));
    if (best == m) return;
    for (int r = next; r < m; ++r) {
      if (static_cast<int>(current.size()) + (m - r) <= best) return;
      current.push_back(r);
      if (deficient(current)) self(self, r + 1);
      current.pop_back();
    }
  };
  extend(extend, 0);
  return m - best;
}

}  // namespace rse
