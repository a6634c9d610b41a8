#pragma once

// Rank-one state extraction from a relaxation solution, and the end-to-end
// robust estimator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "rse/gauss_newton.hpp"
#include "rse/measurement.hpp"
#include "rse/network.hpp"
#include "rse/random.hpp"
#include "rse/sdr.hpp"

namespace rse {

enum class EstimateMethod { Eigen, Randomized, GaussNewton };

inline const char* method_name(EstimateMethod m) {
  switch (m) {
    case EstimateMethod::Eigen: return "eigen";
    case EstimateMethod::Randomized: return "randomized";
    case EstimateMethod::GaussNewton: return "gauss_newton";
  }
  return "?";
}

struct StateEstimate {
  Eigen::VectorXcd v;
  EstimateMethod method = EstimateMethod::Eigen;
  int samples = 0;  // drawn, for Randomized
  int rank_of_v = 0;
  std::vector<int> inliers;  // 0-based meter indices
  double fit_cost = 0.0;     // sum over inliers of w (z - h(v))^2
};

inline constexpr double kDefaultSupportTol = 1e-6;

inline bool is_outlier(double a, double z, double support_tol = kDefaultSupportTol) {
  return std::abs(a) > support_tol * std::max(1.0, std::abs(z));
}

/// Meters whose outlier entry is zero up to the support tolerance.
inline std::vector<int> inlier_set(const Eigen::VectorXd& a, const Eigen::VectorXd& z,
                                   double support_tol = kDefaultSupportTol) {
  std::vector<int> out;
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    if (!is_outlier(a(l), z(l), support_tol)) out.push_back(static_cast<int>(l));
  }
  return out;
}

inline std::vector<int> outlier_support(const Eigen::VectorXd& a, const Eigen::VectorXd& z,
                                        double support_tol = kDefaultSupportTol) {
  std::vector<int> out;
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    if (is_outlier(a(l), z(l), support_tol)) out.push_back(static_cast<int>(l));
  }
  return out;
}

inline double fit_cost(const SdpProblem& p, const Eigen::VectorXcd& v,
                       const std::vector<int>& inliers) {
  double acc = 0.0;
  for (int l : inliers) {
    const double r = p.z(l) - p.coeffs[l].quadratic(v);
    acc += p.w(l) * r * r;
  }
  return acc;
}

/// Eigenvalues above N * eps * lambda_1 (descending input).
inline int psd_numeric_rank(const Eigen::VectorXd& eigenvalues_desc) {
  if (eigenvalues_desc.size() == 0 || !(eigenvalues_desc(0) > 0.0)) return 0;
  const double tol = static_cast<double>(eigenvalues_desc.size()) *
                     std::numeric_limits<double>::epsilon() * eigenvalues_desc(0);
  return static_cast<int>((eigenvalues_desc.array() > tol).count());
}

/// sqrt(lambda_1) u_1, phase-aligned. A tied leading eigenspace is resolved by
/// projecting the lowest-index unit vector with a nonzero projection.
inline StateEstimate extract_eigen(const SdpProblem& p, const SdpSolution& sol, BusId ref,
                                   double support_tol = kDefaultSupportTol) {
  const Eigen::Index n = sol.v.rows();
  if (ref.index() < 0 || ref.index() >= n) throw std::invalid_argument("reference bus out of range");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(sol.v);
  const Eigen::VectorXd ev = eig.eigenvalues();  // ascending
  const double top = ev(n - 1);
  if (!(top > 0.0)) throw std::domain_error("relaxation solution has no positive eigenvalue");

  const double tie_tol = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * top;
  Eigen::Index tied = 0;
  while (tied < n && top - ev(n - 1 - tied) <= tie_tol) ++tied;
  Eigen::VectorXcd u;
  if (tied == 1) {
    u = eig.eigenvectors().col(n - 1);
  } else {
    const Eigen::MatrixXcd basis = eig.eigenvectors().rightCols(tied);
    for (Eigen::Index k = 0; k < n; ++k) {
      const Eigen::VectorXcd proj = basis * basis.row(k).adjoint();
      if (proj.norm() > 1e-8) {
        u = proj / proj.norm();
        break;
      }
    }
  }

  StateEstimate est;
  est.v = align_phase(std::sqrt(top) * u, ref);
  est.method = EstimateMethod::Eigen;
  Eigen::VectorXd desc = ev.reverse();
  est.rank_of_v = psd_numeric_rank(desc);
  est.inliers = inlier_set(sol.a, p.z, support_tol);
  est.fit_cost = fit_cost(p, est.v, est.inliers);
  return est;
}

struct RandomizationOptions {
  int samples = 100;
  std::uint64_t seed = 0;
  BusId ref{1};
  double support_tol = kDefaultSupportTol;
};

namespace internal {

struct Candidate {
  Eigen::VectorXcd v;
  double cost;
};

/// Rescaled samples nu ~ CN(0, V), best `keep` by fit cost, ascending.
inline std::vector<Candidate> sample_candidates(const SdpProblem& p, const SdpSolution& sol,
                                                const std::vector<int>& inliers,
                                                const RandomizationOptions& opts, int keep) {
  const Eigen::Index n = sol.v.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(sol.v);
  const Eigen::MatrixXcd root =
      eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Rng rng = make_rng(opts.seed, 0x5eed'0003);
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  std::vector<Candidate> out;
  Eigen::VectorXcd g(n);
  for (int s = 0; s < opts.samples; ++s) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double re = normal(rng);
      const double im = normal(rng);
      g(i) = Complex(re, im);
    }
    const Eigen::VectorXcd nu = root * g;
    double num = 0.0, den = 0.0;
    for (int l : inliers) {
      const double q = p.coeffs[l].quadratic(nu);
      num += p.w(l) * p.z(l) * q;
      den += p.w(l) * q * q;
    }
    if (!(den > 0.0)) continue;
    const double t = num / den;
    if (!(t > 0.0) || !std::isfinite(t)) continue;
    Candidate c{std::sqrt(t) * nu, 0.0};
    c.cost = fit_cost(p, c.v, inliers);
    const auto pos = std::upper_bound(out.begin(), out.end(), c.cost,
                                      [](double x, const Candidate& y) { return x < y.cost; });
    if (static_cast<int>(pos - out.begin()) < keep) {
      out.insert(pos, std::move(c));
      if (static_cast<int>(out.size()) > keep) out.pop_back();
    }
  }
  return out;
}

}  // namespace internal

/// Gaussian randomization: nu ~ CN(0, V), rescaled by the closed-form factor
/// over the inlier meters. Returns the better of the best sample and the
/// eigen candidate.
inline StateEstimate extract_randomized(const SdpProblem& p, const SdpSolution& sol,
                                        const RandomizationOptions& opts = {}) {
  if (opts.samples < 1) throw std::invalid_argument("randomization needs at least one sample");
  std::optional<StateEstimate> eigen_est;
  try {
    eigen_est = extract_eigen(p, sol, opts.ref, opts.support_tol);
  } catch (const std::domain_error&) {
  }
  const std::vector<int> inliers = inlier_set(sol.a, p.z, opts.support_tol);
  const auto best = internal::sample_candidates(p, sol, inliers, opts, 1);

  if (best.empty() && !eigen_est) {
    throw std::domain_error("every randomization sample was rejected and V has no positive eigenvalue");
  }
  if (eigen_est && (best.empty() || eigen_est->fit_cost <= best.front().cost)) return *eigen_est;

  StateEstimate est;
  est.v = align_phase(best.front().v, opts.ref);
  est.method = EstimateMethod::Randomized;
  est.samples = opts.samples;
  est.rank_of_v = psd_numeric_rank(sol.eigenvalues);
  est.inliers = inliers;
  est.fit_cost = fit_cost(p, est.v, est.inliers);
  return est;
}

/// kappa * median(sqrt(w)); with kappa = 6 the Huber threshold
/// lambda / (2 w) sits at three standard deviations for a typical meter.
inline double default_lambda(const Eigen::VectorXd& w, double kappa = 6.0) {
  if (w.size() == 0) throw std::invalid_argument("no weights");
  std::vector<double> s(w.data(), w.data() + w.size());
  for (double& x : s) x = std::sqrt(x);
  std::sort(s.begin(), s.end());
  const std::size_t mid = s.size() / 2;
  const double med = s.size() % 2 ? s[mid] : 0.5 * (s[mid - 1] + s[mid]);
  return kappa * med;
}

/// Descent on the rank-one robust cost from v: alternate the closed-form
/// outlier update with a few Gauss-Newton steps on z - a, keeping a round
/// only if the cost drops.
inline Eigen::VectorXcd refine_rank_one(const SdpProblem& p, const Eigen::VectorXcd& v0, BusId ref,
                                        int rounds = 100, int steps_per_round = 3) {
  auto cost = [&](const Eigen::VectorXcd& v) { return p.robust_cost(v, p.best_outliers(v)); };
  Eigen::VectorXcd v = v0;
  if ((v.array().abs() == 0.0).any()) return v;
  double c = cost(v);
  GaussNewtonOptions o;
  o.max_iters = steps_per_round;
  o.ref = ref;
  for (int k = 0; k < rounds; ++k) {
    const Eigen::VectorXd a = p.best_outliers(v);
    const GaussNewtonResult gn = gauss_newton(p.coeffs, p.z - a, p.w, to_polar(v), o);
    if (!gn.x.allFinite() || (gn.x.head(v.size()).array() == 0.0).any()) break;
    const Eigen::VectorXcd next = gn.state();
    const double cn = cost(next);
    if (!(cn < c)) break;
    const double drop = c - cn;
    v = next;
    c = cn;
    if (drop <= 1e-12 * c) break;
  }
  return align_phase(v, ref);
}

struct RobustOptions {
  SdrOptions sdr;
  RandomizationOptions randomization;
  bool refine = true;
  int refine_starts = 4;  // extracted estimate plus the next-best samples
};

struct RobustResult {
  StateEstimate estimate;
  Eigen::VectorXd a;          // outlier estimate at the returned state
  std::vector<int> support;   // meters declared corrupted
  SdpSolution relaxation;
  bool refined = false;
};

/// Relaxation, randomized extraction (eigen fallback), then optional local
/// refinement of the rank-one estimate on the same robust cost.
inline RobustResult robust_estimate(const SdpProblem& p, const RobustOptions& opts = {}) {
  RobustResult out;
  out.relaxation = solve_relaxation(p, opts.sdr);
  out.estimate = extract_randomized(p, out.relaxation, opts.randomization);
  const BusId ref = opts.randomization.ref;
  const double tol = opts.randomization.support_tol;
  if (opts.refine) {
    std::vector<Eigen::VectorXcd> starts{out.estimate.v};
    if (opts.refine_starts > 1) {
      const auto inliers = inlier_set(out.relaxation.a, p.z, tol);
      for (auto& c : internal::sample_candidates(p, out.relaxation, inliers, opts.randomization,
                                                 opts.refine_starts)) {
        if (static_cast<int>(starts.size()) >= opts.refine_starts) break;
        const Eigen::VectorXcd v = align_phase(c.v, ref);
        if ((v - starts.front()).norm() > 0.0) starts.push_back(v);
      }
    }
    Eigen::VectorXcd best = out.estimate.v;
    double best_cost = p.robust_cost(best, p.best_outliers(best));
    for (const auto& s : starts) {
      const Eigen::VectorXcd v = refine_rank_one(p, s, ref);
      const double c = p.robust_cost(v, p.best_outliers(v));
      if (c < best_cost) {
        best_cost = c;
        best = v;
      }
    }
    out.refined = (best - out.estimate.v).norm() > 0.0;
    out.estimate.v = best;
  }
  out.a = p.best_outliers(out.estimate.v);
  out.support = outlier_support(out.a, p.z, tol);
  out.estimate.inliers = inlier_set(out.a, p.z, tol);
  out.estimate.fit_cost = fit_cost(p, out.estimate.v, out.estimate.inliers);
  return out;
}

inline RobustResult robust_estimate(const Network& net, const MeasurementPlan& plan,
                                    const MeasurementSet& ms, double lambda,
                                    const RobustOptions& opts = {}) {
  SdpProblem p{build_coefficients(net, plan), ms.z, ms.weights, lambda};
  return robust_estimate(p, opts);
}

}  // namespace rse
