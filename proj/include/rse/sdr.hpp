#pragma once

// Semidefinite relaxation of the l1-regularized robust estimator
//
//   min_{V >= 0, a}  sum_l w_l (z_l - Tr(H_l V) - a_l)^2 + lambda ||a||_1,
//
// which is the Schur-complement SDP with chi_l eliminated. Minimizing over a
// in closed form (soft thresholding) leaves a Huber loss in the residual
// r_l = z_l - Tr(H_l V); the remaining problem over the PSD cone is solved
// with a log-det barrier path-following method.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "rse/measurement.hpp"
#include "rse/network.hpp"
#include "rse/random.hpp"

namespace rse {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double soft_threshold(double a, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("soft threshold needs a positive tau");
  const double m = std::abs(a) - tau;
  return m > 0.0 ? std::copysign(m, a) : 0.0;
}

/// Nearest PSD matrix in Frobenius norm.
inline Eigen::MatrixXcd psd_project(const Eigen::MatrixXcd& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("psd_project needs a square matrix");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw std::invalid_argument("psd_project needs a Hermitian matrix");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(a);
  const Eigen::VectorXd d = eig.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXcd p = eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().adjoint();
  return 0.5 * (p + p.adjoint());
}

namespace internal {

/// Isometric real coordinates of a Hermitian matrix: diagonal, then
/// sqrt(2) (Re, Im) of each strictly upper entry.
inline void hermitian_to_vec(const Eigen::MatrixXcd& x, double* out) {
  const Eigen::Index n = x.rows();
  for (Eigen::Index i = 0; i < n; ++i) *out++ = x(i, i).real();
  for (Eigen::Index j = 1; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      *out++ = std::sqrt(2.0) * x(i, j).real();
      *out++ = std::sqrt(2.0) * x(i, j).imag();
    }
  }
}

inline Eigen::MatrixXcd vec_to_hermitian(const Eigen::VectorXd& v, Eigen::Index n) {
  Eigen::MatrixXcd x(n, n);
  const double* p = v.data();
  for (Eigen::Index i = 0; i < n; ++i) x(i, i) = *p++;
  for (Eigen::Index j = 1; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      const double re = *p++ / std::sqrt(2.0);
      const double im = *p++ / std::sqrt(2.0);
      x(i, j) = Complex(re, im);
      x(j, i) = Complex(re, -im);
    }
  }
  return x;
}

/// Huber value and slope of the partial minimum over a of w (r - a)^2 + lambda |a|.
struct HuberTerm {
  double value;
  double slope;
  bool quadratic;
};

inline HuberTerm huber(double r, double w, double lambda) {
  const double tau = lambda / (2.0 * w);
  if (std::abs(r) <= tau) return {w * r * r, 2.0 * w * r, true};
  return {lambda * std::abs(r) - lambda * tau / 2.0, std::copysign(lambda, r), false};
}

}  // namespace internal

struct SdpProblem {
  std::vector<HermitianCoeff> coeffs;
  Eigen::VectorXd z;
  Eigen::VectorXd w;
  double lambda = 1.0;

  int n_buses() const { return coeffs.empty() ? 0 : coeffs.front().dim(); }
  int size() const { return static_cast<int>(coeffs.size()); }

  void validate() const {
    if (coeffs.empty()) throw std::invalid_argument("SDP problem has no measurements");
    const int n = n_buses();
    for (const auto& h : coeffs) {
      if (h.dim() != n) throw std::invalid_argument("coefficient dimensions disagree");
    }
    if (z.size() != size() || w.size() != size()) {
      throw std::invalid_argument("z and w must have one entry per measurement");
    }
    if (!z.allFinite() || !(w.array() > 0.0).all() || !w.allFinite()) {
      throw std::invalid_argument("weights must be positive and data finite");
    }
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  }

  /// w (z - Tr(H V) - a)^2 summed, plus lambda ||a||_1.
  double objective(const Eigen::MatrixXcd& v, const Eigen::VectorXd& a) const {
    const Eigen::VectorXd r = z - eval_lifted(coeffs, v) - a;
    return w.dot(r.cwiseProduct(r)) + lambda * a.lpNorm<1>();
  }

  /// The same cost at a rank-one point v v^H.
  double robust_cost(const Eigen::VectorXcd& v, const Eigen::VectorXd& a) const {
    const Eigen::VectorXd r = z - eval_h(coeffs, v) - a;
    return w.dot(r.cwiseProduct(r)) + lambda * a.lpNorm<1>();
  }

  /// Best outlier vector for a fixed lifted matrix.
  Eigen::VectorXd best_outliers(const Eigen::MatrixXcd& v) const {
    const Eigen::VectorXd r = z - eval_lifted(coeffs, v);
    Eigen::VectorXd a(r.size());
    for (Eigen::Index l = 0; l < r.size(); ++l) a(l) = soft_threshold(r(l), lambda / (2.0 * w(l)));
    return a;
  }

  Eigen::VectorXd best_outliers(const Eigen::VectorXcd& v) const {
    return best_outliers(Eigen::MatrixXcd(v * v.adjoint()));
  }
};

struct SdrOptions {
  int max_iters = 400;           // total Newton steps
  double tolerance = 1e-7;       // required relative duality-gap bound
  double target_gap = 1e-11;     // gap the path-following aims for (relative)
  double absolute_gap = 1e-14;   // floor, in units of the mean weight
  double mu_decrease = 0.1;
  double centering_tol = 1e-6;   // Newton decrement^2 of the scaled barrier problem
  bool polish = true;            // factored refinement after the barrier phase
  double polish_rank_tol = 1e-5;  // eigenvalues kept, relative to the largest
  int polish_iters = 50;
};

struct KktResiduals {
  double outlier_stationarity = 0.0;  // max_l dist(2 w (r - a), lambda d|a|) / lambda
  double projected_gradient = 0.0;    // ||V - P(V - G/L)||_F / max(1, ||V||_F)
  double complementarity = 0.0;       // <G, V> / (L max(1, ||V||_F^2))
  double gradient_min_eig = 0.0;      // lambda_min(G) / L
  double lipschitz = 0.0;             // L
};

struct SdpSolution {
  Eigen::MatrixXcd v;
  Eigen::VectorXd a;
  Eigen::VectorXd chi;
  double objective = 0.0;
  int iterations = 0;
  double primal_residual = 0.0;
  double gap_bound = 0.0;  // in objective units
  double barrier = 0.0;    // final barrier weight, objective units
  Eigen::VectorXd eigenvalues;  // of V, descending
  KktResiduals kkt;

  double rank_one_ratio() const {
    return eigenvalues.size() < 2 || eigenvalues(0) <= 0.0 ? 0.0 : eigenvalues(1) / eigenvalues(0);
  }
};

namespace internal {

/// Largest eigenvalue of V -> 2 sum_l w_l Tr(H_l V) H_l by power iteration.
inline double lipschitz_estimate(const SdpProblem& p, int iters = 100) {
  const int n = p.n_buses();
  Eigen::MatrixXcd x = Eigen::MatrixXcd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      x(i, j) = Complex(0.3 / (1 + i + j), 0.1 / (1 + j - i));
      x(j, i) = std::conj(x(i, j));
    }
  }
  double est = 0.0;
  for (int k = 0; k < iters; ++k) {
    const double nrm = x.norm();
    if (nrm == 0.0) return 0.0;
    x /= nrm;
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (int l = 0; l < p.size(); ++l) {
      const double t = 2.0 * p.w(l) * p.coeffs[l].trace_with(x);
      for (const auto& e : p.coeffs[l].entries()) y(e.row, e.col) += t * e.value;
    }
    const double next = y.norm();
    if (k > 10 && std::abs(next - est) <= 1e-10 * next) {
      est = next;
      break;
    }
    est = next;
    x = y;
  }
  return est;
}

inline Eigen::MatrixXcd smooth_gradient(const SdpProblem& p, const Eigen::VectorXd& r,
                                        const Eigen::VectorXd& a) {
  const int n = p.n_buses();
  Eigen::MatrixXcd g = Eigen::MatrixXcd::Zero(n, n);
  for (int l = 0; l < p.size(); ++l) {
    const double s = -2.0 * p.w(l) * (r(l) - a(l));
    for (const auto& e : p.coeffs[l].entries()) g(e.row, e.col) += s * e.value;
  }
  return g;
}

/// Local polish of V = F F^H over the factor F (N x r), alternating the
/// closed-form outlier update with damped Gauss-Newton steps on F. Returns
/// the polished matrix, or nothing when it does not lower the objective.
inline std::optional<Eigen::MatrixXcd> refine_factor(const SdpProblem& p,
                                                     const Eigen::MatrixXcd& v,
                                                     double rank_tol, int max_iters) {
  const int n = p.n_buses();
  const int m = p.size();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(v);
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (!(ev(n - 1) > 0.0)) return std::nullopt;
  int r = 0;
  while (r < n && ev(n - 1 - r) > rank_tol * ev(n - 1)) ++r;
  Eigen::MatrixXcd f(n, r);
  for (int k = 0; k < r; ++k) f.col(k) = std::sqrt(ev(n - 1 - k)) * eig.eigenvectors().col(n - 1 - k);

  auto gram = [](const Eigen::MatrixXcd& x) { return Eigen::MatrixXcd(x * x.adjoint()); };
  auto cost = [&](const Eigen::MatrixXcd& x) {
    const Eigen::MatrixXcd g = gram(x);
    return p.objective(g, p.best_outliers(g));
  };
  const double start = p.objective(v, p.best_outliers(v));
  double c = cost(f);
  const Eigen::VectorXd sqrt_w = p.w.cwiseSqrt();
  const Eigen::Index np = 2 * static_cast<Eigen::Index>(n) * r;
  double damping = 1e-3;
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::MatrixXcd g = gram(f);
    const Eigen::VectorXd a = p.best_outliers(g);
    const Eigen::VectorXd res = sqrt_w.cwiseProduct(p.z - eval_lifted(p.coeffs, g) - a);
    Eigen::MatrixXd jac(m, np);
    for (int l = 0; l < m; ++l) {
      for (int k = 0; k < r; ++k) {
        const Eigen::VectorXcd hf = 2.0 * sqrt_w(l) * p.coeffs[l].apply(f.col(k));
        jac.row(l).segment(static_cast<Eigen::Index>(k) * n, n) = hf.real().transpose();
        jac.row(l).segment(static_cast<Eigen::Index>(r + k) * n, n) = hf.imag().transpose();
      }
    }
    const Eigen::MatrixXd jjt = jac * jac.transpose();
    const double base = std::max(jjt.diagonal().maxCoeff(), 1e-300);
    bool accepted = false;
    double next = c;
    while (damping < 1e10) {
      Eigen::MatrixXd sys = jjt;
      sys.diagonal().array() += damping * base;
      const Eigen::VectorXd step = jac.transpose() * sys.ldlt().solve(res);
      Eigen::MatrixXcd cand(n, r);
      for (int k = 0; k < r; ++k) {
        for (int i = 0; i < n; ++i) {
          cand(i, k) = f(i, k) + Complex(step(static_cast<Eigen::Index>(k) * n + i),
                                         step(static_cast<Eigen::Index>(r + k) * n + i));
        }
      }
      next = cost(cand);
      if (std::isfinite(next) && next < c) {
        f = cand;
        damping = std::max(damping / 10.0, 1e-12);
        accepted = true;
        break;
      }
      damping *= 10.0;
    }
    if (!accepted) break;
    const double drop = c - next;
    c = next;
    if (drop <= 1e-15 * std::max(c, 1e-300)) break;
  }
  if (!(c < start)) return std::nullopt;
  return gram(f);
}

}  // namespace internal

/// Optimality residuals of (V, a) for the composite problem.
inline KktResiduals kkt_residuals(const SdpProblem& p, const Eigen::MatrixXcd& v,
                                  const Eigen::VectorXd& a,
                                  std::optional<double> lipschitz = std::nullopt) {
  KktResiduals k;
  const Eigen::VectorXd r = p.z - eval_lifted(p.coeffs, v);
  for (int l = 0; l < p.size(); ++l) {
    const double g = 2.0 * p.w(l) * (r(l) - a(l));
    const double d = a(l) != 0.0 ? std::abs(g - std::copysign(p.lambda, a(l)))
                                  : std::max(0.0, std::abs(g) - p.lambda);
    k.outlier_stationarity = std::max(k.outlier_stationarity, d / p.lambda);
  }
  k.lipschitz = lipschitz.value_or(internal::lipschitz_estimate(p));
  const double lip = k.lipschitz > 0.0 ? k.lipschitz : 1.0;
  const Eigen::MatrixXcd g = internal::smooth_gradient(p, r, a);
  const Eigen::MatrixXcd step = v - g / lip;
  const double vnorm = v.norm();
  k.projected_gradient = (v - psd_project(0.5 * (step + step.adjoint()))).norm() / std::max(1.0, vnorm);
  k.complementarity = (g.adjoint() * v).trace().real() / (lip * std::max(1.0, vnorm * vnorm));
  k.gradient_min_eig =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(g, Eigen::EigenvaluesOnly).eigenvalues()(0) /
      lip;
  return k;
}

/// Global optimum of the relaxation.
///
/// The barrier subproblem is f(V) + mu (Tr V - log det V) with f the Huber
/// loss. Newton steps are taken in the congruence-scaled coordinates
/// dV = S X S, S = V^(1/2), where the barrier Hessian is mu I and the
/// Hessian of f is low rank, so each step needs one M x M factorization.
/// The barrier iterate is then polished over a low-rank factor when that
/// lowers the objective; the gap bound stays valid since it only shrinks.
/// Throws SolverError if the gap bound is not within `opts.tolerance`.
inline SdpSolution solve_relaxation(const SdpProblem& prob, const SdrOptions& opts = {}) {
  prob.validate();
  const int n = prob.n_buses();
  const int m = prob.size();
  const Eigen::Index dim = static_cast<Eigen::Index>(n) * n;

  // Work in units of the mean weight.
  const double scale = prob.w.mean();
  const Eigen::VectorXd w = prob.w / scale;
  const double lambda = prob.lambda / scale;

  Eigen::MatrixXcd v = Eigen::MatrixXcd::Identity(n, n);
  Eigen::VectorXd lifted = eval_lifted(prob.coeffs, v);

  auto loss = [&](const Eigen::VectorXd& t, Eigen::VectorXd* slope, std::vector<char>* active) {
    double f = 0.0;
    for (int l = 0; l < m; ++l) {
      const auto h = internal::huber(prob.z(l) - t(l), w(l), lambda);
      f += h.value;
      if (slope) (*slope)(l) = h.slope;
      if (active) (*active)[l] = h.quadratic;
    }
    return f;
  };

  double mu = std::max(loss(lifted, nullptr, nullptr) / n, 1e-6);
  const double min_mu = 1e-300;

  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMatrix scaled(m, dim);  // rows vec(S H_l S)
  Eigen::VectorXd slope(m);
  std::vector<char> active(m);
  int iter = 0;
  std::string stall;

  while (iter < opts.max_iters) {
    // Centering at the current mu.
    bool centered = false;
    while (iter < opts.max_iters) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(v);
      const Eigen::VectorXd ev = eig.eigenvalues();
      if (ev(0) <= 0.0) throw SolverError("iterate left the PSD cone");
      const Eigen::MatrixXcd s =
          eig.eigenvectors() * ev.cwiseSqrt().asDiagonal() * eig.eigenvectors().adjoint();
      for (int l = 0; l < m; ++l) {
        internal::hermitian_to_vec(prob.coeffs[l].congruence(s), scaled.row(l).data());
      }
      const double f = loss(lifted, &slope, &active);

      // Right-hand side: minus the scaled gradient.
      Eigen::VectorXd vec_i(dim), vec_v(dim);
      internal::hermitian_to_vec(Eigen::MatrixXcd::Identity(n, n), vec_i.data());
      internal::hermitian_to_vec(v, vec_v.data());
      // f depends on V through t_l = Tr(H_l V); d f / d t_l = -slope_l.
      const Eigen::VectorXd rhs = scaled.transpose() * slope + mu * (vec_i - vec_v);

      // (A_I^T D A_I + mu I) x = rhs over the quadratic-zone rows.
      std::vector<int> rows;
      for (int l = 0; l < m; ++l) {
        if (active[l]) rows.push_back(l);
      }
      Eigen::VectorXd x;
      if (rows.empty()) {
        x = rhs / mu;
      } else {
        const Eigen::Index k = static_cast<Eigen::Index>(rows.size());
        RowMatrix ai(k, dim);
        Eigen::VectorXd dinv(k);
        for (Eigen::Index i = 0; i < k; ++i) {
          ai.row(i) = scaled.row(rows[i]);
          dinv(i) = mu / (2.0 * w(rows[i]));
        }
        Eigen::MatrixXd kmat = ai * ai.transpose();
        kmat.diagonal() += dinv;
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(kmat);
        auto apply_inverse = [&](const Eigen::VectorXd& b) -> Eigen::VectorXd {
          return (b - ai.transpose() * ldlt.solve(ai * b)) / mu;
        };
        auto apply_hessian = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
          Eigen::VectorXd ay = ai * y;
          for (Eigen::Index i = 0; i < k; ++i) ay(i) *= 2.0 * w(rows[i]);
          return ai.transpose() * ay + mu * y;
        };
        x = apply_inverse(rhs);
        for (int refine = 0; refine < 2; ++refine) x += apply_inverse(rhs - apply_hessian(x));
      }
      const double decrement = x.dot(rhs) / mu;
      if (!std::isfinite(decrement)) throw SolverError("non-finite Newton step");
      if (decrement <= opts.centering_tol) {
        centered = true;
        break;
      }

      // Line search along V + t S X S, keeping I + t X positive definite.
      const Eigen::MatrixXcd xm = internal::vec_to_hermitian(x, n);
      const Eigen::VectorXd xev =
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(xm, Eigen::EigenvaluesOnly).eigenvalues();
      const Eigen::VectorXd dt = scaled * x;  // change of Tr(H_l V) per unit step
      const double dtrace = vec_v.dot(x);  // Tr(S X S)
      double tmax = 1.0;
      if (xev(0) < 0.0) tmax = std::min(1.0, 0.99 / -xev(0));
      auto merit = [&](double t) {
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < xev.size(); ++i) logdet += std::log1p(t * xev(i));
        return loss(lifted + t * dt, nullptr, nullptr) + mu * (t * dtrace - logdet);
      };
      const double phi0 = f;
      const double slope0 = -decrement * mu;
      double t = tmax;
      double phi = merit(t);
      int backtracks = 0;
      while (!(phi <= phi0 + 0.25 * t * slope0) && backtracks < 60) {
        t *= 0.5;
        phi = merit(t);
        ++backtracks;
      }
      ++iter;
      if (!(phi < phi0) && !(phi <= phi0 + 0.25 * t * slope0)) {
        stall = "line search stalled";
        break;
      }
      v += t * (s * xm * s);
      v = 0.5 * (v + v.adjoint()).eval();
      lifted = eval_lifted(prob.coeffs, v);
    }
    if (!centered) break;

    const double f = loss(lifted, nullptr, nullptr);
    const double gap = mu * n;
    if (gap <= std::max(opts.absolute_gap, opts.target_gap * f)) break;
    mu = std::max(mu * opts.mu_decrease, min_mu);
  }

  if (opts.polish) {
    if (auto better = internal::refine_factor(prob, v, opts.polish_rank_tol, opts.polish_iters)) {
      v = *better;
    }
  }

  SdpSolution sol;
  sol.v = v;
  sol.iterations = iter;
  sol.a = prob.best_outliers(v);
  const Eigen::VectorXd resid = prob.z - eval_lifted(prob.coeffs, v) - sol.a;
  sol.chi = resid.cwiseProduct(resid);
  sol.objective = prob.w.dot(sol.chi) + prob.lambda * sol.a.lpNorm<1>();
  sol.barrier = mu * scale;
  sol.gap_bound = mu * n * scale;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(v, Eigen::EigenvaluesOnly);
  sol.eigenvalues = eig.eigenvalues().reverse();
  sol.primal_residual = std::max(0.0, -sol.eigenvalues(n - 1));
  sol.kkt = kkt_residuals(prob, v, sol.a);

  const bool ok = sol.gap_bound <= opts.tolerance * std::max(scale, sol.objective);
  if (!ok) {
    std::ostringstream msg;
    msg << "relaxation did not converge after " << iter << " Newton steps (gap bound "
        << sol.gap_bound << ", objective " << sol.objective << ", projected gradient "
        << sol.kkt.projected_gradient << (stall.empty() ? "" : ", " + stall) << ")";
    throw SolverError(msg.str());
  }
  return sol;
}

}  // namespace rse
