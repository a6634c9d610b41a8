#pragma once

// Undamped Gauss-Newton weighted least squares in polar coordinates, with
// divergence flagged by the condition number of the weighted Jacobian.

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rse/measurement.hpp"
#include "rse/network.hpp"

namespace rse {

struct GaussNewtonOptions {
  double tol = 1e-6;  // on ||dx||_inf
  int max_iters = 50;
  double cond_max = 1e8;
  BusId ref{1};
};

enum class GaussNewtonStatus { Converged, Diverged, MaxIters };

inline const char* status_name(GaussNewtonStatus s) {
  switch (s) {
    case GaussNewtonStatus::Converged: return "converged";
    case GaussNewtonStatus::Diverged: return "diverged";
    case GaussNewtonStatus::MaxIters: return "max_iters";
  }
  return "?";
}

struct GaussNewtonResult {
  Eigen::VectorXd x;  // polar state, reference angle exactly 0
  GaussNewtonStatus status = GaussNewtonStatus::MaxIters;
  int iterations = 0;
  double condition_number = 0.0;  // of the last weighted Jacobian
  std::vector<double> step_norms;
  std::vector<double> costs;  // weighted cost at each iterate, before its step
  std::string note;

  Eigen::VectorXcd state() const { return from_polar(x); }
};

inline GaussNewtonResult gauss_newton(const std::vector<HermitianCoeff>& coeffs,
                                      const Eigen::VectorXd& z, const Eigen::VectorXd& w,
                                      const Eigen::VectorXd& x0,
                                      const GaussNewtonOptions& opts = {}) {
  const Eigen::Index n = x0.size() / 2;
  if (x0.size() != 2 * n || !x0.allFinite() || (x0.head(n).array() <= 0.0).any()) {
    throw std::invalid_argument("initial state must be finite with positive magnitudes");
  }
  if (opts.ref.index() < 0 || opts.ref.index() >= n) {
    throw std::invalid_argument("reference bus out of range");
  }
  const Eigen::Index ref_col = n + opts.ref.index();
  const Eigen::VectorXd sqrt_w = w.cwiseSqrt();

  GaussNewtonResult res;
  res.x = x0;
  res.x(ref_col) = 0.0;
  for (int k = 0; k < opts.max_iters; ++k) {
    const Eigen::VectorXcd v = from_polar(res.x);
    const Eigen::VectorXd r = z - eval_h(coeffs, v);
    res.costs.push_back(w.dot(r.cwiseProduct(r)));

    if ((res.x.head(n).array() == 0.0).any()) {
      res.status = GaussNewtonStatus::Diverged;
      res.iterations = k;
      res.condition_number = std::numeric_limits<double>::infinity();
      res.note = "zero magnitude, polar chart singular";
      return res;
    }
    const Eigen::MatrixXd full = jacobian_polar(coeffs, res.x);
    Eigen::MatrixXd jac(full.rows(), 2 * n - 1);
    jac << full.leftCols(ref_col), full.rightCols(2 * n - 1 - ref_col);
    jac = sqrt_w.asDiagonal() * jac;

    Eigen::BDCSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double smin = s(s.size() - 1);
    res.condition_number =
        jac.rows() < jac.cols() || smin == 0.0 ? std::numeric_limits<double>::infinity()
                                               : s(0) / smin;
    if (!(res.condition_number <= opts.cond_max)) {
      res.status = GaussNewtonStatus::Diverged;
      res.iterations = k;
      res.note = "condition number above threshold";
      return res;
    }
    const Eigen::VectorXd delta = svd.solve(sqrt_w.cwiseProduct(r));
    if (!delta.allFinite()) {
      res.status = GaussNewtonStatus::Diverged;
      res.iterations = k;
      res.note = "non-finite step";
      return res;
    }
    res.x.head(ref_col) += delta.head(ref_col);
    res.x.tail(2 * n - 1 - ref_col) += delta.tail(2 * n - 1 - ref_col);
    const double step = delta.lpNorm<Eigen::Infinity>();
    res.step_norms.push_back(step);
    res.iterations = k + 1;
    if (!res.x.allFinite()) {
      res.status = GaussNewtonStatus::Diverged;
      res.note = "non-finite iterate";
      return res;
    }
    // Same complex state, positive magnitudes.
    for (Eigen::Index i = 0; i < n; ++i) {
      if (res.x(i) < 0.0) {
        res.x(i) = -res.x(i);
        res.x(n + i) += std::numbers::pi;
      }
    }
    if (step < opts.tol) {
      res.status = GaussNewtonStatus::Converged;
      const double shift = res.x(ref_col);
      for (Eigen::Index i = n; i < 2 * n; ++i) res.x(i) = wrap_angle(res.x(i) - shift);
      res.x(ref_col) = 0.0;
      return res;
    }
  }
  res.status = GaussNewtonStatus::MaxIters;
  return res;
}

inline GaussNewtonResult gauss_newton(const Network& net, const MeasurementPlan& plan,
                                      const MeasurementSet& ms, const Eigen::VectorXd& x0,
                                      const GaussNewtonOptions& opts = {}) {
  return gauss_newton(build_coefficients(net, plan), ms.z, ms.weights, x0, opts);
}

}  // namespace rse
