#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rse/estimate.hpp"
#include "rse/gauss_newton.hpp"
#include "rse/ieee30.hpp"
#include "rse/sdr.hpp"

using namespace rse;
using oracle::Gen;

namespace {

Network ieee30() { return parse_case(kIeee30CaseJson); }

Network ring4() {
  std::vector<Line> lines = {
      {BusId(1), BusId(2), 1.0 / Complex(0.02, 0.1), Complex(0, 0.01), Complex(0, 0.01)},
      {BusId(2), BusId(3), 1.0 / Complex(0.03, 0.12), {}, {}},
      {BusId(3), BusId(4), 1.0 / Complex(0.01, 0.08), Complex(0, 0.02), Complex(0, 0.02)},
      {BusId(4), BusId(1), 1.0 / Complex(0.04, 0.15), {}, {}},
  };
  return Network(4, lines, {});
}

SdpProblem make_problem(const Network& net, const MeasurementPlan& plan, const MeasurementSet& ms,
                        double lambda) {
  return SdpProblem{build_coefficients(net, plan), ms.z, ms.weights, lambda};
}

Eigen::MatrixXcd random_hermitian(Gen& g, int n) {
  Eigen::MatrixXcd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = Complex(g.normal(), g.normal());
  return 0.5 * (a + a.adjoint());
}

void check_certificates(const SdpProblem& p, const SdpSolution& s) {
  const Eigen::VectorXd t = eval_lifted(p.coeffs, s.v);
  for (int l = 0; l < p.size(); ++l) {
    const double r = p.z(l) - t(l) - s.a(l);
    EXPECT_LE(std::abs(s.chi(l) - r * r), 1e-6 * (1.0 + s.chi(l)));
  }
  EXPECT_NEAR(s.objective, p.w.dot(s.chi) + p.lambda * s.a.lpNorm<1>(),
              1e-9 * std::max(1.0, s.objective));
  EXPECT_GE(s.eigenvalues.minCoeff(), -1e-8 * s.v.norm());
  EXPECT_LE(s.kkt.outlier_stationarity, 1e-5);
  EXPECT_LE(s.kkt.projected_gradient, 1e-6);
  EXPECT_GE(s.kkt.complementarity, -1e-5);
}

}  // namespace

TEST(SoftThreshold, Examples) {
  EXPECT_EQ(soft_threshold(3.0, 1.0), 2.0);
  EXPECT_EQ(soft_threshold(-0.5, 1.0), 0.0);
  EXPECT_EQ(soft_threshold(-4.0, 1.5), -2.5);
  EXPECT_EQ(soft_threshold(1.0, 1.0), 0.0);
  EXPECT_THROW(soft_threshold(1.0, 0.0), std::invalid_argument);
}

TEST(PsdProject, Examples) {
  Eigen::MatrixXcd d = Eigen::MatrixXcd::Zero(2, 2);
  d(0, 0) = 1.0;
  d(1, 1) = -2.0;
  Eigen::MatrixXcd expected = Eigen::MatrixXcd::Zero(2, 2);
  expected(0, 0) = 1.0;
  EXPECT_LT((psd_project(d) - expected).cwiseAbs().maxCoeff(), 1e-15);

  Gen g(41);
  const Eigen::MatrixXcd b = random_hermitian(g, 5);
  const Eigen::MatrixXcd psd = b * b.adjoint();
  EXPECT_LT((psd_project(psd) - psd).cwiseAbs().maxCoeff(), 1e-12);

  Eigen::MatrixXcd skew = Eigen::MatrixXcd::Zero(2, 2);
  skew(0, 1) = 1.0;
  EXPECT_THROW(psd_project(skew), std::invalid_argument);
  EXPECT_THROW(psd_project(Eigen::MatrixXcd::Zero(2, 3)), std::invalid_argument);
}

TEST(PsdProject, NearestAmongRandomPsdMatrices) {
  Gen g(42);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXcd a = random_hermitian(g, 4);
    const Eigen::MatrixXcd p = psd_project(a);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(p).eigenvalues().minCoeff(), -1e-12);
    const double best = (a - p).norm();
    for (int k = 0; k < 100; ++k) {
      const Eigen::MatrixXcd e = random_hermitian(g, 4);
      const Eigen::MatrixXcd other = psd_project(p + g.uniform(0.001, 0.5) * e);
      EXPECT_GE((a - other).norm(), best - 1e-12);
    }
  }
}

TEST(Relaxation, SingleMeterExactlySatisfiable) {
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(2, 2);
  h(0, 0) = 1.0;
  SdpProblem p{{HermitianCoeff(h)}, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1), 1e9};
  const SdpSolution s = solve_relaxation(p);
  EXPECT_EQ(s.a(0), 0.0);
  EXPECT_NEAR(p.coeffs[0].trace_with(s.v), 1.0, 1e-8);
  EXPECT_LE(s.objective, 1e-8);
}

TEST(Relaxation, NoiseFreeThirtyBusIsRankOne) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  const Eigen::VectorXcd v = random_state(30, 17, BusId(1));
  const MeasurementSet ms = simulate(net, plan, v, 17, {.noise_scale = 0.0});
  const SdpProblem p = make_problem(net, plan, ms, default_lambda(ms.weights));
  const SdpSolution s = solve_relaxation(p);
  EXPECT_LE(s.objective, 1e-8);
  EXPECT_LT(s.rank_one_ratio(), 1e-6);
  check_certificates(p, s);
  const StateEstimate e = extract_eigen(p, s, BusId(1));
  EXPECT_LT((e.v - v).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Relaxation, CertificatesAndLowerBoundOnNoisyData) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  const auto coeffs = build_coefficients(net, plan);
  for (std::uint64_t seed : {3u, 4u}) {
    const Eigen::VectorXcd v = random_state(30, seed, BusId(1));
    const MeasurementSet ms = inject_outliers(simulate(net, plan, v, seed), {5}, ScaleBy{1.2});
    const SdpProblem p = make_problem(net, plan, ms, default_lambda(ms.weights));
    const SdpSolution s = solve_relaxation(p);
    check_certificates(p, s);
    // Any rank-one point with any a is feasible, so it bounds the optimum.
    EXPECT_LE(s.objective, p.robust_cost(v, p.best_outliers(v)));
    EXPECT_LE(s.objective, p.robust_cost(v, ms.true_outliers));
    EXPECT_LE(s.objective, p.robust_cost(v, Eigen::VectorXd::Zero(p.size())));
    const auto gn = gauss_newton(coeffs, ms.z, ms.weights, to_polar(v));
    if (gn.status == GaussNewtonStatus::Converged) {
      EXPECT_LE(s.objective, p.robust_cost(gn.state(), p.best_outliers(gn.state())));
    }
  }
}

TEST(Relaxation, CertificatesOnSmallRandomInstances) {
  const Network net = ring4();
  const MeasurementPlan plan = oracle::all_kinds_plan(net);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Eigen::VectorXcd v = random_state(4, seed, BusId(1));
    MeasurementSet ms = simulate(net, plan, v, seed);
    ms = inject_outliers(ms, {static_cast<int>(seed % plan.size())}, ScaleBy{1.5});
    for (double kappa : {0.5, 6.0}) {
      const SdpProblem p = make_problem(net, plan, ms, default_lambda(ms.weights, kappa));
      const SdpSolution s = solve_relaxation(p);
      check_certificates(p, s);
      EXPECT_LE(s.objective, p.robust_cost(v, p.best_outliers(v)) + 1e-9);
    }
  }
}

TEST(Relaxation, ScalingWeightsAndLambdaTogether) {
  const Network net = ring4();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  const Eigen::VectorXcd v = random_state(4, 7, BusId(1));
  const MeasurementSet ms = inject_outliers(simulate(net, plan, v, 7), {1}, ScaleBy{1.3});
  const SdpProblem p = make_problem(net, plan, ms, default_lambda(ms.weights));
  SdpProblem q = p;
  q.w *= 7.5;
  q.lambda *= 7.5;
  const SdpSolution a = solve_relaxation(p);
  const SdpSolution b = solve_relaxation(q);
  EXPECT_LT((a.v - b.v).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((a.a - b.a).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(b.objective, 7.5 * a.objective, 1e-6 * b.objective);
}

TEST(Relaxation, VanishingLambdaAbsorbsResiduals) {
  const Network net = ring4();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  const MeasurementSet ms = simulate(net, plan, random_state(4, 2, BusId(1)), 2);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {1e-2, 1e-4, 1e-6}) {
    const SdpProblem p = make_problem(net, plan, ms, lambda);
    const SdpSolution s = solve_relaxation(p);
    EXPECT_LE(s.objective, lambda * ms.z.lpNorm<1>() + 1e-12);  // V = 0, a = z
    EXPECT_LE(s.objective, prev);
    prev = s.objective;
    const Eigen::VectorXd r = ms.z - eval_lifted(p.coeffs, s.v);
    for (int l = 0; l < p.size(); ++l) {
      EXPECT_LE(std::abs(r(l) - s.a(l)), lambda / (2.0 * p.w(l)) + 1e-12);
    }
  }
  EXPECT_LT(prev, 1e-5);
}

TEST(Relaxation, ErrorsAreExplicit) {
  SdpProblem empty;
  EXPECT_THROW(solve_relaxation(empty), std::invalid_argument);

  const Network net = ring4();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  const MeasurementSet ms = simulate(net, plan, random_state(4, 2, BusId(1)), 2);
  SdpProblem p = make_problem(net, plan, ms, 1.0);
  p.lambda = 0.0;
  EXPECT_THROW(solve_relaxation(p), std::invalid_argument);
  p.lambda = 1.0;
  p.w(0) = -1.0;
  EXPECT_THROW(solve_relaxation(p), std::invalid_argument);
  p.w(0) = 1.0;
  p.z.conservativeResize(3);
  EXPECT_THROW(solve_relaxation(p), std::invalid_argument);

  const SdpProblem ok = make_problem(net, plan, ms, default_lambda(ms.weights));
  SdrOptions starved;
  starved.max_iters = 2;
  starved.polish = false;
  EXPECT_THROW(solve_relaxation(ok, starved), SolverError);
}
