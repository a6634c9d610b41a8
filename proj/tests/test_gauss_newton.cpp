#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rse/gauss_newton.hpp"
#include "rse/identifiability.hpp"
#include "rse/ieee30.hpp"

using namespace rse;

namespace {

Network ieee30() { return parse_case(kIeee30CaseJson); }

// Light loading: angles within +-0.3 rad, where flat start is a good guess.
Eigen::VectorXcd mild_state(std::uint64_t seed) {
  RandomStateOptions o;
  o.angle_half_width = 0.3;
  o.magnitude_variance = 0.0025;
  return random_state(30, seed, BusId(1), o);
}

double max_state_error(const Eigen::VectorXd& x, const Eigen::VectorXcd& truth) {
  return (from_polar(x) - align_phase(truth, BusId(1))).cwiseAbs().maxCoeff();
}

// Rank of the Jacobian with bus 1's angle column dropped.
int reduced_rank(const std::vector<HermitianCoeff>& coeffs, const Eigen::VectorXd& x) {
  const Eigen::MatrixXd j = jacobian_polar(coeffs, x);
  const Eigen::Index n = x.size() / 2;
  Eigen::MatrixXd red(j.rows(), 2 * n - 1);
  red << j.leftCols(n), j.rightCols(n - 1);
  return numeric_rank(red);
}

}  // namespace

TEST(GaussNewton, NoiseFreeFromTruth) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  const Eigen::VectorXcd v = random_state(30, 3, BusId(1));
  const MeasurementSet ms = simulate(net, plan, v, 3, {.noise_scale = 0.0});
  const GaussNewtonResult r = gauss_newton(net, plan, ms, to_polar(v));
  ASSERT_EQ(r.status, GaussNewtonStatus::Converged);
  EXPECT_LE(r.iterations, 2);
  EXPECT_LT((r.x - to_polar(v)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(GaussNewton, NoiseFreeFromFlatStart) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Eigen::VectorXcd v = mild_state(seed);
    const MeasurementSet ms = simulate(net, plan, v, seed, {.noise_scale = 0.0});
    const GaussNewtonResult r = gauss_newton(net, plan, ms, to_polar(flat_state(30)));
    ASSERT_EQ(r.status, GaussNewtonStatus::Converged) << r.note;
    EXPECT_LT(r.step_norms.back(), 1e-6);
    EXPECT_LT(max_state_error(r.x, v), 1e-6);
    EXPECT_EQ(r.x(30), 0.0);
  }
}

TEST(GaussNewton, ReferenceAngleIsExactlyZero) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  const Eigen::VectorXcd v = random_state(30, 8, BusId(4));
  const MeasurementSet ms = simulate(net, plan, v, 8);
  Eigen::VectorXd x0 = to_polar(v);
  x0.tail(30).array() += 0.7;  // rotated start
  GaussNewtonOptions o;
  o.ref = BusId(4);
  const GaussNewtonResult r = gauss_newton(net, plan, ms, x0, o);
  ASSERT_EQ(r.status, GaussNewtonStatus::Converged);
  EXPECT_EQ(r.x(30 + 3), 0.0);
  EXPECT_EQ(std::arg(r.state()(3)), 0.0);
}

TEST(GaussNewton, SingleOutlierBiasesTheFit) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  const Eigen::VectorXcd v = mild_state(11);
  const MeasurementSet clean = simulate(net, plan, v, 11, {.noise_scale = 0.0});
  // Meter with a sizeable flow, so the scaling is not negligible.
  const Eigen::VectorXd h = eval_h(net, plan, v);
  int worst = 0;
  h.head(41).cwiseAbs().maxCoeff(&worst);
  const MeasurementSet bad = inject_outliers(clean, {worst}, ScaleBy{1.2});
  const auto coeffs = build_coefficients(net, plan);
  const GaussNewtonResult r = gauss_newton(coeffs, bad.z, bad.weights, to_polar(v));
  ASSERT_EQ(r.status, GaussNewtonStatus::Converged);
  const double at_estimate = weighted_cost(bad.z, bad.weights, eval_h(coeffs, r.state()));
  EXPECT_GT(at_estimate, 1e-6);  // clean optimum is 0
  EXPECT_GT(max_state_error(r.x, v), 1e-6);
  EXPECT_LE(at_estimate, weighted_cost(bad.z, bad.weights, h));
}

TEST(GaussNewton, NoRedundancyFitsExactly) {
  const Network net = oracle::two_bus(0.3);
  MeasurementPlan plan;
  plan.meters = {{MeasurementKind::FlowP, BusId(1), BusId(2), 0.02},
                 {MeasurementKind::VoltageMagSq, BusId(1), BusId(), 0.01},
                 {MeasurementKind::VoltageMagSq, BusId(2), BusId(), 0.01}};
  Eigen::VectorXcd v(2);
  v << 1.02, std::polar(0.97, -0.2);
  const MeasurementSet ms = simulate(net, plan, v, 1, {.noise_scale = 0.0});
  const auto coeffs = build_coefficients(net, plan);
  EXPECT_EQ(reduced_rank(coeffs, to_polar(v)), plan.size());
  const GaussNewtonResult r = gauss_newton(coeffs, ms.z, ms.weights, to_polar(flat_state(2)));
  ASSERT_EQ(r.status, GaussNewtonStatus::Converged);
  const Eigen::VectorXd res = ms.z - eval_h(coeffs, r.state());
  EXPECT_LE(res.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(GaussNewton, DivergedOnlyAboveConditionThreshold) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  const Eigen::VectorXcd v = random_state(30, 21, BusId(1));
  const MeasurementSet ms = simulate(net, plan, v, 21);
  GaussNewtonOptions tight;
  tight.cond_max = 1.0;
  const GaussNewtonResult r = gauss_newton(net, plan, ms, to_polar(flat_state(30)), tight);
  EXPECT_EQ(r.status, GaussNewtonStatus::Diverged);
  EXPECT_GT(r.condition_number, tight.cond_max);

  // Under-determined: one meter for three unknowns.
  const Network two = oracle::two_bus(0.5);
  MeasurementPlan one;
  one.meters = {{MeasurementKind::FlowP, BusId(1), BusId(2), 0.02}};
  const MeasurementSet ms2 = simulate(two, one, flat_state(2), 1);
  const GaussNewtonResult u = gauss_newton(two, one, ms2, to_polar(flat_state(2)));
  EXPECT_EQ(u.status, GaussNewtonStatus::Diverged);
  EXPECT_TRUE(std::isinf(u.condition_number));

  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const Eigen::VectorXcd vt = random_state(30, seed, BusId(1));
    const MeasurementSet m = simulate(net, plan, vt, seed);
    const GaussNewtonResult g = gauss_newton(net, plan, m, to_polar(flat_state(30)));
    if (g.status == GaussNewtonStatus::Diverged && g.note == "condition number above threshold") {
      EXPECT_GT(g.condition_number, 1e8);
    }
    if (g.status == GaussNewtonStatus::Converged) {
      EXPECT_LT(g.step_norms.back(), 1e-6);
      EXPECT_LE(g.condition_number, 1e8);
    }
  }
}

TEST(GaussNewton, InputValidation) {
  const Network net = oracle::two_bus(0.5);
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  const MeasurementSet ms = simulate(net, plan, flat_state(2), 1);
  Eigen::VectorXd x0 = to_polar(flat_state(2));
  x0(0) = -1.0;
  EXPECT_THROW(gauss_newton(net, plan, ms, x0), std::invalid_argument);
  x0(0) = std::nan("");
  EXPECT_THROW(gauss_newton(net, plan, ms, x0), std::invalid_argument);
  GaussNewtonOptions o;
  o.ref = BusId(3);
  EXPECT_THROW(gauss_newton(net, plan, ms, to_polar(flat_state(2)), o), std::invalid_argument);
}

TEST(GaussNewton, CostMostlyMonotoneFromFlatStart) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  int monotone = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const MeasurementSet ms = simulate(net, plan, mild_state(seed), seed, {.noise_scale = 0.1});
    const GaussNewtonResult r = gauss_newton(net, plan, ms, to_polar(flat_state(30)));
    bool ok = true;
    for (std::size_t k = 1; k < r.costs.size(); ++k) ok = ok && r.costs[k] <= r.costs[k - 1] * (1 + 1e-12);
    monotone += ok;
  }
  EXPECT_GE(monotone, 95);
}
