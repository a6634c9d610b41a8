#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rse/experiment.hpp"
#include "rse/ieee30.hpp"

using namespace rse;

namespace {

Network ieee30() { return parse_case(kIeee30CaseJson); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Scenario, Validation) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  ScenarioConfig c;
  EXPECT_NO_THROW(c.validate(plan));
  c.n_runs = 0;
  EXPECT_THROW(c.validate(plan), std::invalid_argument);
  c = {};
  c.run_wls = c.run_sdr = false;
  EXPECT_THROW(c.validate(plan), std::invalid_argument);
  c = {};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(plan), std::invalid_argument);
  c = {};
  c.outliers.eligible = {MeasurementKind::InjectionP};
  EXPECT_THROW(c.validate(plan), std::invalid_argument);
  c.outliers.count = 0;
  EXPECT_NO_THROW(c.validate(plan));
}

TEST(StateErrors, ReferenceBusIsZeroAndPhaseFree) {
  const Eigen::VectorXcd truth = random_state(30, 3, BusId(2));
  Eigen::VectorXcd est = truth * std::polar(1.0, 0.9);
  est(5) *= std::polar(1.1, 0.2);
  MethodRecord m;
  state_errors(est, truth, BusId(2), m);
  EXPECT_EQ(m.angle_error[1], 0.0);
  for (int i = 0; i < 30; ++i) {
    EXPECT_GE(m.angle_error[i], 0.0);
    EXPECT_LE(m.angle_error[i], M_PI);
    if (i != 5) {
      EXPECT_NEAR(m.angle_error[i], 0.0, 1e-12);
      EXPECT_NEAR(m.magnitude_error[i], 0.0, 1e-12);
    }
  }
  EXPECT_NEAR(m.angle_error[5], 0.2, 1e-12);
  EXPECT_NEAR(m.magnitude_error[5], 0.1 * std::abs(truth(5)), 1e-12);
}

TEST(MonteCarlo, AccountingAndOutlierPlacement) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  ScenarioConfig c;
  c.n_runs = 3;
  c.seed = 77;
  c.samples = 20;
  const MonteCarloResult r = MonteCarlo(net, plan, c).run();
  ASSERT_EQ(r.records.size(), 3u);
  for (const auto* s : {&*r.wls, &*r.sdr}) {
    EXPECT_EQ(s->runs, 3);
    EXPECT_EQ(s->converged + s->diverged + s->failed, s->runs);
    EXPECT_EQ(s->mean_angle_error.size(), 30u);
    EXPECT_EQ(s->mean_angle_error[0], 0.0);
  }
  for (int i = 0; i < 3; ++i) {
    const RunRecord& rec = r.records[i];
    EXPECT_EQ(rec.run, i);
    EXPECT_EQ(rec.seed, 77u ^ static_cast<std::uint64_t>(i));
    ASSERT_EQ(rec.corrupted.size(), 1u);
    EXPECT_TRUE(is_flow(plan.meters[rec.corrupted[0]].kind));
    EXPECT_EQ(rec.v_true(0), Complex(1.0, 0.0));
    if (rec.sdr->status == RunStatus::Converged) {
      EXPECT_EQ(rec.sdr->angle_error[0], 0.0);
    }
  }
  int detected = 0;
  for (const auto& rec : r.records) {
    detected += std::find(rec.support.begin(), rec.support.end(), rec.corrupted[0]) != rec.support.end();
  }
  EXPECT_EQ(detected, r.detected);

  const std::string counts = counts_csv(r);
  EXPECT_EQ(counts.rfind("method,runs,converged,diverged,failed,network_mean_angle_error\n", 0), 0u);
  EXPECT_EQ(count_lines(counts), 3);
  EXPECT_EQ(count_lines(summary_csv(r)), 31);
  EXPECT_EQ(count_lines(runs_csv(r)), 1 + 2 * 3);
}

TEST(MonteCarlo, DeterministicAcrossRepeatsAndThreads) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  ScenarioConfig c;
  c.n_runs = 2;
  c.seed = 5;
  c.samples = 20;
  const MonteCarloResult a = MonteCarlo(net, plan, c).run();
  const MonteCarloResult b = MonteCarlo(net, plan, c).run();
  c.threads = 2;
  const MonteCarloResult t = MonteCarlo(net, plan, c).run();
  for (const auto* r : {&b, &t}) {
    EXPECT_EQ(summary_csv(a), summary_csv(*r));
    EXPECT_EQ(counts_csv(a), counts_csv(*r));
    EXPECT_EQ(runs_csv(a), runs_csv(*r));
    EXPECT_EQ(plot_data(a), plot_data(*r));
  }
  const MonteCarlo mc(net, plan, c);
  EXPECT_EQ(runs_csv(MonteCarloResult{{mc.run_one(1)}, {}, {}, 30, 0}),
            runs_csv(MonteCarloResult{{a.records[1]}, {}, {}, 30, 0}));
}

TEST(MonteCarlo, CleanDataSanityFixture) {
  // Runs 0 and 1 of seed 1: flat-start WLS lands in the right basin for both.
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  ScenarioConfig c;
  c.n_runs = 2;
  c.seed = 1;
  c.outliers.count = 0;
  c.noise_scale = 0.01;
  const MonteCarloResult r = MonteCarlo(net, plan, c).run();
  ASSERT_EQ(r.wls->converged, 2);
  ASSERT_EQ(r.sdr->converged, 2);
  for (int i = 0; i < 30; ++i) {
    EXPECT_LT(r.wls->mean_angle_error[i], 1e-3);
    EXPECT_LT(r.sdr->mean_angle_error[i], 1e-3);
  }
  for (const auto& rec : r.records) {
    EXPECT_TRUE(rec.corrupted.empty());
    EXPECT_TRUE(rec.support.empty());
  }
}

TEST(MonteCarlo, WritesAllOutputs) {
  const Network net = ieee30();
  const MeasurementPlan plan = flows_and_voltages_plan(net);
  ScenarioConfig c;
  c.n_runs = 1;
  c.run_sdr = false;
  const MonteCarloResult r = MonteCarlo(net, plan, c).run();
  EXPECT_FALSE(r.sdr.has_value());
  const auto dir = std::filesystem::temp_directory_path() / "rse_experiment_test";
  std::filesystem::remove_all(dir);
  write_outputs(r, dir);
  for (const char* name : {"summary.csv", "counts.csv", "runs.csv", "fig1.dat"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  }
  EXPECT_EQ(slurp(dir / "counts.csv"), counts_csv(r));
  EXPECT_EQ(slurp(dir / "summary.csv"), summary_csv(r));
  std::filesystem::remove_all(dir);
}
