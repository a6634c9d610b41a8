// rse: identifiability analysis, single-shot estimation and the Monte-Carlo
// comparison, from the command line.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rse/estimate.hpp"
#include "rse/experiment.hpp"
#include "rse/gauss_newton.hpp"
#include "rse/identifiability.hpp"
#include "rse/ieee30.hpp"
#include "rse/measurement.hpp"
#include "rse/network.hpp"
#include "rse/sdr.hpp"

namespace {

using nlohmann::json;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

// Bad input files and inconsistent options.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void emit(const json& doc, const std::string& out) {
  if (out.empty()) {
    std::cout << doc.dump(2) << '\n';
    return;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + out);
  f << doc.dump(2) << '\n';
}

struct Common {
  std::string case_path = "builtin:ieee30";
  std::string plan_path = "builtin:ieee30";

  rse::Network network() const {
    try {
      if (case_path == "builtin:ieee30") return rse::parse_case(rse::kIeee30CaseJson);
      return rse::parse_case(read_file(case_path));
    } catch (const rse::ParseError& e) {
      throw ConfigError(std::string("case: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("case: ") + e.what());
    }
  }

  rse::MeasurementPlan plan(const rse::Network& net) const {
    try {
      rse::MeasurementPlan p = plan_path == "builtin:ieee30"
                                   ? rse::flows_and_voltages_plan(net)
                                   : rse::parse_plan(read_file(plan_path));
      p.validate(net);
      return p;
    } catch (const rse::ParseError& e) {
      throw ConfigError(std::string("plan: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("plan: ") + e.what());
    }
  }
};

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json state_json(const Eigen::VectorXcd& v) {
  const Eigen::VectorXd x = rse::to_polar(v);
  const Eigen::Index n = v.size();
  return {{"magnitude", vec_json(x.head(n))}, {"angle", vec_json(x.tail(n))}};
}

json errors_json(const Eigen::VectorXcd& v, const Eigen::VectorXcd& truth, rse::BusId ref) {
  rse::MethodRecord rec;
  rse::state_errors(v, truth, ref, rec);
  return {{"angle_error", rec.angle_error}, {"magnitude_error", rec.magnitude_error}};
}

json kkt_json(const rse::KktResiduals& k) {
  return {{"outlier_stationarity", k.outlier_stationarity},
          {"projected_gradient", k.projected_gradient},
          {"complementarity", k.complementarity},
          {"gradient_min_eig", k.gradient_min_eig},
          {"lipschitz", k.lipschitz}};
}

std::vector<int> one_based(const std::vector<int>& xs) {
  std::vector<int> out;
  for (int x : xs) out.push_back(x + 1);
  return out;
}

// -- analyze ----------------------------------------------------------------

struct AnalyzeArgs {
  Common common;
  std::string out;
};

int run_analyze(const AnalyzeArgs& args) {
  const rse::Network net = args.common.network();
  const rse::MeasurementPlan plan = args.common.plan(net);
  const auto coeffs = rse::build_coefficients(net, plan);
  const Eigen::MatrixXd jac = rse::jacobian_polar(coeffs, rse::to_polar(rse::flat_state(net.n_buses())));
  json doc = rse::to_json(rse::analyze_linear(jac));
  doc["buses"] = net.n_buses();
  doc["linearization"] = "flat start";
  emit(doc, args.out);
  return kOk;
}

// -- estimate ---------------------------------------------------------------

struct EstimateArgs {
  Common common;
  std::string method = "sdr";
  std::string measurements;
  std::uint64_t seed = 1;
  int outliers = 0;
  double noise_scale = 1.0;
  std::optional<double> lambda;
  int samples = 100;
  bool no_refine = false;
  double tol = 1e-6;
  int max_iters = 50;
  double cond_max = 1e8;
  std::string start = "flat";
  std::string x0;
  std::string out;
};

int run_estimate(const EstimateArgs& args) {
  const rse::Network net = args.common.network();
  const rse::MeasurementPlan plan = args.common.plan(net);
  const rse::BusId ref(1);

  rse::MeasurementSet ms;
  std::vector<int> corrupted;
  if (!args.measurements.empty()) {
    try {
      const json doc = json::parse(read_file(args.measurements));
      const auto z = doc.at("z").get<std::vector<double>>();
      if (static_cast<int>(z.size()) != plan.size()) {
        throw ConfigError("measurements: expected " + std::to_string(plan.size()) + " readings");
      }
      ms.z = Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
      if (doc.contains("weights")) {
        const auto w = doc.at("weights").get<std::vector<double>>();
        if (w.size() != z.size()) throw ConfigError("measurements: weights and z differ in length");
        ms.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
      } else {
        ms.weights = rse::plan_weights(plan, ms.z);
      }
      ms.true_outliers = Eigen::VectorXd::Zero(ms.z.size());
    } catch (const json::exception& e) {
      throw ConfigError(std::string("measurements: ") + e.what());
    }
  } else {
    const Eigen::VectorXcd v = rse::random_state(net.n_buses(), args.seed, ref);
    rse::SimulationOptions so;
    so.noise_scale = args.noise_scale;
    ms = rse::simulate(net, plan, v, args.seed, so);
    if (args.outliers > 0) {
      rse::ScenarioConfig cfg;
      cfg.outliers.count = args.outliers;
      cfg.validate(plan);
      std::vector<int> pool;
      for (int l = 0; l < plan.size(); ++l) {
        if (rse::is_flow(plan.meters[l].kind)) pool.push_back(l);
      }
      rse::Rng rng = rse::make_rng(args.seed, 0x5eed'0004);
      std::set<int> chosen;
      for (int k = 0; k < args.outliers; ++k) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        const std::size_t j = pick(rng);
        chosen.insert(pool[j]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
      }
      ms = rse::inject_outliers(ms, chosen, rse::ScaleBy{1.2});
      corrupted.assign(chosen.begin(), chosen.end());
    }
  }

  json doc;
  doc["method"] = args.method;
  doc["measurements"] = plan.size();
  if (!corrupted.empty()) doc["corrupted"] = one_based(corrupted);
  const auto coeffs = rse::build_coefficients(net, plan);

  if (args.method == "wls") {
    Eigen::VectorXd x0;
    if (args.start == "flat") {
      x0 = rse::to_polar(rse::flat_state(net.n_buses()));
    } else if (args.start == "truth") {
      if (!ms.v_true) throw ConfigError("--start truth needs simulated data");
      x0 = rse::to_polar(*ms.v_true);
    } else {
      if (args.x0.empty()) throw ConfigError("--start custom needs --x0");
      std::vector<double> xs;
      try {
        xs = json::parse(read_file(args.x0)).get<std::vector<double>>();
      } catch (const json::exception& e) {
        throw ConfigError(std::string("x0: ") + e.what());
      }
      if (static_cast<int>(xs.size()) != 2 * net.n_buses()) {
        throw ConfigError("x0 must hold magnitudes then angles, 2N numbers");
      }
      x0 = Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    }
    rse::GaussNewtonOptions o;
    o.tol = args.tol;
    o.max_iters = args.max_iters;
    o.cond_max = args.cond_max;
    o.ref = ref;
    rse::GaussNewtonResult gn;
    try {
      gn = rse::gauss_newton(coeffs, ms.z, ms.weights, x0, o);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    doc["status"] = rse::status_name(gn.status);
    doc["iterations"] = gn.iterations;
    doc["condition_number"] = gn.condition_number;
    doc["step_norms"] = gn.step_norms;
    doc["costs"] = gn.costs;
    if (!gn.note.empty()) doc["note"] = gn.note;
    doc["state"] = state_json(gn.state());
    if (ms.v_true && gn.status == rse::GaussNewtonStatus::Converged) {
      doc["errors"] = errors_json(gn.state(), *ms.v_true, ref);
    }
    emit(doc, args.out);
    return gn.status == rse::GaussNewtonStatus::Converged ? kOk : kRuntimeError;
  }

  double lambda = 0.0;
  if (args.lambda) {
    lambda = *args.lambda;
  } else {
    lambda = rse::default_lambda(ms.weights);
    std::cerr << "warning: --lambda not given, using 6 * median(sqrt(w)) = " << lambda << '\n';
  }
  rse::SdpProblem p{coeffs, ms.z, ms.weights, lambda};
  rse::RobustOptions o;
  o.randomization.samples = args.samples;
  o.randomization.seed = args.seed;
  o.randomization.ref = ref;
  o.refine = !args.no_refine;
  const rse::RobustResult r = rse::robust_estimate(p, o);
  const rse::SdpSolution& sol = r.relaxation;
  doc["lambda"] = lambda;
  doc["relaxation"] = {{"objective", sol.objective},
                       {"iterations", sol.iterations},
                       {"gap_bound", sol.gap_bound},
                       {"primal_residual", sol.primal_residual},
                       {"eigenvalues", vec_json(sol.eigenvalues)},
                       {"rank_one_ratio", sol.rank_one_ratio()},
                       {"a", vec_json(sol.a)},
                       {"chi", vec_json(sol.chi)},
                       {"support", one_based(rse::outlier_support(sol.a, ms.z))},
                       {"kkt", kkt_json(sol.kkt)}};
  doc["extraction"] = rse::method_name(r.estimate.method);
  doc["refined"] = r.refined;
  doc["rank_of_v"] = r.estimate.rank_of_v;
  doc["fit_cost"] = r.estimate.fit_cost;
  doc["a"] = vec_json(r.a);
  doc["support"] = one_based(r.support);
  doc["state"] = state_json(r.estimate.v);
  if (ms.v_true) doc["errors"] = errors_json(r.estimate.v, *ms.v_true, ref);
  emit(doc, args.out);
  return kOk;
}

// -- montecarlo -------------------------------------------------------------

struct MonteCarloArgs {
  Common common;
  int runs = 100;
  std::uint64_t seed = 1;
  std::optional<double> lambda;
  double kappa = 6.0;
  std::string out;
  std::vector<std::string> methods{"wls", "sdr"};
  int threads = 1;
  double noise_scale = 1.0;
  int outliers = 1;
  int samples = 100;
  bool no_refine = false;
};

int run_montecarlo(const MonteCarloArgs& args) {
  const rse::Network net = args.common.network();
  const rse::MeasurementPlan plan = args.common.plan(net);
  rse::ScenarioConfig cfg;
  cfg.n_runs = args.runs;
  cfg.seed = args.seed;
  cfg.lambda = args.lambda;
  cfg.kappa = args.kappa;
  cfg.threads = args.threads;
  cfg.noise_scale = args.noise_scale;
  cfg.outliers.count = args.outliers;
  cfg.samples = args.samples;
  cfg.refine = !args.no_refine;
  cfg.run_wls = std::find(args.methods.begin(), args.methods.end(), "wls") != args.methods.end();
  cfg.run_sdr = std::find(args.methods.begin(), args.methods.end(), "sdr") != args.methods.end();
  std::optional<rse::MonteCarlo> mc;
  try {
    mc.emplace(net, plan, cfg);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto t0 = std::chrono::steady_clock::now();
  const rse::MonteCarloResult res = mc->run();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rse::write_outputs(res, args.out);

  std::cout << rse::counts_csv(res);
  if (cfg.outliers.count > 0 && cfg.run_sdr) {
    std::cout << "bad data covered by the declared support in " << res.detected << " of "
              << cfg.n_runs << " runs\n";
  }
  std::cerr << "elapsed " << secs << " s\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust AC state estimation via semidefinite relaxation"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* sub, Common& c) {
    sub->add_option("--case", c.case_path, "Network case JSON, or builtin:ieee30");
    sub->add_option("--plan", c.plan_path, "Measurement plan JSON, or builtin:ieee30");
  };

  AnalyzeArgs analyze;
  auto* a = app.add_subcommand("analyze", "Identifiability report of the flat-start Jacobian");
  add_common(a, analyze.common);
  a->add_option("--out", analyze.out, "Write the JSON report here instead of stdout");

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Estimate the state from one measurement set");
  add_common(e, est.common);
  e->add_option("--method", est.method, "wls or sdr")->check(CLI::IsMember({"wls", "sdr"}));
  e->add_option("--measurements", est.measurements, "JSON with z (and optionally weights)");
  e->add_option("--seed", est.seed, "Seed for simulated data and randomization");
  e->add_option("--outliers", est.outliers, "Number of flow meters scaled by 1.2 (simulated data)")
      ->check(CLI::NonNegativeNumber);
  e->add_option("--noise-scale", est.noise_scale, "Multiplier on simulated noise")
      ->check(CLI::NonNegativeNumber);
  e->add_option("--lambda", est.lambda, "l1 weight on the outlier vector")->check(CLI::PositiveNumber);
  e->add_option("--samples", est.samples, "Randomization samples")->check(CLI::PositiveNumber);
  e->add_flag("--no-refine", est.no_refine, "Skip the local refinement of the extracted state");
  e->add_option("--tol", est.tol, "Gauss-Newton step tolerance")->check(CLI::PositiveNumber);
  e->add_option("--max-iters", est.max_iters, "Gauss-Newton iteration cap")->check(CLI::PositiveNumber);
  e->add_option("--cond-max", est.cond_max, "Divergence threshold on the condition number")
      ->check(CLI::PositiveNumber);
  e->add_option("--start", est.start, "flat, truth or custom")
      ->check(CLI::IsMember({"flat", "truth", "custom"}));
  e->add_option("--x0", est.x0, "JSON array [|V|..., angle...] for --start custom");
  e->add_option("--out", est.out, "Write the JSON result here instead of stdout");

  MonteCarloArgs mcargs;
  auto* m = app.add_subcommand("montecarlo", "Monte-Carlo comparison of WLS and SDR");
  add_common(m, mcargs.common);
  m->add_option("--runs", mcargs.runs, "Number of runs")->check(CLI::PositiveNumber);
  m->add_option("--seed", mcargs.seed, "Base seed; run i uses seed xor i");
  m->add_option("--lambda", mcargs.lambda, "Fixed l1 weight (default: kappa * median(sqrt(w)))")
      ->check(CLI::PositiveNumber);
  m->add_option("--kappa", mcargs.kappa, "Multiplier for the default lambda")->check(CLI::PositiveNumber);
  m->add_option("--out", mcargs.out, "Output directory")->required();
  m->add_option("--methods", mcargs.methods, "Subset of wls,sdr")
      ->delimiter(',')
      ->check(CLI::IsMember({"wls", "sdr"}));
  m->add_option("--threads", mcargs.threads, "Worker threads")->check(CLI::PositiveNumber);
  m->add_option("--noise-scale", mcargs.noise_scale, "Multiplier on simulated noise")
      ->check(CLI::NonNegativeNumber);
  m->add_option("--outliers", mcargs.outliers, "Corrupted flow meters per run")
      ->check(CLI::NonNegativeNumber);
  m->add_option("--samples", mcargs.samples, "Randomization samples")->check(CLI::PositiveNumber);
  m->add_flag("--no-refine", mcargs.no_refine, "Skip the local refinement of the extracted state");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::Success& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kConfigError;
  }

  try {
    if (a->parsed()) return run_analyze(analyze);
    if (e->parsed()) return run_estimate(est);
    return run_montecarlo(mcargs);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kConfigError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kRuntimeError;
  }
}
