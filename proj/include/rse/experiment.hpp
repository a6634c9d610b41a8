#pragma once

// Monte-Carlo comparison of Gauss-Newton WLS and the SDR robust estimator on
// simulated data with one scaled bad datum per run.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "rse/estimate.hpp"
#include "rse/gauss_newton.hpp"
#include "rse/measurement.hpp"
#include "rse/network.hpp"
#include "rse/random.hpp"
#include "rse/sdr.hpp"

namespace rse {

struct OutlierPolicy {
  int count = 1;
  double factor = 1.2;
  std::vector<MeasurementKind> eligible{MeasurementKind::FlowP, MeasurementKind::FlowQ};
};

struct ScenarioConfig {
  int n_runs = 100;
  std::uint64_t seed = 1;
  OutlierPolicy outliers;
  std::optional<double> lambda;  // default: default_lambda(w) per run
  double kappa = 6.0;
  bool run_wls = true;
  bool run_sdr = true;
  double noise_scale = 1.0;
  int samples = 100;
  bool refine = true;
  BusId ref{1};
  int threads = 1;
  GaussNewtonOptions wls;

  void validate(const MeasurementPlan& plan) const {
    if (n_runs < 1) throw std::invalid_argument("n_runs must be at least 1");
    if (threads < 1) throw std::invalid_argument("threads must be at least 1");
    if (!run_wls && !run_sdr) throw std::invalid_argument("no estimation method selected");
    if (lambda && !(*lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    if (!(noise_scale >= 0.0)) throw std::invalid_argument("noise scale must be non-negative");
    if (samples < 1) throw std::invalid_argument("samples must be at least 1");
    if (outliers.count < 0) throw std::invalid_argument("outlier count must be non-negative");
    if (outliers.count > 0) {
      int eligible = 0;
      for (const auto& m : plan.meters) {
        if (std::find(outliers.eligible.begin(), outliers.eligible.end(), m.kind) !=
            outliers.eligible.end()) {
          ++eligible;
        }
      }
      if (eligible < outliers.count) throw std::invalid_argument("not enough eligible meters for outliers");
    }
  }
};

enum class RunStatus { Converged, Diverged, Failed };

inline const char* run_status_name(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::Diverged: return "diverged";
    case RunStatus::Failed: return "failed";
  }
  return "?";
}

struct MethodRecord {
  RunStatus status = RunStatus::Failed;
  std::string detail;
  int iterations = 0;
  std::vector<double> angle_error;      // rad, per bus, in [0, pi]
  std::vector<double> magnitude_error;  // per bus
};

struct RunRecord {
  int run = 0;
  std::uint64_t seed = 0;
  Eigen::VectorXcd v_true;
  std::vector<int> corrupted;  // 0-based meter indices
  std::vector<int> support;    // declared by the robust estimator
  std::optional<MethodRecord> wls;
  std::optional<MethodRecord> sdr;
};

/// Per-bus errors of v against the truth after aligning both to `ref`.
inline void state_errors(const Eigen::VectorXcd& v, const Eigen::VectorXcd& truth, BusId ref,
                         MethodRecord& rec) {
  const Eigen::VectorXcd a = align_phase(v, ref);
  const Eigen::VectorXcd b = align_phase(truth, ref);
  rec.angle_error.resize(static_cast<std::size_t>(v.size()));
  rec.magnitude_error.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double d = i == ref.index() ? 0.0 : wrap_angle(std::arg(a(i)) - std::arg(b(i)));
    rec.angle_error[i] = std::abs(d);
    rec.magnitude_error[i] = std::abs(std::abs(a(i)) - std::abs(b(i)));
  }
}

struct MethodSummary {
  int runs = 0;
  int converged = 0;
  int diverged = 0;
  int failed = 0;
  std::vector<double> mean_angle_error;  // over converged runs
  std::vector<double> mean_magnitude_error;

  double network_mean_angle_error() const {
    if (mean_angle_error.empty()) return 0.0;
    double s = 0.0;
    for (double x : mean_angle_error) s += x;
    return s / static_cast<double>(mean_angle_error.size());
  }
};

struct MonteCarloResult {
  std::vector<RunRecord> records;
  std::optional<MethodSummary> wls;
  std::optional<MethodSummary> sdr;
  int n_buses = 0;
  int detected = 0;  // runs whose support covers every corrupted meter
};

class MonteCarlo {
 public:
  MonteCarlo(Network net, MeasurementPlan plan, ScenarioConfig config)
      : net_(std::move(net)), plan_(std::move(plan)), config_(std::move(config)) {
    plan_.validate(net_);
    config_.validate(plan_);
    coeffs_ = build_coefficients(net_, plan_);
    for (int l = 0; l < plan_.size(); ++l) {
      const auto kind = plan_.meters[l].kind;
      if (std::find(config_.outliers.eligible.begin(), config_.outliers.eligible.end(), kind) !=
          config_.outliers.eligible.end()) {
        eligible_.push_back(l);
      }
    }
  }

  RunRecord run_one(int index) const {
    RunRecord rec;
    rec.run = index;
    rec.seed = run_seed(config_.seed, static_cast<std::uint64_t>(index));
    const int n = net_.n_buses();
    rec.v_true = random_state(n, rec.seed, config_.ref);
    SimulationOptions so;
    so.noise_scale = config_.noise_scale;
    MeasurementSet ms = simulate(net_, plan_, rec.v_true, rec.seed, so);

    if (config_.outliers.count > 0) {
      Rng rng = make_rng(rec.seed, 0x5eed'0004);
      std::vector<int> pool = eligible_;
      std::set<int> chosen;
      for (int k = 0; k < config_.outliers.count; ++k) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        const std::size_t j = pick(rng);
        chosen.insert(pool[j]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
      }
      ms = inject_outliers(ms, chosen, ScaleBy{config_.outliers.factor});
      rec.corrupted.assign(chosen.begin(), chosen.end());
    }

    if (config_.run_wls) {
      MethodRecord m;
      try {
        GaussNewtonOptions o = config_.wls;
        o.ref = config_.ref;
        const auto gn = gauss_newton(coeffs_, ms.z, ms.weights, to_polar(flat_state(n)), o);
        m.iterations = gn.iterations;
        m.detail = status_name(gn.status);
        if (gn.status == GaussNewtonStatus::Converged) {
          m.status = RunStatus::Converged;
          state_errors(gn.state(), rec.v_true, config_.ref, m);
        } else {
          m.status = gn.status == GaussNewtonStatus::Diverged ? RunStatus::Diverged : RunStatus::Failed;
        }
      } catch (const std::exception& e) {
        m.status = RunStatus::Failed;
        m.detail = e.what();
      }
      rec.wls = std::move(m);
    }

    if (config_.run_sdr) {
      MethodRecord m;
      try {
        const double lambda = config_.lambda.value_or(default_lambda(ms.weights, config_.kappa));
        SdpProblem p{coeffs_, ms.z, ms.weights, lambda};
        RobustOptions o;
        o.randomization.samples = config_.samples;
        o.randomization.seed = rec.seed;
        o.randomization.ref = config_.ref;
        o.refine = config_.refine;
        const RobustResult r = robust_estimate(p, o);
        m.status = RunStatus::Converged;
        m.iterations = r.relaxation.iterations;
        m.detail = method_name(r.estimate.method);
        rec.support = r.support;
        state_errors(r.estimate.v, rec.v_true, config_.ref, m);
      } catch (const std::exception& e) {
        m.status = RunStatus::Failed;
        m.detail = e.what();
      }
      rec.sdr = std::move(m);
    }
    return rec;
  }

  MonteCarloResult run() const {
    MonteCarloResult out;
    out.n_buses = net_.n_buses();
    out.records.resize(static_cast<std::size_t>(config_.n_runs));
    std::atomic<int> next{0};
    auto worker = [&] {
      for (int i = next++; i < config_.n_runs; i = next++) out.records[i] = run_one(i);
    };
    if (config_.threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < config_.threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }

    auto summarize = [&](auto member) {
      MethodSummary s;
      const std::size_t n = static_cast<std::size_t>(out.n_buses);
      s.mean_angle_error.assign(n, 0.0);
      s.mean_magnitude_error.assign(n, 0.0);
      for (const auto& rec : out.records) {
        const auto& m = rec.*member;
        if (!m) continue;
        ++s.runs;
        switch (m->status) {
          case RunStatus::Converged: ++s.converged; break;
          case RunStatus::Diverged: ++s.diverged; break;
          case RunStatus::Failed: ++s.failed; break;
        }
        if (m->status != RunStatus::Converged) continue;
        for (std::size_t i = 0; i < n; ++i) {
          s.mean_angle_error[i] += m->angle_error[i];
          s.mean_magnitude_error[i] += m->magnitude_error[i];
        }
      }
      if (s.converged > 0) {
        for (std::size_t i = 0; i < n; ++i) {
          s.mean_angle_error[i] /= s.converged;
          s.mean_magnitude_error[i] /= s.converged;
        }
      }
      return s;
    };
    if (config_.run_wls) out.wls = summarize(&RunRecord::wls);
    if (config_.run_sdr) out.sdr = summarize(&RunRecord::sdr);
    for (const auto& rec : out.records) {
      if (rec.corrupted.empty()) continue;
      bool all = true;
      for (int c : rec.corrupted) {
        all = all && std::find(rec.support.begin(), rec.support.end(), c) != rec.support.end();
      }
      out.detected += all;
    }
    return out;
  }

  const ScenarioConfig& config() const { return config_; }
  const MeasurementPlan& plan() const { return plan_; }

 private:
  Network net_;
  MeasurementPlan plan_;
  ScenarioConfig config_;
  std::vector<HermitianCoeff> coeffs_;
  std::vector<int> eligible_;
};

namespace internal {

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10e", x);
  return buf;
}

inline std::string join(const std::vector<int>& xs, char sep = ' ', int offset = 0) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(xs[i] + offset);
  }
  return s;
}

}  // namespace internal

/// bus,wls_angle_error,sdr_angle_error,wls_magnitude_error,sdr_magnitude_error
inline std::string summary_csv(const MonteCarloResult& r) {
  std::ostringstream os;
  os << "bus,wls_angle_error,sdr_angle_error,wls_magnitude_error,sdr_magnitude_error\n";
  auto cell = [](const std::optional<MethodSummary>& s, bool angle, int i) {
    if (!s || s->converged == 0) return std::string();
    return internal::fmt(angle ? s->mean_angle_error[i] : s->mean_magnitude_error[i]);
  };
  for (int i = 0; i < r.n_buses; ++i) {
    os << i + 1 << ',' << cell(r.wls, true, i) << ',' << cell(r.sdr, true, i) << ','
       << cell(r.wls, false, i) << ',' << cell(r.sdr, false, i) << '\n';
  }
  return os.str();
}

/// method,runs,converged,diverged,failed,network_mean_angle_error
inline std::string counts_csv(const MonteCarloResult& r) {
  std::ostringstream os;
  os << "method,runs,converged,diverged,failed,network_mean_angle_error\n";
  auto row = [&](const char* name, const std::optional<MethodSummary>& s) {
    if (!s) return;
    os << name << ',' << s->runs << ',' << s->converged << ',' << s->diverged << ',' << s->failed
       << ',' << (s->converged ? internal::fmt(s->network_mean_angle_error()) : "") << '\n';
  };
  row("wls", r.wls);
  row("sdr", r.sdr);
  return os.str();
}

/// run,seed,method,status,detail,iterations,corrupted,support,
/// mean_angle_error,max_angle_error,mean_magnitude_error
inline std::string runs_csv(const MonteCarloResult& r) {
  std::ostringstream os;
  os << "run,seed,method,status,detail,iterations,corrupted,support,mean_angle_error,"
        "max_angle_error,mean_magnitude_error\n";
  for (const auto& rec : r.records) {
    auto row = [&](const char* name, const std::optional<MethodRecord>& m) {
      if (!m) return;
      std::string detail = m->detail;
      std::replace(detail.begin(), detail.end(), ',', ';');
      std::replace(detail.begin(), detail.end(), '\n', ' ');
      os << rec.run << ',' << rec.seed << ',' << name << ',' << run_status_name(m->status) << ','
         << detail << ',' << m->iterations << ',' << internal::join(rec.corrupted, ' ', 1) << ','
         << (std::string(name) == "sdr" ? internal::join(rec.support, ' ', 1) : std::string())
         << ',';
      if (m->status == RunStatus::Converged) {
        double mean_a = 0.0, max_a = 0.0, mean_m = 0.0;
        for (std::size_t i = 0; i < m->angle_error.size(); ++i) {
          mean_a += m->angle_error[i];
          max_a = std::max(max_a, m->angle_error[i]);
          mean_m += m->magnitude_error[i];
        }
        const double n = static_cast<double>(m->angle_error.size());
        os << internal::fmt(mean_a / n) << ',' << internal::fmt(max_a) << ','
           << internal::fmt(mean_m / n);
      } else {
        os << ",,";
      }
      os << '\n';
    };
    row("wls", rec.wls);
    row("sdr", rec.sdr);
  }
  return os.str();
}

/// Whitespace-separated columns for plotting, one block per panel.
inline std::string plot_data(const MonteCarloResult& r) {
  std::ostringstream os;
  auto val = [](const std::optional<MethodSummary>& s, bool angle, int i) {
    if (!s || s->converged == 0) return std::string("NaN");
    return internal::fmt(angle ? s->mean_angle_error[i] : s->mean_magnitude_error[i]);
  };
  os << "# angle error (rad): bus wls sdr\n";
  for (int i = 0; i < r.n_buses; ++i) {
    os << i + 1 << ' ' << val(r.wls, true, i) << ' ' << val(r.sdr, true, i) << '\n';
  }
  os << "\n\n# magnitude error (p.u.): bus wls sdr\n";
  for (int i = 0; i < r.n_buses; ++i) {
    os << i + 1 << ' ' << val(r.wls, false, i) << ' ' << val(r.sdr, false, i) << '\n';
  }
  return os.str();
}

/// Writes summary.csv, counts.csv, runs.csv and fig1.dat into `dir`.
inline void write_outputs(const MonteCarloResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    f << text;
    if (!f) throw std::runtime_error("write failed for " + (dir / name).string());
  };
  put("summary.csv", summary_csv(r));
  put("counts.csv", counts_csv(r));
  put("runs.csv", runs_csv(r));
  put("fig1.dat", plot_data(r));
}

}  // namespace rse
