#pragma once

// Measurement plans, the quadratic measurement map h(v), its polar Jacobian,
// and simulation of noisy, outlier-corrupted readings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "rse/network.hpp"
#include "rse/random.hpp"

namespace rse {

enum class MeasurementKind { InjectionP, InjectionQ, FlowP, FlowQ, VoltageMagSq };

inline const char* kind_name(MeasurementKind kind) {
  switch (kind) {
    case MeasurementKind::InjectionP: return "inj_p";
    case MeasurementKind::InjectionQ: return "inj_q";
    case MeasurementKind::FlowP: return "flow_p";
    case MeasurementKind::FlowQ: return "flow_q";
    case MeasurementKind::VoltageMagSq: return "vmagsq";
  }
  return "?";
}

inline bool is_flow(MeasurementKind kind) {
  return kind == MeasurementKind::FlowP || kind == MeasurementKind::FlowQ;
}

/// One meter. For flows `bus` is the metered end and `to` the far end.
/// For VoltageMagSq, `sigma` is the standard deviation of the magnitude
/// reading |V|, not of |V|^2.
struct Meter {
  MeasurementKind kind;
  BusId bus;
  BusId to;
  double sigma;
};

struct MeasurementPlan {
  std::vector<Meter> meters;

  int size() const { return static_cast<int>(meters.size()); }

  /// Throws std::invalid_argument if any meter is inconsistent with `net`.
  void validate(const Network& net) const {
    if (meters.empty()) throw std::invalid_argument("measurement plan is empty");
    for (std::size_t k = 0; k < meters.size(); ++k) {
      const Meter& m = meters[k];
      const std::string where = "meter " + std::to_string(k);
      if (!(m.sigma > 0.0) || !std::isfinite(m.sigma)) {
        throw std::invalid_argument(where + ": sigma must be positive");
      }
      if (!net.valid(m.bus)) throw std::invalid_argument(where + ": unknown bus");
      if (is_flow(m.kind) && (!net.valid(m.to) || !net.find_line(m.bus, m.to))) {
        throw std::invalid_argument(where + ": no line between buses " +
                                    std::to_string(m.bus.number()) + " and " +
                                    std::to_string(m.to.number()));
      }
    }
  }
};

/// Real and reactive flows at the from-end of every line, then |V|^2 at every bus.
inline MeasurementPlan flows_and_voltages_plan(const Network& net, double sigma_power = 0.02,
                                               double sigma_voltage = 0.01) {
  MeasurementPlan plan;
  for (const Line& l : net.lines()) {
    plan.meters.push_back({MeasurementKind::FlowP, l.from, l.to, sigma_power});
  }
  for (const Line& l : net.lines()) {
    plan.meters.push_back({MeasurementKind::FlowQ, l.from, l.to, sigma_power});
  }
  for (int n = 1; n <= net.n_buses(); ++n) {
    plan.meters.push_back({MeasurementKind::VoltageMagSq, BusId(n), BusId(), sigma_voltage});
  }
  return plan;
}

inline MeasurementPlan parse_plan(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("plan file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("plan must be a JSON array");
  MeasurementPlan plan;
  std::size_t k = 0;
  for (const auto& rec : doc) {
    const std::string where = "plan[" + std::to_string(k++) + "]";
    if (!rec.is_object() || !rec.contains("kind") || !rec["kind"].is_string()) {
      throw ParseError(where + ": malformed record");
    }
    if (!rec.contains("sigma") || !rec["sigma"].is_number()) {
      throw ParseError(where + ": missing \"sigma\"");
    }
    const std::string kind = rec["kind"];
    auto bus_field = [&](const char* key) {
      if (!rec.contains(key) || !rec[key].is_number_integer()) {
        throw ParseError(where + ": missing or non-integer \"" + key + "\"");
      }
      return BusId(rec[key].get<int>());
    };
    Meter m{};
    m.sigma = rec["sigma"].get<double>();
    if (kind == "flow_p" || kind == "flow_q") {
      m.kind = kind == "flow_p" ? MeasurementKind::FlowP : MeasurementKind::FlowQ;
      m.bus = bus_field("from");
      m.to = bus_field("to");
    } else if (kind == "inj_p" || kind == "inj_q" || kind == "vmagsq") {
      m.kind = kind == "inj_p"   ? MeasurementKind::InjectionP
               : kind == "inj_q" ? MeasurementKind::InjectionQ
                                 : MeasurementKind::VoltageMagSq;
      m.bus = bus_field("bus");
    } else {
      throw ParseError(where + ": unknown kind \"" + kind + "\"");
    }
    plan.meters.push_back(m);
  }
  return plan;
}

inline nlohmann::json plan_to_json(const MeasurementPlan& plan) {
  nlohmann::json out = nlohmann::json::array();
  for (const Meter& m : plan.meters) {
    nlohmann::json rec{{"kind", kind_name(m.kind)}, {"sigma", m.sigma}};
    if (is_flow(m.kind)) {
      rec["from"] = m.bus.number();
      rec["to"] = m.to.number();
    } else {
      rec["bus"] = m.bus.number();
    }
    out.push_back(rec);
  }
  return out;
}

/// H_l for every meter, in plan order.
inline std::vector<HermitianCoeff> build_coefficients(const Network& net,
                                                      const MeasurementPlan& plan) {
  plan.validate(net);
  const Eigen::MatrixXcd y = build_admittance(net);
  std::vector<HermitianCoeff> coeffs;
  coeffs.reserve(plan.meters.size());
  for (const Meter& m : plan.meters) {
    switch (m.kind) {
      case MeasurementKind::InjectionP:
        coeffs.push_back(build_injection_matrices(net, y, m.bus).first);
        break;
      case MeasurementKind::InjectionQ:
        coeffs.push_back(build_injection_matrices(net, y, m.bus).second);
        break;
      case MeasurementKind::FlowP:
        coeffs.push_back(build_flow_matrices(net, m.bus, m.to).first);
        break;
      case MeasurementKind::FlowQ:
        coeffs.push_back(build_flow_matrices(net, m.bus, m.to).second);
        break;
      case MeasurementKind::VoltageMagSq:
        coeffs.push_back(build_voltage_matrix(net.n_buses(), m.bus));
        break;
    }
  }
  return coeffs;
}

// ---------------------------------------------------------------------------
// State representation

/// Angle wrapped to (-pi, pi].
inline double wrap_angle(double theta) {
  double t = std::remainder(theta, 2.0 * std::numbers::pi);
  if (t <= -std::numbers::pi) t += 2.0 * std::numbers::pi;
  return t;
}

/// [|V_1| .. |V_N|, angle V_1 .. angle V_N]
inline Eigen::VectorXd to_polar(const Eigen::VectorXcd& v) {
  const Eigen::Index n = v.size();
  Eigen::VectorXd x(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i) = std::abs(v(i));
    x(n + i) = wrap_angle(std::arg(v(i)));
  }
  return x;
}

inline Eigen::VectorXcd from_polar(const Eigen::VectorXd& x) {
  if (x.size() % 2 != 0) throw std::invalid_argument("polar state must have even length");
  const Eigen::Index n = x.size() / 2;
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = std::polar(x(i), x(n + i));
  return v;
}

/// Rotates v so that the reference entry has zero angle. Entries are left
/// untouched when the reference magnitude is zero.
inline Eigen::VectorXcd align_phase(const Eigen::VectorXcd& v, BusId ref) {
  const Complex r = v(ref.index());
  if (std::abs(r) == 0.0) return v;
  Eigen::VectorXcd out = v * (std::conj(r) / std::abs(r));
  out(ref.index()) = std::abs(r);
  return out;
}

inline Eigen::VectorXcd flat_state(int n_buses) {
  return Eigen::VectorXcd::Constant(n_buses, Complex(1.0, 0.0));
}

// ---------------------------------------------------------------------------
// Measurement map

inline Eigen::VectorXd eval_h(const std::vector<HermitianCoeff>& coeffs, const Eigen::VectorXcd& v) {
  Eigen::VectorXd h(static_cast<Eigen::Index>(coeffs.size()));
  for (std::size_t l = 0; l < coeffs.size(); ++l) h(l) = coeffs[l].quadratic(v);
  return h;
}

inline Eigen::VectorXd eval_h(const Network& net, const MeasurementPlan& plan,
                              const Eigen::VectorXcd& v) {
  return eval_h(build_coefficients(net, plan), v);
}

/// Tr(H_l V) for every meter.
inline Eigen::VectorXd eval_lifted(const std::vector<HermitianCoeff>& coeffs,
                                   const Eigen::MatrixXcd& v) {
  Eigen::VectorXd h(static_cast<Eigen::Index>(coeffs.size()));
  for (std::size_t l = 0; l < coeffs.size(); ++l) h(l) = coeffs[l].trace_with(v);
  return h;
}

/// Jacobian of h with respect to the polar state [|V|; angle V], M x 2N.
inline Eigen::MatrixXd jacobian_polar(const std::vector<HermitianCoeff>& coeffs,
                                      const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size() / 2;
  if (x.size() != 2 * n || !x.allFinite()) {
    throw std::invalid_argument("polar state must be finite with even length");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(x(i) > 0.0)) {
      throw std::domain_error("polar Jacobian undefined at zero-magnitude bus " +
                              std::to_string(i + 1));
    }
  }
  const Eigen::VectorXcd v = from_polar(x);
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(coeffs.size()), 2 * n);
  for (std::size_t l = 0; l < coeffs.size(); ++l) {
    const Eigen::VectorXcd g = coeffs[l].apply(v);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Complex gc = std::conj(g(i));
      jac(l, i) = 2.0 * (gc * std::polar(1.0, x(n + i))).real();
      jac(l, n + i) = -2.0 * (gc * v(i)).imag();
    }
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Simulation

struct MeasurementSet {
  Eigen::VectorXd z;
  Eigen::VectorXd weights;
  Eigen::VectorXd true_outliers;
  Eigen::VectorXd noise;  // realized noise on the metered quantity
  std::optional<Eigen::VectorXcd> v_true;

  int size() const { return static_cast<int>(z.size()); }
};

/// Weight of a reading: 1/sigma^2, or 1/(4 z sigma_V^2) for squared magnitudes.
inline double meter_weight(const Meter& m, double reading) {
  if (m.kind == MeasurementKind::VoltageMagSq) {
    const double var = 4.0 * std::max(reading, 1e-12) * m.sigma * m.sigma;
    return 1.0 / var;
  }
  return 1.0 / (m.sigma * m.sigma);
}

inline Eigen::VectorXd plan_weights(const MeasurementPlan& plan, const Eigen::VectorXd& z) {
  Eigen::VectorXd w(z.size());
  for (int l = 0; l < plan.size(); ++l) w(l) = meter_weight(plan.meters[l], z(l));
  return w;
}

struct SimulationOptions {
  /// Multiplies every sigma when drawing noise; weights always use the plan's
  /// sigma. Zero gives noise-free readings.
  double noise_scale = 1.0;
};

/// z_l = h_l(v_true) + noise. Squared magnitudes are simulated as
/// (|V| + e_V)^2 with e_V ~ N(0, sigma_V^2).
inline MeasurementSet simulate(const Network& net, const MeasurementPlan& plan,
                               const Eigen::VectorXcd& v_true, std::uint64_t seed,
                               const SimulationOptions& opts = {}) {
  const auto coeffs = build_coefficients(net, plan);
  const Eigen::VectorXd h = eval_h(coeffs, v_true);
  Rng rng = make_rng(seed, 0x5eed'0001);
  std::normal_distribution<double> normal(0.0, 1.0);
  MeasurementSet ms;
  const int m = plan.size();
  ms.z.resize(m);
  ms.noise.resize(m);
  for (int l = 0; l < m; ++l) {
    const Meter& meter = plan.meters[l];
    const double e = opts.noise_scale * meter.sigma * normal(rng);
    if (meter.kind == MeasurementKind::VoltageMagSq) {
      const double mag = std::abs(v_true(meter.bus.index())) + e;
      ms.z(l) = mag * mag;
    } else {
      ms.z(l) = h(l) + e;
    }
    ms.noise(l) = ms.z(l) - h(l);
  }
  ms.weights = plan_weights(plan, ms.z);
  ms.true_outliers = Eigen::VectorXd::Zero(m);
  ms.v_true = v_true;
  return ms;
}

struct ScaleBy {
  double factor;
};
struct SetTo {
  double value;
};
struct AddOffset {
  double delta;
};
using OutlierMode = std::variant<ScaleBy, SetTo, AddOffset>;

/// Corrupted copy of `ms`; the applied perturbation is added to true_outliers.
/// Weights are left as they were.
inline MeasurementSet inject_outliers(const MeasurementSet& ms, const std::set<int>& indices,
                                      const OutlierMode& mode) {
  MeasurementSet out = ms;
  for (int l : indices) {
    if (l < 0 || l >= ms.size()) {
      throw std::out_of_range("outlier index " + std::to_string(l) + " out of range");
    }
    const double before = ms.z(l);
    const double after = std::visit(
        [before](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, ScaleBy>) return before * m.factor;
          if constexpr (std::is_same_v<T, SetTo>) return m.value;
          if constexpr (std::is_same_v<T, AddOffset>) return before + m.delta;
        },
        mode);
    out.z(l) = after;
    out.true_outliers(l) += after - before;
  }
  return out;
}

struct RandomStateOptions {
  double magnitude_mean = 1.0;
  double magnitude_variance = 0.01;
  double angle_half_width = 0.5 * std::numbers::pi;
  double magnitude_floor = 0.5;
};

/// Reference bus fixed at 1+j0; other magnitudes Gaussian (clamped from
/// below), angles uniform.
inline Eigen::VectorXcd random_state(int n_buses, std::uint64_t seed, BusId ref,
                                     const RandomStateOptions& opts = {}) {
  if (ref.number() < 1 || ref.number() > n_buses) {
    throw std::out_of_range("reference bus out of range");
  }
  Rng rng = make_rng(seed, 0x5eed'0002);
  std::normal_distribution<double> mag(opts.magnitude_mean, std::sqrt(opts.magnitude_variance));
  std::uniform_real_distribution<double> ang(-opts.angle_half_width, opts.angle_half_width);
  Eigen::VectorXcd v(n_buses);
  for (int i = 0; i < n_buses; ++i) {
    const double m = std::max(mag(rng), opts.magnitude_floor);
    const double a = ang(rng);
    v(i) = std::polar(m, a);
  }
  v(ref.index()) = Complex(1.0, 0.0);
  return v;
}

/// sum_l w_l (z_l - h_l)^2 over `mask` (all meters when empty).
inline double weighted_cost(const Eigen::VectorXd& z, const Eigen::VectorXd& w,
                            const Eigen::VectorXd& h, const std::vector<bool>& mask = {}) {
  double acc = 0.0;
  for (Eigen::Index l = 0; l < z.size(); ++l) {
    if (!mask.empty() && !mask[l]) continue;
    const double r = z(l) - h(l);
    acc += w(l) * r * r;
  }
  return acc;
}

}  // namespace rse
