#pragma once

// Network description, bus admittance matrix, and the Hermitian coefficient
// matrices that express every metered quantity as a linear function of the
// lifted voltage outer product V = v v^H.

#include <complex>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace rse {

using Complex = std::complex<double>;

/// Raised for malformed case, plan, or measurement files.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 1-based bus number as it appears in case files.
class BusId {
 public:
  constexpr BusId() = default;
  constexpr explicit BusId(int number) : number_(number) {}

  constexpr int number() const { return number_; }
  constexpr int index() const { return number_ - 1; }

  friend constexpr bool operator==(BusId, BusId) = default;
  friend constexpr auto operator<=>(BusId, BusId) = default;

 private:
  int number_{0};
};

struct Line {
  BusId from;
  BusId to;
  Complex series;      // y_mn
  Complex shunt_from;  // shunt at the from-end
  Complex shunt_to;    // shunt at the to-end

  /// Shunt at the end attached to `bus`.
  Complex shunt_at(BusId bus) const { return bus == from ? shunt_from : shunt_to; }
  BusId other_end(BusId bus) const { return bus == from ? to : from; }
};

class Network {
 public:
  Network() = default;

  /// Throws std::invalid_argument when a line violates the type invariants.
  Network(int n_buses, std::vector<Line> lines, std::vector<Complex> ground_shunts)
      : n_buses_(n_buses), lines_(std::move(lines)), ground_shunts_(std::move(ground_shunts)) {
    if (n_buses_ < 1) throw std::invalid_argument("network needs at least one bus");
    if (ground_shunts_.empty()) ground_shunts_.assign(n_buses_, Complex{});
    if (static_cast<int>(ground_shunts_.size()) != n_buses_) {
      throw std::invalid_argument("ground shunt vector length differs from bus count");
    }
    for (std::size_t k = 0; k < lines_.size(); ++k) {
      const Line& l = lines_[k];
      if (!valid(l.from) || !valid(l.to)) {
        throw std::invalid_argument("line " + std::to_string(k) + " references an unknown bus");
      }
      if (l.from == l.to) {
        throw std::invalid_argument("line " + std::to_string(k) + " is a self-loop at bus " +
                                    std::to_string(l.from.number()));
      }
      if (l.series == Complex{}) {
        throw std::invalid_argument("line " + std::to_string(k) + " has zero series admittance");
      }
      for (std::size_t j = 0; j < k; ++j) {
        const Line& o = lines_[j];
        if ((o.from == l.from && o.to == l.to) || (o.from == l.to && o.to == l.from)) {
          throw std::invalid_argument("duplicate line between buses " +
                                      std::to_string(l.from.number()) + " and " +
                                      std::to_string(l.to.number()));
        }
      }
    }
  }

  int n_buses() const { return n_buses_; }
  const std::vector<Line>& lines() const { return lines_; }
  const std::vector<Complex>& ground_shunts() const { return ground_shunts_; }
  bool valid(BusId bus) const { return bus.number() >= 1 && bus.number() <= n_buses_; }

  /// Index of the line joining the two buses, in either orientation.
  std::optional<std::size_t> find_line(BusId a, BusId b) const {
    for (std::size_t k = 0; k < lines_.size(); ++k) {
      const Line& l = lines_[k];
      if ((l.from == a && l.to == b) || (l.from == b && l.to == a)) return k;
    }
    return std::nullopt;
  }

  bool connected() const {
    std::vector<int> parent(n_buses_);
    for (int i = 0; i < n_buses_; ++i) parent[i] = i;
    auto root = [&](int i) {
      while (parent[i] != i) i = parent[i] = parent[parent[i]];
      return i;
    };
    int components = n_buses_;
    for (const Line& l : lines_) {
      const int a = root(l.from.index());
      const int b = root(l.to.index());
      if (a != b) {
        parent[a] = b;
        --components;
      }
    }
    return components == 1;
  }

 private:
  int n_buses_{0};
  std::vector<Line> lines_;
  std::vector<Complex> ground_shunts_;
};

/// Parses the JSON case format:
/// {"n_buses": N, "bus_shunts": [{"bus", "gs", "bs"}],
///  "branches": [{"from", "to", "r", "x", "b"}]}
/// Each branch may carry "b_from"/"b_to" instead of "b" for asymmetric
/// charging. Transformer fields are rejected.
inline Network parse_case(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("case file is not valid JSON: ") + e.what());
  }
  auto number = [](const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj[key].is_number()) {
      throw ParseError(where + ": missing or non-numeric \"" + key + "\"");
    }
    return obj[key].get<double>();
  };
  auto integer = [](const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj[key].is_number_integer()) {
      throw ParseError(where + ": missing or non-integer \"" + key + "\"");
    }
    return obj[key].get<int>();
  };

  if (!doc.is_object()) throw ParseError("case file must be a JSON object");
  const int n = integer(doc, "n_buses", "case");
  if (n < 1) throw ParseError("case: n_buses must be positive");
  auto check_bus = [n](int bus, const std::string& where) {
    if (bus < 1 || bus > n) {
      throw ParseError(where + ": reference to unknown bus " + std::to_string(bus));
    }
    return BusId(bus);
  };

  std::vector<Complex> shunts(n);
  if (doc.contains("bus_shunts")) {
    if (!doc["bus_shunts"].is_array()) throw ParseError("case: bus_shunts must be an array");
    std::size_t k = 0;
    for (const auto& rec : doc["bus_shunts"]) {
      const std::string where = "bus_shunts[" + std::to_string(k++) + "]";
      if (!rec.is_object()) throw ParseError(where + ": malformed record");
      const BusId bus = check_bus(integer(rec, "bus", where), where);
      shunts[bus.index()] += Complex(number(rec, "gs", where), number(rec, "bs", where));
    }
  }

  if (!doc.contains("branches") || !doc["branches"].is_array()) {
    throw ParseError("case: missing \"branches\" array");
  }
  std::vector<Line> lines;
  std::size_t k = 0;
  for (const auto& rec : doc["branches"]) {
    const std::string where = "branches[" + std::to_string(k++) + "]";
    if (!rec.is_object()) throw ParseError(where + ": malformed record");
    for (const char* key : {"tap", "ratio", "shift", "angle"}) {
      if (rec.contains(key)) {
        throw ParseError(where + ": transformer field \"" + key + "\" is not supported");
      }
    }
    const BusId from = check_bus(integer(rec, "from", where), where);
    const BusId to = check_bus(integer(rec, "to", where), where);
    if (from == to) throw ParseError(where + ": self-loop at bus " + std::to_string(from.number()));
    const Complex impedance(number(rec, "r", where), number(rec, "x", where));
    if (impedance == Complex{}) throw ParseError(where + ": zero impedance");
    double b_from = 0.0;
    double b_to = 0.0;
    if (rec.contains("b_from") || rec.contains("b_to")) {
      if (rec.contains("b")) throw ParseError(where + ": give either \"b\" or \"b_from\"/\"b_to\"");
      b_from = number(rec, "b_from", where);
      b_to = number(rec, "b_to", where);
    } else if (rec.contains("b")) {
      b_from = b_to = 0.5 * number(rec, "b", where);
    }
    for (const Line& l : lines) {
      if ((l.from == from && l.to == to) || (l.from == to && l.to == from)) {
        throw ParseError(where + ": duplicate line between buses " + std::to_string(from.number()) +
                         " and " + std::to_string(to.number()));
      }
    }
    lines.push_back(Line{from, to, 1.0 / impedance, Complex(0.0, b_from), Complex(0.0, b_to)});
  }
  return Network(n, std::move(lines), std::move(shunts));
}

/// Bus admittance matrix. Diagonal entries collect the ground shunt, the
/// series admittances of incident lines, and each incident line's shunt at
/// that bus, so that I_n = sum_m I_nm + y_nn V_n.
inline Eigen::MatrixXcd build_admittance(const Network& net) {
  const int n = net.n_buses();
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (int i = 0; i < n; ++i) y(i, i) = net.ground_shunts()[i];
  for (const Line& l : net.lines()) {
    const int m = l.from.index();
    const int k = l.to.index();
    y(m, m) += l.series + l.shunt_from;
    y(k, k) += l.series + l.shunt_to;
    y(m, k) -= l.series;
    y(k, m) -= l.series;
  }
  return y;
}

/// Sparse Hermitian matrix stored as its nonzero entries (both triangles).
class HermitianCoeff {
 public:
  struct Entry {
    int row;
    int col;
    Complex value;
  };

  HermitianCoeff() = default;

  /// Keeps the exact nonzeros of `h`, which must equal its conjugate transpose.
  explicit HermitianCoeff(const Eigen::MatrixXcd& h) : dim_(static_cast<int>(h.rows())) {
    if (h.rows() != h.cols() || h != h.adjoint()) {
      throw std::invalid_argument("coefficient matrix is not Hermitian");
    }
    for (int c = 0; c < dim_; ++c) {
      for (int r = 0; r < dim_; ++r) {
        if (h(r, c) != Complex{}) entries_.push_back({r, c, h(r, c)});
      }
    }
  }

  int dim() const { return dim_; }
  const std::vector<Entry>& entries() const { return entries_; }

  Eigen::MatrixXcd dense() const {
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(dim_, dim_);
    for (const Entry& e : entries_) h(e.row, e.col) = e.value;
    return h;
  }

  /// Re Tr(H V) for Hermitian V.
  double trace_with(const Eigen::MatrixXcd& v) const {
    double acc = 0.0;
    for (const Entry& e : entries_) acc += (e.value * v(e.col, e.row)).real();
    return acc;
  }

  /// H x
  Eigen::VectorXcd apply(const Eigen::VectorXcd& x) const {
    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(dim_);
    for (const Entry& e : entries_) out(e.row) += e.value * x(e.col);
    return out;
  }

  /// x^H H x, equal to Tr(H x x^H).
  double quadratic(const Eigen::VectorXcd& x) const {
    double acc = 0.0;
    for (const Entry& e : entries_) acc += (std::conj(x(e.row)) * e.value * x(e.col)).real();
    return acc;
  }

  /// S H S for Hermitian S, computed from the sparse entries.
  Eigen::MatrixXcd congruence(const Eigen::MatrixXcd& s) const {
    Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(s.rows(), s.cols());
    for (const Entry& e : entries_) out.noalias() += e.value * s.col(e.row) * s.row(e.col);
    return out;
  }

 private:
  int dim_{0};
  std::vector<Entry> entries_;
};

namespace internal {

inline HermitianCoeff real_part_form(const Eigen::MatrixXcd& a) {
  return HermitianCoeff(0.5 * (a + a.adjoint()).eval());
}

inline HermitianCoeff imag_part_form(const Eigen::MatrixXcd& a) {
  const Complex half_j(0.0, 0.5);
  return HermitianCoeff((half_j * (a - a.adjoint())).eval());
}

}  // namespace internal

/// (H_P, H_Q) with P_n + jQ_n = V_n conj(I_n) = Tr(H_P V) + j Tr(H_Q V).
inline std::pair<HermitianCoeff, HermitianCoeff> build_injection_matrices(
    const Network& net, const Eigen::MatrixXcd& y, BusId bus) {
  if (!net.valid(bus)) {
    throw std::out_of_range("injection matrix requested for unknown bus " +
                            std::to_string(bus.number()));
  }
  const int n = net.n_buses();
  Eigen::MatrixXcd yn = Eigen::MatrixXcd::Zero(n, n);
  yn.row(bus.index()) = y.row(bus.index());
  return {internal::real_part_form(yn), internal::imag_part_form(yn)};
}

/// (H_P, H_Q) for the flow metered at `metered` end of the line joining
/// `metered` and `far`: P_mn + jQ_mn = V_m conj(I_mn).
inline std::pair<HermitianCoeff, HermitianCoeff> build_flow_matrices(const Network& net,
                                                                     BusId metered, BusId far) {
  const auto k = net.valid(metered) && net.valid(far) ? net.find_line(metered, far) : std::nullopt;
  if (!k) {
    throw std::out_of_range("no line between buses " + std::to_string(metered.number()) + " and " +
                            std::to_string(far.number()));
  }
  const Line& line = net.lines()[*k];
  const int n = net.n_buses();
  const int m = metered.index();
  Eigen::MatrixXcd ymn = Eigen::MatrixXcd::Zero(n, n);
  ymn(m, m) = line.shunt_at(metered) + line.series;
  ymn(m, far.index()) = -line.series;
  return {internal::real_part_form(ymn), internal::imag_part_form(ymn)};
}

/// e_n e_n^T
inline HermitianCoeff build_voltage_matrix(int n_buses, BusId bus) {
  if (bus.number() < 1 || bus.number() > n_buses) {
    throw std::out_of_range("voltage matrix requested for unknown bus " +
                            std::to_string(bus.number()));
  }
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(n_buses, n_buses);
  h(bus.index(), bus.index()) = 1.0;
  return HermitianCoeff(h);
}

}  // namespace rse
