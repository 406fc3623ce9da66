#pragma once

// Batch front end: JSON experiment configs in, CSV series and JSON summaries out.
// Exit codes: 0 success, 1 configuration error, 2 numerical failure.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gvi/discrete.hpp"
#include "gvi/dynamics.hpp"
#include "gvi/errorlab.hpp"
#include "gvi/exact.hpp"
#include "gvi/geometry.hpp"
#include "gvi/schemes.hpp"
#include "gvi/systems.hpp"

namespace gvi::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kConfigError = 1, kNumericalFailure = 2 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Schema helpers

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

inline double number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  return j.get<double>();
}

inline double number_or(const json& j, const char* key, double fallback, const std::string& where) {
  return j.contains(key) ? number(j.at(key), where + "." + key) : fallback;
}

inline int integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw ConfigError(where + ": expected an integer");
  return j.get<int>();
}

inline int integer_or(const json& j, const char* key, int fallback, const std::string& where) {
  return j.contains(key) ? integer(j.at(key), where + "." + key) : fallback;
}

inline std::string text(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + ": expected a string");
  return j.get<std::string>();
}

inline bool flag_or(const json& j, const char* key, bool fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw ConfigError(where + "." + key + ": expected a boolean");
  return j.at(key).get<bool>();
}

inline Vector vec(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  Vector v(static_cast<int>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = number(j[i], where);
  return v;
}

inline Vector vec_or_empty(const json& j, const char* key, const std::string& where) {
  return j.contains(key) ? vec(j.at(key), where + "." + key) : Vector(0);
}

/// Row-major nested arrays.
inline Matrix mat(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw ConfigError(where + ": expected a matrix (array of rows)");
  const int rows = static_cast<int>(j.size()), cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols) throw ConfigError(where + ": ragged matrix");
    for (int c = 0; c < cols; ++c) m(r, c) = number(j[r][c], where);
  }
  return m;
}

inline AlgebraPtr algebra(const json& j, const std::string& where) {
  if (j.is_string()) {
    if (j.get<std::string>() == "so3") return LieAlgebra::so3();
    throw ConfigError(where + ": unknown algebra '" + j.get<std::string>() + "'");
  }
  check_keys(j, {"basis", "name"}, where);
  if (!j.contains("basis") || !j.at("basis").is_array()) throw ConfigError(where + ".basis: required");
  std::vector<Matrix> basis;
  for (std::size_t i = 0; i < j.at("basis").size(); ++i) basis.push_back(mat(j.at("basis")[i], where + ".basis"));
  try {
    return LieAlgebra::from_basis(std::move(basis), j.contains("name") ? text(j.at("name"), where + ".name") : "custom");
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline Instance instance(const json& j, const std::string& where) {
  check_keys(j, {"kind", "dim", "algebra", "base_dim"}, where);
  const std::string kind = text(j.value("kind", json()), where + ".kind");
  if (kind == "pair") return Instance::pair(integer(j.value("dim", json()), where + ".dim"));
  if (!j.contains("algebra")) throw ConfigError(where + ".algebra: required");
  const AlgebraPtr alg = algebra(j.at("algebra"), where + ".algebra");
  if (kind == "group") return Instance::group(alg);
  if (kind == "bundle") return Instance::bundle(alg, integer(j.value("base_dim", json()), where + ".base_dim"));
  throw ConfigError(where + ".kind: expected pair, group or bundle");
}

inline LagrangianSystem system(const json& j) {
  const std::string w = "system";
  if (!j.is_object() || !j.contains("name")) throw ConfigError("system.name: required");
  const std::string name = text(j.at("name"), w + ".name");
  try {
    if (name == "harmonic_oscillator") {
      check_keys(j, {"name", "dim", "omega"}, w);
      return systems::harmonic_oscillator(integer_or(j, "dim", 1, w), number_or(j, "omega", 1.0, w));
    }
    if (name == "free_particle") {
      check_keys(j, {"name", "dim"}, w);
      return systems::free_particle(integer_or(j, "dim", 1, w));
    }
    if (name == "pendulum") {
      check_keys(j, {"name", "omega"}, w);
      return systems::pendulum(number_or(j, "omega", 1.0, w));
    }
    if (name == "rigid_body") {
      check_keys(j, {"name", "inertia"}, w);
      const Vector i = j.contains("inertia") ? vec(j.at("inertia"), w + ".inertia") : Vector(Eigen::Vector3d(1, 2, 3));
      if (i.size() != 3) throw ConfigError("system.inertia: expected 3 entries");
      return systems::rigid_body(i(0), i(1), i(2));
    }
    if (name == "heavy_top_trivial_bundle") {
      check_keys(j, {"name", "inertia", "mass", "gravity", "coupling"}, w);
      const Vector i = j.contains("inertia") ? vec(j.at("inertia"), w + ".inertia") : Vector(Eigen::Vector3d(1, 2, 3));
      if (i.size() != 3) throw ConfigError("system.inertia: expected 3 entries");
      return systems::heavy_top_trivial_bundle(i, number_or(j, "mass", 1.0, w), number_or(j, "gravity", 9.81, w),
                                               number_or(j, "coupling", 0.2, w));
    }
    if (name == "quadratic") {
      check_keys(j, {"name", "instance", "mass", "potential"}, w);
      if (!j.contains("instance") || !j.contains("mass")) throw ConfigError("system: quadratic needs instance and mass");
      std::vector<std::vector<double>> pot;
      if (j.contains("potential")) {
        for (const auto& row : j.at("potential")) {
          const Vector r = vec(row, w + ".potential");
          pot.emplace_back(r.data(), r.data() + r.size());
        }
      }
      return systems::quadratic(instance(j.at("instance"), w + ".instance"), mat(j.at("mass"), w + ".mass"), pot);
    }
  } catch (const Error& e) {
    throw ConfigError("system: " + std::string(e.what()));
  }
  throw ConfigError("system.name: unknown system '" + name + "'");
}

inline TauKind tau_kind(const json& j, const std::string& where) {
  const std::string t = text(j, where);
  if (t == "exp") return TauKind::exp;
  if (t == "affine") return TauKind::affine;
  throw ConfigError(where + ": expected exp or affine");
}

inline ButcherTable table(const json& j, const std::string& where) {
  if (j.is_string()) {
    const std::string n = j.get<std::string>();
    if (n == "implicit_midpoint") return ButcherTable::implicit_midpoint();
    if (n == "gauss2") return ButcherTable::gauss2();
    if (n == "lobatto3a2") return ButcherTable::lobatto3a2();
    throw ConfigError(where + ": unknown table '" + n + "'");
  }
  check_keys(j, {"a", "b"}, where);
  if (!j.contains("a") || !j.contains("b")) throw ConfigError(where + ": needs a and b");
  ButcherTable t{mat(j.at("a"), where + ".a"), vec(j.at("b"), where + ".b")};
  try {
    t.validate();
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return t;
}

inline SchemeSpec scheme(const json& j) {
  const std::string w = "scheme";
  check_keys(j, {"kind", "alpha", "tau", "table", "expected_order"}, w);
  SchemeSpec s;
  const std::string kind = text(j.value("kind", json()), w + ".kind");
  const auto k = scheme_kind_from_string(kind);
  if (!k) throw ConfigError("scheme.kind: unknown scheme kind '" + kind + "'");
  s.kind = *k;
  s.alpha = number_or(j, "alpha", 0.5, w);
  if (!(s.alpha >= 0.0 && s.alpha <= 1.0)) throw ConfigError("scheme.alpha: must lie in [0, 1]");
  if (j.contains("tau")) s.tau = tau_kind(j.at("tau"), w + ".tau");
  if (j.contains("table")) s.table = table(j.at("table"), w + ".table");
  if (j.contains("expected_order")) s.expected_order = integer(j.at("expected_order"), w + ".expected_order");
  return s;
}

inline AlgebroidVector algebroid_vector(const json& j, const Instance& inst, const std::string& where) {
  check_keys(j, {"xi", "x", "xdot"}, where);
  AlgebroidVector a{vec_or_empty(j, "xi", where), vec_or_empty(j, "x", where), vec_or_empty(j, "xdot", where)};
  try {
    inst.check(a);
  } catch (const Error&) {
    throw ConfigError(where + ": dimensions do not match the instance");
  }
  return a;
}

inline GroupoidElement arrow(const json& j, const Instance& inst, const std::string& where) {
  check_keys(j, {"k", "x0", "x1"}, where);
  GroupoidElement g{j.contains("k") ? mat(j.at("k"), where + ".k") : Matrix(0, 0), vec_or_empty(j, "x0", where),
                    vec_or_empty(j, "x1", where)};
  if (!inst.contains(g)) throw ConfigError(where + ": not an arrow of the instance");
  return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment configuration

struct RandomArrows {
  int count = 20;
  double radius = 1.0;
  std::string from = "box";  // box: endpoints uniform in [-r, r]; flow: exp_h of a random a0 with |fiber| <= r
};

struct Tolerances {
  double flow = 1e-11;
  double shooting = 1e-12;
  double newton = 1e-10;
};

struct OrderBlock {
  double slope_tolerance = 0.2;
  double floor_factor = 100.0;
  std::optional<double> global_horizon;
};

struct CheckBlock {
  bool inject_sign_error = false;  // negative control: flips the F- convention in the transform check
  int pairs = 10;
  double pair_radius = 0.5;
};

struct ExperimentConfig {
  explicit ExperimentConfig(LagrangianSystem sys) : system(std::move(sys)) {}

  LagrangianSystem system;
  SchemeSpec scheme;
  std::optional<double> h;
  std::vector<double> h_grid;
  int steps = 0;
  std::optional<AlgebroidVector> a0;
  std::optional<GroupoidElement> arrow;
  std::vector<AlgebroidVector> probes;
  std::vector<GroupoidElement> arrows;
  std::optional<RandomArrows> random_arrows;
  Tolerances tol;
  OrderBlock order;
  CertifyConfig certify;
  CheckBlock check;
  std::uint64_t seed = 0;
  int quad_order = 10;

  ShootingConfig shooting() const {
    ShootingConfig c;
    c.residual_tol = tol.shooting;
    c.flow = FlowConfig{tol.flow, tol.flow, 200000};
    return c;
  }
  EvolveConfig evolve() const { return EvolveConfig{tol.newton, 30, kMaxRegularityCondition}; }
  double step() const {
    if (!h) throw ConfigError("h: required by this command");
    return *h;
  }
};

inline ExperimentConfig parse_config(const json& j) {
  detail::check_keys(j,
                     {"system", "scheme", "h", "h_grid", "steps", "initial", "probes", "arrows", "random_arrows",
                      "tolerances", "order", "certify", "check", "seed", "quad_order"},
                     "config");
  if (!j.contains("system")) throw ConfigError("system: required");
  ExperimentConfig c{detail::system(j.at("system"))};
  const Instance& inst = c.system.instance();
  if (j.contains("scheme")) {
    c.scheme = detail::scheme(j.at("scheme"));
  } else {
    c.scheme.kind = inst.kind() == InstanceKind::pair    ? SchemeKind::midpoint_pair
                    : inst.kind() == InstanceKind::group ? SchemeKind::tau_alpha
                                                         : SchemeKind::bundle_product;
  }
  if (j.contains("h")) {
    c.h = detail::number(j.at("h"), "h");
    if (!(*c.h > 0.0)) throw ConfigError("h: must be positive");
  }
  if (j.contains("h_grid")) {
    const Vector g = detail::vec(j.at("h_grid"), "h_grid");
    for (int i = 0; i < g.size(); ++i) {
      if (!(g(i) > 0.0)) throw ConfigError("h_grid: entries must be positive");
      c.h_grid.push_back(g(i));
    }
  }
  c.steps = detail::integer_or(j, "steps", 0, "config");
  if (c.steps < 0) throw ConfigError("steps: must be non-negative");
  if (j.contains("initial")) {
    const json& ini = j.at("initial");
    detail::check_keys(ini, {"a0", "arrow"}, "initial");
    if (ini.contains("a0")) c.a0 = detail::algebroid_vector(ini.at("a0"), inst, "initial.a0");
    if (ini.contains("arrow")) c.arrow = detail::arrow(ini.at("arrow"), inst, "initial.arrow");
    if (c.a0 && c.arrow) throw ConfigError("initial: give a0 or arrow, not both");
  }
  if (j.contains("probes")) {
    if (!j.at("probes").is_array()) throw ConfigError("probes: expected an array");
    for (const auto& p : j.at("probes")) c.probes.push_back(detail::algebroid_vector(p, inst, "probes[]"));
  }
  if (j.contains("arrows")) {
    if (!j.at("arrows").is_array()) throw ConfigError("arrows: expected an array");
    for (const auto& a : j.at("arrows")) c.arrows.push_back(detail::arrow(a, inst, "arrows[]"));
  }
  if (j.contains("random_arrows")) {
    const json& r = j.at("random_arrows");
    detail::check_keys(r, {"count", "radius", "from"}, "random_arrows");
    RandomArrows ra;
    ra.count = detail::integer_or(r, "count", ra.count, "random_arrows");
    ra.radius = detail::number_or(r, "radius", ra.radius, "random_arrows");
    if (r.contains("from")) ra.from = detail::text(r.at("from"), "random_arrows.from");
    if (ra.from != "box" && ra.from != "flow") throw ConfigError("random_arrows.from: expected box or flow");
    if (ra.count < 0 || !(ra.radius > 0.0)) throw ConfigError("random_arrows: count >= 0 and radius > 0 required");
    c.random_arrows = ra;
  }
  if (j.contains("tolerances")) {
    const json& t = j.at("tolerances");
    detail::check_keys(t, {"flow", "shooting", "newton"}, "tolerances");
    c.tol.flow = detail::number_or(t, "flow", c.tol.flow, "tolerances");
    c.tol.shooting = detail::number_or(t, "shooting", c.tol.shooting, "tolerances");
    c.tol.newton = detail::number_or(t, "newton", c.tol.newton, "tolerances");
    if (!(c.tol.flow > 0 && c.tol.shooting > 0 && c.tol.newton > 0)) throw ConfigError("tolerances: must be positive");
  }
  if (j.contains("order")) {
    const json& o = j.at("order");
    detail::check_keys(o, {"slope_tolerance", "floor_factor", "global_horizon"}, "order");
    c.order.slope_tolerance = detail::number_or(o, "slope_tolerance", c.order.slope_tolerance, "order");
    c.order.floor_factor = detail::number_or(o, "floor_factor", c.order.floor_factor, "order");
    if (o.contains("global_horizon")) c.order.global_horizon = detail::number(o.at("global_horizon"), "order.global_horizon");
  }
  if (j.contains("certify")) {
    const json& q = j.at("certify");
    detail::check_keys(q, {"R0", "R1", "target_radius", "samples", "h_max", "grid_per_unit", "inflation", "center"},
                       "certify");
    CertifyConfig& k = c.certify;
    k.R0 = detail::number_or(q, "R0", k.R0, "certify");
    k.R1 = detail::number_or(q, "R1", k.R1, "certify");
    k.target_radius = detail::number_or(q, "target_radius", k.target_radius, "certify");
    k.samples = detail::integer_or(q, "samples", k.samples, "certify");
    k.h_max = detail::number_or(q, "h_max", k.h_max, "certify");
    k.grid_per_unit = detail::integer_or(q, "grid_per_unit", k.grid_per_unit, "certify");
    k.inflation = detail::number_or(q, "inflation", k.inflation, "certify");
    if (q.contains("center")) k.center = detail::vec(q.at("center"), "certify.center");
  }
  if (j.contains("check")) {
    const json& k = j.at("check");
    detail::check_keys(k, {"inject_sign_error", "pairs", "pair_radius"}, "check");
    c.check.inject_sign_error = detail::flag_or(k, "inject_sign_error", false, "check");
    c.check.pairs = detail::integer_or(k, "pairs", c.check.pairs, "check");
    c.check.pair_radius = detail::number_or(k, "pair_radius", c.check.pair_radius, "check");
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed: expected a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.quad_order = detail::integer_or(j, "quad_order", 10, "config");
  if (c.quad_order < 1 || c.quad_order > 64) throw ConfigError("quad_order: must lie in [1, 64]");
  c.certify.seed = c.seed;
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Output helpers

namespace detail {

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline void append(std::vector<std::string>& row, const Vector& v) {
  for (int i = 0; i < v.size(); ++i) row.push_back(num(v(i)));
}

inline void append_nan(std::vector<std::string>& row, int n) {
  for (int i = 0; i < n; ++i) row.emplace_back("nan");
}

inline void names(std::vector<std::string>& h, const std::string& prefix, int n) {
  for (int i = 0; i < n; ++i) h.push_back(prefix + std::to_string(i));
}

/// Arrow coordinates: log k (group factor), then x0, x1.
inline std::vector<std::string> arrow_header(const Instance& inst) {
  std::vector<std::string> h;
  names(h, "logk_", inst.algebra_dim());
  names(h, "x0_", inst.base_dim());
  names(h, "x1_", inst.base_dim());
  return h;
}

inline Vector arrow_coords(const Instance& inst, const GroupoidElement& g) {
  return concat(inst.has_group() ? inst.group_log(g.k) : Vector(0), concat(g.x0, g.x1));
}

inline json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json fit_json(const OrderReport& r) {
  json j;
  j["quantity"] = r.quantity;
  j["verdict"] = r.verdict;
  j["floor"] = r.floor;
  j["discarded"] = r.discarded;
  j["h"] = r.h;
  std::vector<json> errs;
  for (double e : r.errors) errs.push_back(std::isfinite(e) ? json(e) : json(nullptr));
  j["errors"] = errs;
  if (r.expected_slope) j["expected_slope"] = *r.expected_slope;
  j["slope_tolerance"] = r.slope_tolerance;
  if (r.fit) {
    j["slope"] = r.fit->slope;
    j["intercept"] = r.fit->intercept;
    j["slope_stderr"] = r.fit->slope_stderr;
    j["slope_ci95"] = r.fit->ci95;
    if (r.tail_slope) j["tail_slope"] = *r.tail_slope;
    j["slope_uncertainty"] = r.slope_uncertainty();
  }
  std::vector<json> fails;
  for (const auto& f : r.failures) fails.push_back({{"h", f.h}, {"error", to_string(f.code)}, {"message", f.message}});
  j["failures"] = fails;
  return j;
}

inline Vector random_in_ball(std::mt19937_64& rng, int n, double r) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (n == 0) return Vector(0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v * (r * std::pow(u(rng), 1.0 / n) / v.norm());
}

inline Vector random_in_box(std::mt19937_64& rng, int n, double r) {
  std::uniform_real_distribution<double> u(-r, r);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

}  // namespace detail

/// Listed arrows followed by the configured random ones (seeded).
inline std::vector<GroupoidElement> collect_arrows(const ExperimentConfig& c, double h) {
  std::vector<GroupoidElement> out = c.arrows;
  if (!c.random_arrows) return out;
  const Instance& inst = c.system.instance();
  std::mt19937_64 rng(c.seed);
  const RandomArrows& ra = *c.random_arrows;
  for (int i = 0; i < ra.count; ++i) {
    if (ra.from == "flow") {
      const Vector x = detail::random_in_box(rng, inst.base_dim(), ra.radius);
      const Vector y = detail::random_in_ball(rng, inst.fiber_dim(), ra.radius);
      out.push_back(exponential_map(c.system, AlgebroidVector::from_fiber(x, y, inst.algebra_dim()), h,
                                    c.shooting().flow));
    } else {
      const Matrix k = inst.has_group() ? inst.group_exp(detail::random_in_ball(rng, inst.algebra_dim(), ra.radius))
                                        : Matrix(0, 0);
      const Vector x0 = detail::random_in_box(rng, inst.base_dim(), ra.radius);
      const Vector x1 = detail::random_in_box(rng, inst.base_dim(), ra.radius);
      out.push_back(GroupoidElement{k, x0, x1});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

/// trajectory.csv: one row per evolved arrow g_1 .. g_N; summary.json.
inline int cmd_simulate(const ExperimentConfig& c, const fs::path& out) {
  const Instance& inst = c.system.instance();
  const double h = c.step();
  if (!c.a0 && !c.arrow) throw ConfigError("initial: simulate needs a0 or arrow");
  const DiscreteLagrangian ld = make_scheme(c.system, c.scheme, h, c.shooting());
  const GroupoidElement g0 = c.arrow ? *c.arrow : exponential_map(c.system, *c.a0, h, c.shooting().flow);
  const DiscreteTrajectory tr = simulate(ld, g0, c.steps, c.evolve());

  const bool casimir = has_casimir(inst);
  std::vector<std::string> header{"step"};
  for (const auto& s : detail::arrow_header(inst)) header.push_back(s);
  detail::names(header, "mu_", inst.algebra_dim());
  detail::names(header, "p_", inst.base_dim());
  header.emplace_back("energy");
  if (casimir) header.emplace_back("casimir");
  detail::Csv csv(out / "trajectory.csv", header);
  double drift = 0.0, cdrift = 0.0;
  for (std::size_t k = 1; k < tr.arrows.size(); ++k) {
    std::vector<std::string> row{std::to_string(k)};
    detail::append(row, detail::arrow_coords(inst, tr.arrows[k]));
    detail::append(row, tr.momenta[k].coords());
    row.push_back(detail::num(tr.energies[k]));
    if (casimir) row.push_back(detail::num(tr.casimirs[k]));
    csv.row(row);
    drift = std::max(drift, std::abs(tr.energies[k] - tr.energies[0]));
    if (casimir) cdrift = std::max(cdrift, std::abs(tr.casimirs[k] - tr.casimirs[0]));
  }
  json s;
  s["command"] = "simulate";
  s["system"] = c.system.name();
  s["scheme"] = to_string(c.scheme.kind);
  s["h"] = h;
  s["steps_requested"] = c.steps;
  s["steps_completed"] = static_cast<int>(tr.arrows.size()) - 1;
  s["failed"] = tr.failed;
  if (tr.failed) {
    s["error"] = to_string(tr.error);
    s["message"] = tr.message;
  }
  if (!tr.energies.empty()) {
    s["initial_energy"] = tr.energies.front();
    s["max_energy_deviation"] = drift;
  }
  if (casimir && !tr.casimirs.empty()) s["max_casimir_deviation"] = cdrift;
  detail::write_json(out / "summary.json", s);
  return tr.failed ? kNumericalFailure : kOk;
}

/// order.csv (per quantity and h) and report.json.
inline int cmd_order(const ExperimentConfig& c, const fs::path& out) {
  if (c.probes.empty()) throw ConfigError("probes: order needs at least one a0 probe");
  if (c.h_grid.empty()) throw ConfigError("h_grid: required by order");
  OrderOptions opt;
  opt.shooting = c.shooting();
  opt.evolve = c.evolve();
  opt.quad_order = c.quad_order;
  opt.expected_order = c.scheme.expected_order;
  opt.slope_tolerance = c.order.slope_tolerance;
  opt.floor_factor = c.order.floor_factor;
  const SchemeFactory factory = [&c](double h) { return make_scheme(c.system, c.scheme, h, c.shooting()); };
  const ProbeFactory probes = [&c](double h) {
    std::vector<GroupoidElement> g;
    for (const auto& a : c.probes) g.push_back(exponential_map(c.system, a, h, c.shooting().flow));
    return g;
  };
  json report;
  report["command"] = "order";
  report["system"] = c.system.name();
  report["scheme"] = to_string(c.scheme.kind);
  if (c.scheme.expected_order) report["expected_order"] = *c.scheme.expected_order;
  report["note"] = "power-law scaling only; smoothness of the error term is not certified";
  std::vector<OrderReport> reports;
  int code = kOk;
  try {
    reports.push_back(dl_order(factory, c.system, probes, c.h_grid, opt));
    reports.push_back(flow_order(factory, c.system, c.probes, c.h_grid, opt));
    if (c.order.global_horizon) {
      reports.push_back(global_order(factory, c.system, c.probes.front(), *c.order.global_horizon, c.h_grid, opt));
    }
    report["dl"] = detail::fit_json(reports[0]);
    if (reports[0].fit) report["dl"]["order"] = reports[0].fit->slope - 1.0;
    report["flow"] = detail::fit_json(reports[1]);
    if (reports.size() > 2) report["global"] = detail::fit_json(reports[2]);
    report["flow_dominates_dl"] = flow_order_dominates(reports[0], reports[1]);
    const bool pass = (reports[0].verdict == "pass" || reports[0].verdict == "exact") &&
                      (reports[1].verdict == "pass" || reports[1].verdict == "exact");
    report["verdict"] = reports[0].exact() && reports[1].exact() ? "exact"
                        : !opt.expected_order                     ? "reported"
                        : pass                                    ? "pass"
                                                                  : "fail";
  } catch (const Error& e) {
    report["error"] = to_string(e.code());
    report["message"] = e.what();
    report["verdict"] = "error";
    code = kNumericalFailure;
  }
  detail::Csv csv(out / "order.csv", {"quantity", "h", "error", "used"});
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.h.size(); ++i) {
      csv.row({r.quantity, detail::num(r.h[i]), detail::num(r.errors[i]), r.used[i] ? "1" : "0"});
    }
  detail::write_json(out / "report.json", report);
  return code;
}

/// exact.csv: value and exact Legendre momenta per arrow; failed rows carry the error code.
inline int cmd_exact(const ExperimentConfig& c, const fs::path& out) {
  const Instance& inst = c.system.instance();
  const double h = c.step();
  const std::vector<GroupoidElement> arrows = collect_arrows(c, h);
  struct Row {
    std::optional<ExactEvaluation> eval;
    std::string status = "ok";
  };
  std::vector<Row> rows(arrows.size());
  parallel_for(static_cast<int>(arrows.size()), [&](int i) {
    try {
      rows[i].eval = exact_evaluate(c.system, arrows[i], h, c.shooting(), c.quad_order);
    } catch (const Error& e) {
      rows[i].status = to_string(e.code());
    }
  });
  std::vector<std::string> header{"index"};
  for (const auto& s : detail::arrow_header(inst)) header.push_back(s);
  header.emplace_back("value");
  const int d = inst.fiber_dim();
  detail::names(header, "minus_", d);
  detail::names(header, "plus_", d);
  header.emplace_back("iterations");
  header.emplace_back("status");
  detail::Csv csv(out / "exact.csv", header);
  int failed = 0;
  for (std::size_t i = 0; i < arrows.size(); ++i) {
    std::vector<std::string> row{std::to_string(i)};
    try {
      detail::append(row, detail::arrow_coords(inst, arrows[i]));
    } catch (const Error&) {
      detail::append_nan(row, inst.algebra_dim() + 2 * inst.base_dim());
    }
    if (rows[i].eval) {
      row.push_back(detail::num(rows[i].eval->value));
      detail::append(row, rows[i].eval->minus.coords());
      detail::append(row, rows[i].eval->plus.coords());
      row.push_back(std::to_string(rows[i].eval->shooting.iterations));
    } else {
      ++failed;
      detail::append_nan(row, 1 + 2 * d);
      row.emplace_back("");
    }
    row.push_back(rows[i].status);
    csv.row(row);
  }
  json s;
  s["command"] = "exact";
  s["system"] = c.system.name();
  s["h"] = h;
  s["arrows"] = static_cast<int>(arrows.size());
  s["failed"] = failed;
  detail::write_json(out / "summary.json", s);
  return failed ? kNumericalFailure : kOk;
}

inline int cmd_certify(const ExperimentConfig& c, const fs::path& out) {
  json s;
  s["command"] = "certify";
  s["system"] = c.system.name();
  int code = kOk;
  try {
    const ConvexityCertificate k = certify_h0(c.system, c.certify);
    s["h0"] = k.h0;
    s["R"] = k.R;
    s["M"] = k.M;
    s["theta1"] = k.theta1;
    s["theta2"] = k.theta2;
    s["R0"] = k.R0;
    s["R1"] = k.R1;
    s["target_radius"] = c.certify.target_radius;
    s["exact_constants"] = k.exact_constants;
    s["heuristic"] = k.heuristic;
    s["unbounded"] = k.unbounded;
    s["theta_condition"] = k.theta_condition;
    s["position_condition"] = k.position_condition;
    s["velocity_condition"] = k.velocity_condition;
  } catch (const Error& e) {
    s["error"] = to_string(e.code());
    s["message"] = e.what();
    code = kNumericalFailure;
  }
  detail::write_json(out / "certificate.json", s);
  return code;
}

namespace detail {

inline json check_entry(const std::string& name, double defect, double threshold) {
  return {{"name", name}, {"defect", defect}, {"threshold", threshold}, {"pass", defect <= threshold}};
}

/// fd Jacobian J of the discrete Hamiltonian map at mu; returns |J^T Omega J - Omega|.
inline double symplectic_defect(const DiscreteLagrangian& ld, const Momentum& mu, const EvolveConfig& cfg) {
  const int n = static_cast<int>(mu.x.size());
  auto map = [&](const Vector& z) {
    const Momentum m = hamiltonian_evolve(ld, Momentum{Vector(0), z.head(n), z.tail(n)}, cfg);
    return concat(m.x, m.p);
  };
  const Vector z0 = concat(mu.x, mu.p);
  Matrix jac(2 * n, 2 * n);
  const double e = 1e-5;
  for (int j = 0; j < 2 * n; ++j) {
    Vector zp = z0, zm = z0;
    zp(j) += e;
    zm(j) -= e;
    jac.col(j) = (map(zp) - map(zm)) / (2 * e);
  }
  Matrix omega = Matrix::Zero(2 * n, 2 * n);
  omega.topRightCorner(n, n) = Matrix::Identity(n, n);
  omega.bottomLeftCorner(n, n) = -Matrix::Identity(n, n);
  return (jac.transpose() * omega * jac - omega).norm();
}

}  // namespace detail

/// check.json: exact-DL identities and structure preservation of the configured scheme.
/// Thresholds scale linearly with the shooting tolerance above its default.
inline int cmd_check(const ExperimentConfig& c, const fs::path& out) {
  const Instance& inst = c.system.instance();
  const double h = c.step();
  const ShootingConfig sc = c.shooting();
  const double scale = std::max(1.0, c.tol.shooting / 1e-12);
  std::vector<GroupoidElement> arrows = collect_arrows(c, h);
  if (arrows.empty()) throw ConfigError("arrows: check needs arrows or random_arrows");
  json s;
  s["command"] = "check";
  s["system"] = c.system.name();
  s["h"] = h;
  s["threshold_scale"] = scale;
  std::vector<json> checks;
  int code = kOk;
  try {
    const double t51 = inst.kind() == InstanceKind::pair ? 1e-8 : 1e-7;
    checks.push_back(detail::check_entry("theorem51", theorem51_check(c.system, arrows, h, sc), t51 * scale));

    // exact transforms FL o R-/+ against differences of the exact discrete Lagrangian
    const DiscreteLagrangian value_only(
        inst, h, [&](const GroupoidElement& g) { return exact_discrete_lagrangian(c.system, g, h, sc, c.quad_order); },
        "exact_values");
    const double sign = c.check.inject_sign_error ? -1.0 : 1.0;
    std::vector<double> t55(arrows.size(), 0.0);
    parallel_for(static_cast<int>(arrows.size()), [&](int i) {
      const ExactEvaluation e = exact_evaluate(c.system, arrows[i], h, sc, c.quad_order);
      const Vector fm = sign * dlegendre_minus(value_only, arrows[i]).coords();
      const Vector fp = dlegendre_plus(value_only, arrows[i]).coords();
      t55[i] = std::max((fm - e.minus.coords()).norm(), (fp - e.plus.coords()).norm());
    });
    checks.push_back(detail::check_entry("legendre_consistency", *std::max_element(t55.begin(), t55.end()), 1e-6 * scale));

    if (inst.kind() == InstanceKind::group) {
      std::mt19937_64 rng(c.seed + 1);
      std::vector<std::pair<Matrix, Matrix>> pairs;
      for (int i = 0; i < c.check.pairs; ++i) {
        const Matrix g0 = inst.group_exp(detail::random_in_ball(rng, inst.algebra_dim(), 2.0));
        pairs.emplace_back(g0, g0 * inst.group_exp(detail::random_in_ball(rng, inst.algebra_dim(), c.check.pair_radius)));
      }
      const PsiReduction r = psi_reduction_check(c.system, h, pairs, sc, c.quad_order);
      checks.push_back(detail::check_entry("psi_reduction", r.value_defect, 1e-7 * scale));
    }

    const DiscreteLagrangian ld = make_scheme(c.system, c.scheme, h, sc);
    if (inst.kind() == InstanceKind::pair) {
      EvolveConfig tight = c.evolve();
      tight.residual_tol = std::min(tight.residual_tol, 1e-12);
      checks.push_back(detail::check_entry("symplecticity",
                                           detail::symplectic_defect(ld, dlegendre_minus(ld, arrows.front()), tight),
                                           1e-5));
    } else if (has_casimir(inst)) {
      EvolveConfig tight = c.evolve();
      tight.residual_tol = std::min(tight.residual_tol, 1e-13);
      double worst = 0.0;
      for (const auto& g : arrows) {
        const Momentum mu = dlegendre_minus(ld, g);
        const Momentum next = hamiltonian_evolve(ld, mu, tight);
        worst = std::max(worst, std::abs(next.mu.norm() - mu.mu.norm()));
      }
      checks.push_back(detail::check_entry("casimir_per_step", worst, 1e-8));
    }
  } catch (const Error& e) {
    s["error"] = to_string(e.code());
    s["message"] = e.what();
    code = kNumericalFailure;
  }
  bool pass = code == kOk;
  for (const auto& k : checks) pass = pass && k["pass"].get<bool>();
  s["checks"] = checks;
  s["pass"] = pass;
  detail::write_json(out / "check.json", s);
  return pass ? kOk : kNumericalFailure;
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> n{"simulate", "order", "exact", "certify", "check"};
  return n;
}

/// Loads the config, runs the command into `out` (created if needed) and maps failures to exit codes.
inline int run_command(const std::string& command, const fs::path& config, const fs::path& out,
                       std::ostream& err = std::cerr) {
  ExperimentConfig c = [&] {
    try {
      return load_config(config);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }();
  try {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
      err << "error: cannot create output directory " << out << ": " << ec.message() << '\n';
      return kConfigError;
    }
    if (command == "simulate") return cmd_simulate(c, out);
    if (command == "order") return cmd_order(c, out);
    if (command == "exact") return cmd_exact(c, out);
    if (command == "certify") return cmd_certify(c, out);
    if (command == "check") return cmd_check(c, out);
    err << "error: unknown command '" << command << "'\n";
    return kConfigError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const Error& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  }
}

/// run_command with config errors reported rather than thrown.
inline int run(const std::string& command, const fs::path& config, const fs::path& out, std::ostream& err = std::cerr) {
  try {
    return run_command(command, config, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace gvi::cli
