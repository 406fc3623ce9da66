#pragma once

// Order measurement of discrete Lagrangians and their evolution operators against the exact ones,
// plus cross-checks of the exact discrete Lagrangian and long-run conservation monitors.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gvi/discrete.hpp"
#include "gvi/dynamics.hpp"
#include "gvi/error.hpp"
#include "gvi/exact.hpp"
#include "gvi/geometry.hpp"
#include "gvi/numerics.hpp"

namespace gvi {

/// Worker count: GVI_THREADS when set and positive, else the hardware concurrency.
inline int thread_count() {
  if (const char* env = std::getenv("GVI_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(std::min<long>(v, 256));
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n) on up to thread_count() workers. Each index writes only its own
/// slot, so results do not depend on scheduling. The first exception (by index) is rethrown.
template <class Body>
void parallel_for(int n, Body&& body) {
  const int workers = std::min(n, thread_count());
  std::vector<std::exception_ptr> errors(std::max(n, 0));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int i = next++; i < n; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<double> geometric_grid(double h_max, double ratio, int count) {
  if (!(h_max > 0.0) || !(ratio > 0.0 && ratio < 1.0) || count < 1) {
    throw Error(ErrorCode::InvalidArgument, "grid needs h_max > 0, 0 < ratio < 1, count >= 1");
  }
  std::vector<double> g(count);
  for (int i = 0; i < count; ++i) g[i] = h_max * std::pow(ratio, i);
  return g;
}

struct OrderFailure {
  double h = 0.0;
  ErrorCode code = ErrorCode::NoConvergence;
  std::string message;
};

struct OrderReport {
  std::string quantity;         // "dl", "flow" or "global"
  std::vector<double> h;        // as requested
  std::vector<double> errors;   // NaN where the solve failed
  std::vector<bool> used;       // entering the fit
  double floor = 0.0;
  int discarded = 0;            // finite points below the floor
  std::optional<LinearFit> fit;
  std::optional<double> tail_slope;  // fit over the three finest usable points
  std::optional<double> expected_slope;
  double slope_tolerance = 0.2;
  std::string verdict;          // exact | pass | fail | reported
  std::vector<OrderFailure> failures;

  double slope() const { return fit ? fit->slope : std::numeric_limits<double>::infinity(); }
  double slope_ci() const { return fit ? fit->ci95 : 0.0; }
  /// 95% interval of the fit plus the pre-asymptotic drift |slope - tail_slope|.
  double slope_uncertainty() const {
    return slope_ci() + (fit && tail_slope ? std::abs(fit->slope - *tail_slope) : 0.0);
  }
  bool exact() const { return verdict == "exact"; }
};

struct OrderOptions {
  ShootingConfig shooting{};
  EvolveConfig evolve{1e-12, 30, kMaxRegularityCondition};
  int quad_order = 10;
  std::optional<int> expected_order;  // r: DL errors O(h^{r+1}), one-step errors O(h^{r+1})
  double slope_tolerance = 0.2;
  double floor_factor = 100.0;        // floor = floor_factor * shooting residual tolerance
};

using SchemeFactory = std::function<DiscreteLagrangian(double h)>;
using ProbeFactory = std::function<std::vector<GroupoidElement>(double h)>;

namespace detail {

inline OrderReport finish_report(OrderReport rep, std::optional<double> expected, double tolerance) {
  rep.expected_slope = expected;
  rep.slope_tolerance = tolerance;
  std::vector<double> lx, ly;
  int finite = 0;
  rep.used.assign(rep.h.size(), false);
  for (std::size_t i = 0; i < rep.h.size(); ++i) {
    if (!std::isfinite(rep.errors[i])) continue;
    ++finite;
    if (rep.errors[i] < rep.floor) {
      ++rep.discarded;
      continue;
    }
    rep.used[i] = true;
    lx.push_back(std::log(rep.h[i]));
    ly.push_back(std::log(rep.errors[i]));
  }
  if (finite > 0 && lx.empty()) {
    rep.verdict = "exact";
    return rep;
  }
  if (lx.size() < 3) {
    throw Error(ErrorCode::InsufficientPoints,
                rep.quantity + " order fit has " + std::to_string(lx.size()) + " usable h values, needs 3");
  }
  rep.fit = fit_line(lx, ly);
  {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < lx.size(); ++i) pts.emplace_back(lx[i], ly[i]);
    std::sort(pts.begin(), pts.end());
    std::vector<double> tx, ty;
    for (std::size_t i = 0; i < 3; ++i) {
      tx.push_back(pts[i].first);
      ty.push_back(pts[i].second);
    }
    rep.tail_slope = fit_line(tx, ty).slope;
  }
  if (!expected) {
    rep.verdict = "reported";
  } else {
    rep.verdict = std::abs(rep.fit->slope - *expected) <= tolerance ? "pass" : "fail";
  }
  return rep;
}

inline OrderReport start_report(const std::string& quantity, const std::vector<double>& h_grid,
                                const OrderOptions& opt) {
  if (h_grid.empty()) throw Error(ErrorCode::InsufficientPoints, "empty h grid");
  OrderReport rep;
  rep.quantity = quantity;
  rep.h = h_grid;
  rep.errors.assign(h_grid.size(), std::numeric_limits<double>::quiet_NaN());
  rep.floor = opt.floor_factor * opt.shooting.residual_tol;
  return rep;
}

inline void collect_failures(OrderReport& rep, const std::vector<std::optional<OrderFailure>>& f) {
  for (const auto& x : f)
    if (x) rep.failures.push_back(*x);
}

/// Distance of `a` from `ref` in the chart at ref's target.
inline double chart_distance(const Instance& inst, const GroupoidElement& ref, const GroupoidElement& a) {
  return inst.target_coords(ref, a).norm();
}

}  // namespace detail

/// error(h) = max over probes of |Ld(g) - L_h^e(g)|.
inline OrderReport dl_order(const SchemeFactory& scheme, const LagrangianSystem& sys, const ProbeFactory& probes,
                            const std::vector<double>& h_grid, const OrderOptions& opt = {}) {
  OrderReport rep = detail::start_report("dl", h_grid, opt);
  std::vector<std::optional<OrderFailure>> failures(h_grid.size());
  parallel_for(static_cast<int>(h_grid.size()), [&](int i) {
    const double h = h_grid[i];
    try {
      const DiscreteLagrangian ld = scheme(h);
      double e = 0.0;
      for (const auto& g : probes(h)) {
        e = std::max(e, std::abs(ld(g) - exact_discrete_lagrangian(sys, g, h, opt.shooting, opt.quad_order)));
      }
      rep.errors[i] = e;
    } catch (const Error& err) {
      failures[i] = OrderFailure{h, err.code(), err.what()};
    }
  });
  detail::collect_failures(rep, failures);
  std::optional<double> expected;
  if (opt.expected_order) expected = *opt.expected_order + 1.0;
  return detail::finish_report(std::move(rep), expected, opt.slope_tolerance);
}

/// Local error of one evolve step from g = exp_h(a0), measured on the algebroid: the exact retraction
/// R-_h of the computed next arrow against flow_h(a0), which is R-_h of the exact next arrow. Max over a0.
inline OrderReport flow_order(const SchemeFactory& scheme, const LagrangianSystem& sys,
                              const std::vector<AlgebroidVector>& a0s, const std::vector<double>& h_grid,
                              const OrderOptions& opt = {}) {
  OrderReport rep = detail::start_report("flow", h_grid, opt);
  std::vector<std::optional<OrderFailure>> failures(h_grid.size());
  parallel_for(static_cast<int>(h_grid.size()), [&](int i) {
    const double h = h_grid[i];
    try {
      const DiscreteLagrangian ld = scheme(h);
      double e = 0.0;
      for (const auto& a0 : a0s) {
        const GroupoidElement g = exponential_map(sys, a0, h, opt.shooting.flow);
        const AlgebroidVector want = flow(sys, a0, h, opt.shooting.flow);
        const AlgebroidVector got = retraction_minus(sys, evolve(ld, g, opt.evolve), h, opt.shooting);
        e = std::max(e, std::hypot((got.fiber() - want.fiber()).norm(), (got.x - want.x).norm()));
      }
      rep.errors[i] = e;
    } catch (const Error& err) {
      failures[i] = OrderFailure{h, err.code(), err.what()};
    }
  });
  detail::collect_failures(rep, failures);
  std::optional<double> expected;
  if (opt.expected_order) expected = *opt.expected_order + 1.0;
  return detail::finish_report(std::move(rep), expected, opt.slope_tolerance);
}

/// Error after round(T / h) steps against the continuous flow sampled at the same time; expected slope r.
inline OrderReport global_order(const SchemeFactory& scheme, const LagrangianSystem& sys, const AlgebroidVector& a0,
                                double horizon, const std::vector<double>& h_grid, const OrderOptions& opt = {}) {
  OrderReport rep = detail::start_report("global", h_grid, opt);
  const Instance& inst = sys.instance();
  std::vector<std::optional<OrderFailure>> failures(h_grid.size());
  parallel_for(static_cast<int>(h_grid.size()), [&](int i) {
    const double h = h_grid[i];
    try {
      const int n = std::max(1, static_cast<int>(std::lround(horizon / h)));
      const DiscreteLagrangian ld = scheme(h);
      const DiscreteTrajectory tr = simulate(ld, exponential_map(sys, a0, h, opt.shooting.flow), n - 1, opt.evolve);
      if (tr.failed) throw Error(tr.error, tr.message);
      const AlgebroidVector at = flow(sys, a0, (n - 1) * h, opt.shooting.flow);
      rep.errors[i] = detail::chart_distance(inst, exponential_map(sys, at, h, opt.shooting.flow), tr.arrows.back());
    } catch (const Error& err) {
      failures[i] = OrderFailure{h, err.code(), err.what()};
    }
  });
  detail::collect_failures(rep, failures);
  std::optional<double> expected;
  if (opt.expected_order) expected = static_cast<double>(*opt.expected_order);
  return detail::finish_report(std::move(rep), expected, opt.slope_tolerance);
}

/// The one-step error may not decay slower than the discrete Lagrangian error, up to the fit intervals.
inline bool flow_order_dominates(const OrderReport& dl, const OrderReport& flow) {
  if (flow.exact()) return true;
  if (dl.exact()) return false;
  return flow.slope() + flow.slope_uncertainty() + dl.slope_uncertainty() >= dl.slope();
}

inline double momentum_distance(const Momentum& a, const Momentum& b) {
  return std::sqrt((a.coords() - b.coords()).squaredNorm() + (a.x - b.x).squaredNorm());
}

/// max over arrows of |F+ L_h^e(g) - Phi_h(F- L_h^e(g))| with Phi_h the Hamiltonian flow.
inline double theorem51_check(const LagrangianSystem& sys, const std::vector<GroupoidElement>& arrows, double h,
                              const ShootingConfig& cfg = {}) {
  std::vector<double> defect(arrows.size(), 0.0);
  parallel_for(static_cast<int>(arrows.size()), [&](int i) {
    const ShootingResult s = shoot(sys, arrows[i], h, cfg);
    const Momentum evolved = hamiltonian_flow(sys, legendre(sys, s.minus), h, cfg.flow);
    defect[i] = momentum_distance(legendre(sys, s.plus), evolved);
  });
  return defect.empty() ? 0.0 : *std::max_element(defect.begin(), defect.end());
}

struct PsiReduction {
  double value_defect = 0.0;     // |L~_h^e(g0, g1) - l_h^e(g0^-1 g1)|
  double momentum_defect = 0.0;  // F-/F+ of both sides in body coordinates
};

/// Compares the translated two-point problem g0 -> g1 against the reduced one I -> g0^-1 g1.
inline PsiReduction psi_reduction_check(const LagrangianSystem& sys, double h,
                                        const std::vector<std::pair<Matrix, Matrix>>& pairs,
                                        const ShootingConfig& cfg = {}, int quad_order = 10) {
  if (sys.instance().kind() != InstanceKind::group) {
    throw Error(ErrorCode::InvalidArgument, "psi reduction needs a group instance");
  }
  std::vector<PsiReduction> out(pairs.size());
  parallel_for(static_cast<int>(pairs.size()), [&](int i) {
    const auto& [g0, g1] = pairs[i];
    const ShootingResult full = shoot(sys, GroupoidElement::group(g1), h, cfg, g0);
    const ShootingResult red = shoot(sys, GroupoidElement::group(g0.inverse() * g1), h, cfg);
    out[i].value_defect = std::abs(action(sys, full.trajectory, quad_order) - action(sys, red.trajectory, quad_order));
    out[i].momentum_defect =
        std::max(momentum_distance(legendre(sys, full.minus), legendre(sys, red.minus)),
                 momentum_distance(legendre(sys, full.plus), legendre(sys, red.plus)));
  });
  PsiReduction r;
  for (const auto& o : out) {
    r.value_defect = std::max(r.value_defect, o.value_defect);
    r.momentum_defect = std::max(r.momentum_defect, o.momentum_defect);
  }
  return r;
}

struct ConservationReport {
  DiscreteTrajectory trajectory;
  std::vector<double> energy;
  std::vector<double> casimir;
  double energy_drift = 0.0;        // max |E_k - E_0|
  double casimir_drift = 0.0;       // max |C_k - C_0|
  double first_window_drift = 0.0;  // max |E_k - E_0| over the first `window` steps
};

inline ConservationReport conservation_report(const DiscreteLagrangian& ld, const GroupoidElement& g0, int n,
                                              int window = 0, const EvolveConfig& cfg = {1e-13, 30,
                                                                                       kMaxRegularityCondition}) {
  ConservationReport r;
  r.trajectory = simulate(ld, g0, n, cfg);
  r.energy = r.trajectory.energies;
  r.casimir = r.trajectory.casimirs;
  for (std::size_t k = 0; k < r.energy.size(); ++k) {
    const double d = std::abs(r.energy[k] - r.energy.front());
    r.energy_drift = std::max(r.energy_drift, d);
    if (static_cast<int>(k) <= window) r.first_window_drift = std::max(r.first_window_drift, d);
  }
  for (double c : r.casimir) r.casimir_drift = std::max(r.casimir_drift, std::abs(c - r.casimir.front()));
  return r;
}

}  // namespace gvi
