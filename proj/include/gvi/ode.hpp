#pragma once

// Dormand-Prince 5(4) with the standard continuous extension. Used for every
// continuous flow in the library: the Euler-Lagrange/Poincare vector field, the
// group reconstruction equation and Hamilton's equations on the dual.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "gvi/error.hpp"
#include "gvi/numerics.hpp"

namespace gvi {

struct OdeOptions {
  double abs_tol = 1e-11;
  double rel_tol = 1e-11;
  int max_steps = 200000;
  bool dense = true;
};

using OdeRhs = std::function<Vector(double, const Vector&)>;
/// Applied to the state after every accepted step (e.g. projection onto a manifold).
using StepHook = std::function<void(Vector&)>;

class DenseSolution {
 public:
  struct Segment {
    double t = 0.0;
    double h = 0.0;
    Vector r1, r2, r3, r4, r5;
  };

  double t_begin() const { return t0_; }
  double t_end() const { return t1_; }
  const Vector& final_state() const { return final_; }
  int accepted_steps() const { return accepted_; }
  int rejected_steps() const { return rejected_; }
  bool has_dense_output() const { return !segments_.empty() || t0_ == t1_; }

  /// State at time t in [t_begin, t_end] from the step's interpolant.
  Vector at(double t) const {
    if (t0_ == t1_) return final_;
    if (segments_.empty()) throw Error(ErrorCode::InvalidArgument, "solution was computed without dense output");
    const double dir = t1_ > t0_ ? 1.0 : -1.0;
    if (dir * (t - t0_) < -1e-12 * std::abs(t1_ - t0_) || dir * (t - t1_) > 1e-12 * std::abs(t1_ - t0_)) {
      throw Error(ErrorCode::InvalidArgument, "dense output queried outside the integration interval");
    }
    // last segment whose start precedes t
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t, [dir](double value, const Segment& s) {
      return dir * value < dir * s.t;
    });
    if (it != segments_.begin()) --it;
    const Segment& s = *it;
    const double theta = (t - s.t) / s.h;
    const double theta1 = 1.0 - theta;
    return s.r1 + theta * (s.r2 + theta1 * (s.r3 + theta * (s.r4 + theta1 * s.r5)));
  }

 private:
  friend DenseSolution integrate_dopri5(const OdeRhs&, double, const Vector&, double, const OdeOptions&,
                                        const StepHook&);
  double t0_ = 0.0, t1_ = 0.0;
  Vector final_;
  std::vector<Segment> segments_;
  int accepted_ = 0;
  int rejected_ = 0;
};

inline DenseSolution integrate_dopri5(const OdeRhs& f, double t0, const Vector& z0, double t1,
                                      const OdeOptions& opt, const StepHook& hook = {}) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                          a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
  static constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                          d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                          d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

  DenseSolution sol;
  sol.t0_ = t0;
  sol.t1_ = t1;
  Vector z = z0;
  if (hook) hook(z);
  if (t1 == t0) {
    sol.final_ = z;
    return sol;
  }
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  const auto n = z.size();

  auto scale = [&](const Vector& a, const Vector& b) {
    return (opt.abs_tol + opt.rel_tol * a.cwiseAbs().cwiseMax(b.cwiseAbs()).array()).matrix();
  };
  auto rms = [n](const Vector& v) { return n == 0 ? 0.0 : std::sqrt(v.squaredNorm() / static_cast<double>(n)); };

  Vector k1 = f(t0, z);
  // initial step guess
  double h;
  {
    const Vector sc = scale(z, z);
    const double dz0 = rms(z.cwiseQuotient(sc));
    const double df0 = rms(k1.cwiseQuotient(sc));
    double h0 = (dz0 < 1e-5 || df0 < 1e-5) ? 1e-6 : 0.01 * dz0 / df0;
    h0 = std::min(h0, span);
    const Vector z1 = z + dir * h0 * k1;
    const Vector f1 = f(t0 + dir * h0, z1);
    const double d2 = rms((f1 - k1).cwiseQuotient(sc)) / h0;
    const double dm = std::max(df0, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
    h = std::min({100.0 * h0, h1, span});
  }

  double t = t0;
  bool last_rejected = false;
  int steps = 0;
  while (dir * (t1 - t) > 0.0) {
    if (++steps > opt.max_steps) {
      throw Error(ErrorCode::StepFailure, "exceeded " + std::to_string(opt.max_steps) + " steps");
    }
    if (h < 1e-14 * std::max(1.0, std::abs(t))) throw Error(ErrorCode::StepFailure, "step size underflow");
    bool final_step = false;
    if (h >= std::abs(t1 - t)) {
      h = std::abs(t1 - t);
      final_step = true;
    }
    const double hs = dir * h;
    const Vector k2 = f(t + c2 * hs, z + hs * (a21 * k1));
    const Vector k3 = f(t + c3 * hs, z + hs * (a31 * k1 + a32 * k2));
    const Vector k4 = f(t + c4 * hs, z + hs * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vector k5 = f(t + c5 * hs, z + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Vector k6 = f(t + hs, z + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vector znew = z + hs * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    const double tnew = final_step ? t1 : t + hs;
    const Vector k7 = f(tnew, znew);
    const Vector err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double en = rms(err.cwiseQuotient(scale(z, znew)));

    if (!std::isfinite(en)) {
      h *= 0.2;
      last_rejected = true;
      ++sol.rejected_;
      continue;
    }
    if (en <= 1.0) {
      if (opt.dense) {
        DenseSolution::Segment s;
        s.t = t;
        s.h = hs;
        s.r1 = z;
        s.r2 = znew - z;
        s.r3 = hs * k1 - s.r2;
        s.r4 = s.r2 - hs * k7 - s.r3;
        s.r5 = hs * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
        sol.segments_.push_back(std::move(s));
      }
      if (hook) hook(znew);
      z = std::move(znew);
      k1 = k7;
      t = tnew;
      ++sol.accepted_;
      double fac = en == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 10.0);
      if (last_rejected) fac = std::min(fac, 1.0);
      h *= fac;
      last_rejected = false;
    } else {
      h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
      last_rejected = true;
      ++sol.rejected_;
    }
  }
  sol.final_ = z;
  return sol;
}

}  // namespace gvi
