#pragma once

// The exact discrete Lagrangian: the action of the unique trajectory that
// connects the endpoints of an arrow in time h. The connecting trajectory is
// found by shooting on the initial fiber value, with the residual measured in
// the chart centred at the target arrow.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "gvi/dynamics.hpp"
#include "gvi/error.hpp"
#include "gvi/geometry.hpp"
#include "gvi/numerics.hpp"

namespace gvi {

enum class JacobianMode { finite_difference, none };

struct ShootingConfig {
  double residual_tol = 1e-12;
  int max_newton_iters = 30;
  JacobianMode jacobian = JacobianMode::finite_difference;
  double damping = 1.0;  // initial Newton step fraction
  FlowConfig flow{};
};

/// Arrow reached from a0 by the flow in time h (the SODE exponential map).
inline GroupoidElement exponential_map(const LagrangianSystem& sys, const AlgebroidVector& a0, double h,
                                       const FlowConfig& cfg = {}) {
  return groupoid_reconstruction(sys, a0, h, cfg, std::nullopt, false).arrow;
}

struct ShootingResult {
  AlgebroidVector minus;  // initial value of the connecting trajectory
  AlgebroidVector plus;   // final value
  FlowTrajectory trajectory;
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

struct ShootingTrial {
  Vector residual;
  std::optional<Reconstruction> rec;
};

}  // namespace detail

/// Solves exponential_map(a, h) = g for a over the source of g. With `start`, the group factor is
/// reconstructed from k(0) = start and must reach g.k itself (a translated left-invariant problem).
inline ShootingResult shoot(const LagrangianSystem& sys, const GroupoidElement& g, double h,
                            const ShootingConfig& cfg = {}, const std::optional<Matrix>& start = std::nullopt) {
  const Instance& inst = sys.instance();
  inst.check(g);
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "shooting needs h > 0");
  const int na = inst.algebra_dim();
  const int d = inst.fiber_dim();
  const Matrix k0 = start ? *start : inst.group_identity();
  const GroupoidElement target{g.k, g.x0, g.x1};

  auto evaluate = [&](const Vector& y) {
    detail::ShootingTrial trial;
    auto rec = groupoid_reconstruction(sys, AlgebroidVector::from_fiber(g.x0, y, na), h, cfg.flow, k0, true);
    trial.residual = inst.target_coords(target, rec.arrow);
    trial.rec.emplace(std::move(rec));
    return trial;
  };

  Vector y(d);
  if (na > 0) y.head(na) = inst.group_log(k0.inverse() * g.k) / h;
  y.tail(inst.base_dim()) = (g.x1 - g.x0) / h;

  detail::ShootingTrial current = evaluate(y);
  double rnorm = current.residual.norm();
  int it = 0;
  for (; rnorm > cfg.residual_tol; ++it) {
    if (it >= cfg.max_newton_iters) {
      throw Error(ErrorCode::NoConvergence, "shooting residual " + std::to_string(rnorm) + " after " +
                                                std::to_string(it) + " iterations");
    }
    Matrix jac;
    if (cfg.jacobian == JacobianMode::finite_difference) {
      jac.resize(d, d);
      const double step = 1e-6 * (1.0 + y.norm());
      for (int j = 0; j < d; ++j) {
        Vector yj = y;
        yj(j) += step;
        jac.col(j) = (evaluate(yj).residual - current.residual) / step;
      }
    } else {
      jac = h * Matrix::Identity(d, d);  // leading-order exponential map
    }
    const Vector dy = solve_checked(jac, -current.residual, ErrorCode::SingularJacobian, 1e12);
    double lambda = cfg.damping;
    bool accepted = false;
    for (int halving = 0; halving <= 8; ++halving, lambda *= 0.5) {
      try {
        detail::ShootingTrial trial = evaluate(y + lambda * dy);
        const double tn = trial.residual.norm();
        if (tn < rnorm) {
          y += lambda * dy;
          current = std::move(trial);
          rnorm = tn;
          accepted = true;
          break;
        }
      } catch (const Error&) {
        // a failed flow counts as a residual increase
      }
    }
    if (!accepted) {
      throw Error(ErrorCode::NoConvergence, "damped Newton step failed to reduce the shooting residual " +
                                                std::to_string(rnorm));
    }
  }
  const FlowTrajectory& traj = current.rec->trajectory;
  AlgebroidVector plus = traj.final_value();
  plus.x = g.x1;  // equal to the flow endpoint within residual_tol
  return {AlgebroidVector::from_fiber(g.x0, y, na), std::move(plus), traj, it, rnorm};
}

inline AlgebroidVector retraction_minus(const LagrangianSystem& sys, const GroupoidElement& g, double h,
                                        const ShootingConfig& cfg = {}) {
  return shoot(sys, g, h, cfg).minus;
}

inline AlgebroidVector retraction_plus(const LagrangianSystem& sys, const GroupoidElement& g, double h,
                                       const ShootingConfig& cfg = {}) {
  return shoot(sys, g, h, cfg).plus;
}

/// Integral of L along a trajectory over its time span, Gauss-Legendre on the dense output.
inline double action(const LagrangianSystem& sys, const FlowTrajectory& traj, int quad_order = 10) {
  const QuadratureRule rule = gauss_legendre(quad_order);
  const double t0 = traj.solution().t_begin();
  const double half = 0.5 * traj.duration();
  double sum = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    sum += rule.weights[i] * sys(traj.at(t0 + half * (1.0 + rule.nodes[i])));
  }
  return half * sum;
}

struct ExactEvaluation {
  double value = 0.0;
  Momentum minus;  // FL(R-) at the source
  Momentum plus;   // FL(R+) at the target
  ShootingResult shooting;
};

inline ExactEvaluation exact_evaluate(const LagrangianSystem& sys, const GroupoidElement& g, double h,
                                      const ShootingConfig& cfg = {}, int quad_order = 10) {
  ShootingResult s = shoot(sys, g, h, cfg);
  ExactEvaluation e{action(sys, s.trajectory, quad_order), legendre(sys, s.minus), legendre(sys, s.plus),
                    std::move(s)};
  return e;
}

inline double exact_discrete_lagrangian(const LagrangianSystem& sys, const GroupoidElement& g, double h,
                                        const ShootingConfig& cfg = {}, int quad_order = 10) {
  return action(sys, shoot(sys, g, h, cfg).trajectory, quad_order);
}

inline Momentum exact_dlegendre_minus(const LagrangianSystem& sys, const GroupoidElement& g, double h,
                                      const ShootingConfig& cfg = {}) {
  return legendre(sys, retraction_minus(sys, g, h, cfg));
}

inline Momentum exact_dlegendre_plus(const LagrangianSystem& sys, const GroupoidElement& g, double h,
                                     const ShootingConfig& cfg = {}) {
  return legendre(sys, retraction_plus(sys, g, h, cfg));
}

// ---------------------------------------------------------------------------
// Existence/uniqueness certificate for the two-point problem q(0)=0, q(h0)=q1
// under q'' = xi(q, q'), |q| <= R0, |q'| <= R1.

struct CertifyConfig {
  double R0 = 1.0;
  double R1 = 1.0;
  double target_radius = 0.5;
  int samples = 2000;
  double h_max = 10.0;
  int grid_per_unit = 1000;  // h0 resolution 1/grid_per_unit
  double inflation = 1.2;    // applied to sampled (non-rigorous) bounds
  std::uint64_t seed = 0;
  Vector center;             // chart centre; zero when empty
};

struct ConvexityCertificate {
  double h0 = 0.0;
  double R = 0.0;
  double M = 0.0;
  double theta1 = 0.0;
  double theta2 = 0.0;
  double R0 = 0.0;
  double R1 = 0.0;
  bool exact_constants = false;  // acceleration is affine: bounds are rigorous, no inflation
  bool heuristic = false;        // group factor certified through the identity chart
  bool unbounded = false;        // h0 hit h_max
  bool theta_condition = false;
  bool position_condition = false;
  bool velocity_condition = false;
};

/// Chart acceleration q'' = xi(q, q') of the system around the centre. For a group factor the chart
/// is q = log g, so q' = dexpinv(q, w) with w the body velocity and q'' its time derivative.
inline Vector chart_acceleration(const LagrangianSystem& sys, const Vector& center, const Vector& q,
                                 const Vector& v) {
  const Instance& inst = sys.instance();
  const int na = inst.algebra_dim();
  const int m = inst.base_dim();
  const Vector x = center + q.tail(m);
  if (na == 0) return el_vector_field(sys, x, v).fiber_acceleration;
  const LieAlgebra& alg = *inst.algebra();
  const Vector qg = q.head(na), vg = v.head(na);
  const Vector w = alg.dexp_left(qg, vg);
  const Vector y = concat(w, v.tail(m));
  const Vector ydot = el_vector_field(sys, x, y).fiber_acceleration;
  const double s = 1e-5;
  const Vector wdot = ydot.head(na);
  const Vector qdd = (alg.dexpinv_left(qg + s * vg, w + s * wdot) - alg.dexpinv_left(qg - s * vg, w - s * wdot)) /
                     (2.0 * s);
  return concat(qdd, ydot.tail(m));
}

namespace detail {

inline double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Matrix>(a).singularValues()(0);
}

inline Vector sample_ball(std::mt19937_64& rng, int n, double radius) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = normal(rng);
  const double nv = v.norm();
  if (nv == 0.0) return v;
  return v * (radius * std::pow(unit(rng), 1.0 / n) / nv);
}

}  // namespace detail

inline ConvexityCertificate certify_h0(const LagrangianSystem& sys, const CertifyConfig& cfg) {
  if (!(cfg.R0 > 0.0 && cfg.R1 > 0.0 && cfg.target_radius > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "certificate box and radius must be positive");
  }
  const Instance& inst = sys.instance();
  const int n = inst.fiber_dim();
  const Vector center = cfg.center.size() == 0 ? Vector::Zero(inst.base_dim()) : cfg.center;
  auto xi = [&](const Vector& q, const Vector& v) { return chart_acceleration(sys, center, q, v); };

  // Jacobian blocks by central differences with a unit stencil (exact on affine fields).
  auto jacobian = [&](const Vector& q, const Vector& v, double s) {
    Matrix j(n, 2 * n);
    for (int i = 0; i < 2 * n; ++i) {
      Vector qp = q, qm = q, vp = v, vm = v;
      if (i < n) {
        qp(i) += s;
        qm(i) -= s;
      } else {
        vp(i - n) += s;
        vm(i - n) -= s;
      }
      j.col(i) = (xi(qp, vp) - xi(qm, vm)) / (2.0 * s);
    }
    return j;
  };

  ConvexityCertificate cert;
  cert.R0 = cfg.R0;
  cert.R1 = cfg.R1;
  cert.heuristic = inst.has_group();

  const Vector zero = Vector::Zero(n);
  const Vector xi0 = xi(zero, zero);
  const Matrix j0 = jacobian(zero, zero, 1.0);
  std::mt19937_64 rng(cfg.seed);
  bool affine = true;
  double m_sampled = xi0.norm(), t1 = 0.0, t2 = 0.0;
  for (int s = 0; s < cfg.samples; ++s) {
    const Vector q = detail::sample_ball(rng, n, cfg.R0);
    const Vector v = detail::sample_ball(rng, n, cfg.R1);
    const Vector val = xi(q, v);
    m_sampled = std::max(m_sampled, val.norm());
    const Vector lin = xi0 + j0.leftCols(n) * q + j0.rightCols(n) * v;
    if ((val - lin).norm() > 1e-9 * (1.0 + val.norm())) affine = false;
    const double step = 1e-5 * (1.0 + std::max(q.norm(), v.norm()));
    const Matrix j = jacobian(q, v, step);
    t1 = std::max(t1, detail::spectral_norm(j.leftCols(n)));
    t2 = std::max(t2, detail::spectral_norm(j.rightCols(n)));
  }
  if (affine) {
    cert.exact_constants = true;
    cert.theta1 = detail::spectral_norm(j0.leftCols(n));
    cert.theta2 = detail::spectral_norm(j0.rightCols(n));
    cert.M = xi0.norm() + cert.theta1 * cfg.R0 + cert.theta2 * cfg.R1;
  } else {
    cert.M = cfg.inflation * m_sampled;
    cert.theta1 = cfg.inflation * t1;
    cert.theta2 = cfg.inflation * t2;
  }

  auto radius = [&](double h0) {
    return std::min(cfg.R0 - cert.M * h0 * h0 / 8.0, h0 * cfg.R1 - cert.M * h0 * h0 / 2.0);
  };
  const double per = static_cast<double>(cfg.grid_per_unit);
  const long kmax = static_cast<long>(std::floor(cfg.h_max * per + 1e-9));
  const double slack = 1e-12 * cfg.target_radius;
  for (long k = kmax; k >= 1; --k) {
    const double h0 = static_cast<double>(k) / per;
    if (cert.theta1 * h0 * h0 / 8.0 + cert.theta2 * h0 / 2.0 >= 1.0) continue;
    const double r = radius(h0);
    if (r + slack < cfg.target_radius) continue;
    if (k == 1) break;  // h0 must exceed the grid resolution
    cert.h0 = h0;
    cert.R = r;
    cert.unbounded = k == kmax;
    cert.theta_condition = cert.theta1 * h0 * h0 / 8.0 + cert.theta2 * h0 / 2.0 < 1.0;
    cert.position_condition = cert.M * h0 * h0 / 8.0 + cfg.target_radius <= cfg.R0 + slack;
    cert.velocity_condition = cert.M * h0 / 2.0 + cfg.target_radius / h0 <= cfg.R1 + slack;
    return cert;
  }
  throw Error(ErrorCode::EmptyCertificate, "no step h0 > " + std::to_string(1.0 / per) + " satisfies the bounds");
}

}  // namespace gvi
