#pragma once

// Continuous Lagrangian mechanics on the algebroid of an Instance. The
// Euler-Lagrange field of a Lagrangian L(x, y) with fiber y = (xi, xdot) is
//
//   dx/dt = xdot,   H_yy dy/dt = F(x, y) - H_yx xdot,
//   F_xi = ad*_xi (dL/dxi),   F_xdot = dL/dx,
//
// which is the Euler-Lagrange system on TR^n, Euler-Poincare on a Lie algebra
// and Lagrange-Poincare on the trivial bundle.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "gvi/error.hpp"
#include "gvi/geometry.hpp"
#include "gvi/numerics.hpp"
#include "gvi/ode.hpp"

namespace gvi {

struct FlowConfig {
  double abs_tol = 1e-11;
  double rel_tol = 1e-11;
  int max_steps = 200000;
};

inline OdeOptions to_ode_options(const FlowConfig& cfg, bool dense = true) {
  return {cfg.abs_tol, cfg.rel_tol, cfg.max_steps, dense};
}

/// Analytic first and second derivatives of L(x, y).
struct LagrangianDerivatives {
  std::function<Vector(const Vector&, const Vector&)> dx;
  std::function<Vector(const Vector&, const Vector&)> dy;
  std::function<Matrix(const Vector&, const Vector&)> dyy;
  std::function<Matrix(const Vector&, const Vector&)> dyx;  // rows y, columns x
};

class LagrangianSystem {
 public:
  using ScalarFn = std::function<double(const Vector&, const Vector&)>;

  /// Finite-difference derivative mode.
  LagrangianSystem(Instance instance, ScalarFn lagrangian, std::string name = "custom")
      : instance_(std::move(instance)), lagrangian_(std::move(lagrangian)), name_(std::move(name)) {}

  LagrangianSystem(Instance instance, ScalarFn lagrangian, LagrangianDerivatives derivatives,
                   std::string name = "custom")
      : instance_(std::move(instance)),
        lagrangian_(std::move(lagrangian)),
        derivatives_(std::move(derivatives)),
        name_(std::move(name)) {}

  const Instance& instance() const { return instance_; }
  const std::string& name() const { return name_; }
  bool analytic() const { return derivatives_.has_value(); }

  /// Same Lagrangian with analytic derivatives dropped (finite-difference mode).
  LagrangianSystem finite_difference() const { return LagrangianSystem(instance_, lagrangian_, name_); }

  double value(const Vector& x, const Vector& y) const { return lagrangian_(x, y); }
  double operator()(const AlgebroidVector& a) const { return lagrangian_(a.x, a.fiber()); }

  Vector dL_dx(const Vector& x, const Vector& y) const {
    if (derivatives_) return derivatives_->dx(x, y);
    const double s = kFirstStep * (1.0 + x.norm());
    Vector g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Vector xp = x, xm = x;
      xp(i) += s;
      xm(i) -= s;
      g(i) = (lagrangian_(xp, y) - lagrangian_(xm, y)) / (2.0 * s);
    }
    return g;
  }

  Vector dL_dy(const Vector& x, const Vector& y) const {
    if (derivatives_) return derivatives_->dy(x, y);
    const double s = kFirstStep * (1.0 + y.norm());
    Vector g(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      Vector yp = y, ym = y;
      yp(i) += s;
      ym(i) -= s;
      g(i) = (lagrangian_(x, yp) - lagrangian_(x, ym)) / (2.0 * s);
    }
    return g;
  }

  Matrix d2L_dydy(const Vector& x, const Vector& y) const {
    if (derivatives_) return derivatives_->dyy(x, y);
    const double s = kSecondStep * (1.0 + y.norm());
    const auto d = y.size();
    Matrix h(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = i; j < d; ++j) {
        auto at = [&](double si, double sj) {
          Vector yy = y;
          yy(i) += si;
          yy(j) += sj;
          return lagrangian_(x, yy);
        };
        h(i, j) = (at(s, s) - at(s, -s) - at(-s, s) + at(-s, -s)) / (4.0 * s * s);
        h(j, i) = h(i, j);
      }
    }
    return h;
  }

  Matrix d2L_dydx(const Vector& x, const Vector& y) const {
    if (derivatives_) return derivatives_->dyx(x, y);
    const double sy = kSecondStep * (1.0 + y.norm());
    const double sx = kSecondStep * (1.0 + x.norm());
    Matrix h(y.size(), x.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      for (Eigen::Index j = 0; j < x.size(); ++j) {
        auto at = [&](double si, double sj) {
          Vector yy = y, xx = x;
          yy(i) += si;
          xx(j) += sj;
          return lagrangian_(xx, yy);
        };
        h(i, j) = (at(sy, sx) - at(sy, -sx) - at(-sy, sx) + at(-sy, -sx)) / (4.0 * sy * sx);
      }
    }
    return h;
  }

  /// Fiber Hessian condition bound; the system is treated as singular beyond it.
  static constexpr double kMaxHessianCondition = 1e8;

 private:
  static inline const double kFirstStep = std::cbrt(std::numeric_limits<double>::epsilon());
  static inline const double kSecondStep = std::pow(std::numeric_limits<double>::epsilon(), 0.25);

  Instance instance_;
  ScalarFn lagrangian_;
  std::optional<LagrangianDerivatives> derivatives_;
  std::string name_;
};

struct ElField {
  Vector base_velocity;       // dx/dt = anchor(y)
  Vector fiber_acceleration;  // dy/dt
};

namespace detail {

/// Right-hand side of the momentum balance: rho^T dL/dx - C y dL/dy.
inline Vector generalized_force(const Instance& inst, const Vector& xi, const Vector& p_xi, const Vector& dldx) {
  Vector algebra_part = inst.has_group() ? inst.algebra()->coad(xi, p_xi) : Vector(0);
  return concat(algebra_part, dldx);
}

inline Vector solve_fiber(const Matrix& hyy, const Vector& rhs) {
  return solve_checked(hyy, rhs, ErrorCode::SingularHessian, LagrangianSystem::kMaxHessianCondition);
}

}  // namespace detail

inline ElField el_vector_field(const LagrangianSystem& sys, const Vector& x, const Vector& y) {
  const Instance& inst = sys.instance();
  const int na = inst.algebra_dim();
  const Vector xdot = y.tail(inst.base_dim());
  const Vector p = sys.dL_dy(x, y);
  const Vector force = detail::generalized_force(inst, y.head(na), p.head(na), sys.dL_dx(x, y));
  Vector rhs = force;
  if (inst.base_dim() > 0) rhs -= sys.d2L_dydx(x, y) * xdot;
  return {xdot, detail::solve_fiber(sys.d2L_dydy(x, y), rhs)};
}

inline ElField el_vector_field(const LagrangianSystem& sys, const AlgebroidVector& a) {
  sys.instance().check(a);
  return el_vector_field(sys, a.x, a.fiber());
}

inline Momentum legendre(const LagrangianSystem& sys, const AlgebroidVector& a) {
  sys.instance().check(a);
  return Momentum::from_coords(a.x, sys.dL_dy(a.x, a.fiber()), sys.instance().algebra_dim());
}

struct LegendreInverseConfig {
  double tol = 1e-13;  // relative to 1 + |mu|
  int max_iters = 50;
};

/// Newton on the fiber for dL/dy(x, y) = mu, starting from `guess` (zero fiber by default).
inline AlgebroidVector legendre_inverse(const LagrangianSystem& sys, const Momentum& mu,
                                        const std::optional<Vector>& guess = std::nullopt,
                                        const LegendreInverseConfig& cfg = {}) {
  const Instance& inst = sys.instance();
  const Vector target = mu.coords();
  if (target.size() != inst.fiber_dim() || mu.x.size() != inst.base_dim()) {
    throw Error(ErrorCode::InvalidArgument, "momentum does not belong to the instance");
  }
  Vector y = guess ? *guess : Vector::Zero(inst.fiber_dim());
  const double tol = cfg.tol * (1.0 + target.norm());
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Vector r = sys.dL_dy(mu.x, y) - target;
    if (r.norm() <= tol) return AlgebroidVector::from_fiber(mu.x, y, inst.algebra_dim());
    const Vector dy = detail::solve_fiber(sys.d2L_dydy(mu.x, y), r);
    y -= dy;
    // finite-difference gradients stall above tol; accept a stagnated iterate that is close
    if (dy.norm() <= 1e-12 * (1.0 + y.norm())) {
      const Vector r2 = sys.dL_dy(mu.x, y) - target;
      if (r2.norm() <= 1e-8 * (1.0 + target.norm())) {
        return AlgebroidVector::from_fiber(mu.x, y, inst.algebra_dim());
      }
    }
  }
  throw Error(ErrorCode::NoConvergence, "inverse Legendre transform did not converge");
}

inline double energy(const LagrangianSystem& sys, const AlgebroidVector& a) {
  const Vector y = a.fiber();
  return y.dot(sys.dL_dy(a.x, y)) - sys.value(a.x, y);
}

/// Dense solution of the Euler-Lagrange flow; the state is (x, y) optionally followed by the
/// column-major group factor k when the reconstruction equation dk/dt = k hat(xi) rides along.
class FlowTrajectory {
 public:
  FlowTrajectory(Instance instance, DenseSolution solution, bool with_group)
      : instance_(std::move(instance)), solution_(std::move(solution)), with_group_(with_group) {}

  double duration() const { return solution_.t_end() - solution_.t_begin(); }
  const DenseSolution& solution() const { return solution_; }

  AlgebroidVector at(double t) const { return unpack(solution_.at(t)); }
  AlgebroidVector final_value() const { return unpack(solution_.final_state()); }

  /// Group factor at the end of the trajectory (identity-sized empty for Pair).
  Matrix final_group() const {
    if (!with_group_ || !instance_.has_group()) return Matrix(0, 0);
    const int n = instance_.ambient();
    const Vector& z = solution_.final_state();
    return Eigen::Map<const Matrix>(z.data() + state_size(), n, n);
  }

 private:
  int state_size() const { return instance_.base_dim() + instance_.fiber_dim(); }

  AlgebroidVector unpack(const Vector& z) const {
    const int m = instance_.base_dim();
    return AlgebroidVector::from_fiber(z.head(m), z.segment(m, instance_.fiber_dim()), instance_.algebra_dim());
  }

  Instance instance_;
  DenseSolution solution_;
  bool with_group_;
};

namespace detail {

inline Vector pack_state(const AlgebroidVector& a) { return concat(a.x, a.fiber()); }

/// Nearest orthogonal matrix with det +1 (polar factor).
inline Matrix polar_project(const Matrix& k) {
  Eigen::JacobiSVD<Matrix> svd(k, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix u = svd.matrixU();
  const Matrix& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(u.cols() - 1) *= -1.0;
  return u * v.transpose();
}

inline FlowTrajectory integrate_flow(const LagrangianSystem& sys, const AlgebroidVector& a0, double t,
                                     const FlowConfig& cfg, const std::optional<Matrix>& k0, bool dense) {
  const Instance& inst = sys.instance();
  inst.check(a0);
  const int m = inst.base_dim();
  const int d = inst.fiber_dim();
  const int na = inst.algebra_dim();
  const bool with_group = k0.has_value() && inst.has_group();
  const int n = inst.ambient();

  Vector z0 = pack_state(a0);
  if (with_group) {
    Vector zk = Eigen::Map<const Vector>(k0->data(), n * n);
    z0 = concat(z0, zk);
  }
  auto rhs = [&](double, const Vector& z) {
    const Vector x = z.head(m);
    const Vector y = z.segment(m, d);
    const ElField field = el_vector_field(sys, x, y);
    Vector dz(z.size());
    dz.head(m) = field.base_velocity;
    dz.segment(m, d) = field.fiber_acceleration;
    if (with_group) {
      const Eigen::Map<const Matrix> k(z.data() + m + d, n, n);
      const Matrix dk = k * inst.algebra()->hat(y.head(na));
      dz.tail(n * n) = Eigen::Map<const Vector>(dk.data(), n * n);
    }
    return dz;
  };
  StepHook hook;
  if (with_group && inst.algebra()->is_orthogonal()) {
    hook = [m, d, n](Vector& z) {
      Eigen::Map<Matrix> k(z.data() + m + d, n, n);
      k = polar_project(k);
    };
  }
  DenseSolution sol = integrate_dopri5(rhs, 0.0, z0, t, to_ode_options(cfg, dense), hook);
  return FlowTrajectory(inst, std::move(sol), with_group);
}

}  // namespace detail

inline FlowTrajectory flow_trajectory(const LagrangianSystem& sys, const AlgebroidVector& a0, double t,
                                      const FlowConfig& cfg = {}) {
  return detail::integrate_flow(sys, a0, t, cfg, std::nullopt, true);
}

inline AlgebroidVector flow(const LagrangianSystem& sys, const AlgebroidVector& a0, double t,
                            const FlowConfig& cfg = {}) {
  return detail::integrate_flow(sys, a0, t, cfg, std::nullopt, false).final_value();
}

struct Reconstruction {
  GroupoidElement arrow;
  FlowTrajectory trajectory;
};

/// Integrates the flow together with dk/dt = k xi(t) from k(0) = k0 (identity by default);
/// returns (k(t), x(0), x(t)). Orthogonal groups are re-projected after each step.
inline Reconstruction groupoid_reconstruction(const LagrangianSystem& sys, const AlgebroidVector& a0, double t,
                                              const FlowConfig& cfg = {}, std::optional<Matrix> k0 = std::nullopt,
                                              bool dense = true) {
  const Instance& inst = sys.instance();
  if (!k0) k0 = inst.group_identity();
  FlowTrajectory traj = detail::integrate_flow(sys, a0, t, cfg, k0, dense);
  const AlgebroidVector end = traj.final_value();
  GroupoidElement arrow{inst.has_group() ? traj.final_group() : Matrix(0, 0), a0.x, end.x};
  return {std::move(arrow), std::move(traj)};
}

/// Hamilton's equations on the dual, integrated in momentum coordinates:
/// dx/dt = anchor(v), dmu/dt = (ad*_xi mu_xi, dL/dx) with v = FL^{-1}(mu).
inline Momentum hamiltonian_flow(const LagrangianSystem& sys, const Momentum& mu0, double t,
                                 const FlowConfig& cfg = {}) {
  const Instance& inst = sys.instance();
  const int m = inst.base_dim();
  const int na = inst.algebra_dim();
  const int d = inst.fiber_dim();
  auto rhs = [&](double, const Vector& z) {
    const Momentum mu = Momentum::from_coords(z.head(m), z.tail(d), na);
    const AlgebroidVector v = legendre_inverse(sys, mu);
    const Vector y = v.fiber();
    Vector dz(m + d);
    dz.head(m) = v.xdot;
    dz.tail(d) = detail::generalized_force(inst, v.xi, mu.mu, sys.dL_dx(v.x, y));
    return dz;
  };
  const Vector z0 = concat(mu0.x, mu0.coords());
  const DenseSolution sol = integrate_dopri5(rhs, 0.0, z0, t, to_ode_options(cfg, false));
  const Vector& z = sol.final_state();
  return Momentum::from_coords(z.head(m), z.tail(d), na);
}

}  // namespace gvi
