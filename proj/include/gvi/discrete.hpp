#pragma once

// Discrete mechanics on an Instance. Directional derivatives of a discrete
// Lagrangian are taken along the identity curves c_a(s) of the algebroid basis:
//
//   F+_a(g) =  d/ds L_d(g . c_a(s))          base beta(g)
//   F-_a(g) = -d/ds L_d(c_a(s)^-1 . g)       base alpha(g)
//
// On the pair groupoid these are D2 L_d and -D1 L_d.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gvi/dynamics.hpp"
#include "gvi/error.hpp"
#include "gvi/geometry.hpp"
#include "gvi/numerics.hpp"

namespace gvi {

class DiscreteLagrangian {
 public:
  using Eval = std::function<double(const GroupoidElement&)>;
  using Transform = std::function<Momentum(const GroupoidElement&)>;

  DiscreteLagrangian(Instance instance, double h, Eval eval, std::string name = "custom")
      : instance_(std::move(instance)), h_(h), eval_(std::move(eval)), name_(std::move(name)) {
    if (!(h_ > 0.0)) throw Error(ErrorCode::InvalidArgument, "step size must be positive");
  }

  const Instance& instance() const { return instance_; }
  double h() const { return h_; }
  const std::string& name() const { return name_; }
  double operator()(const GroupoidElement& g) const { return eval_(g); }

  /// Analytic discrete Legendre transforms; both or neither.
  DiscreteLagrangian& with_transforms(Transform plus, Transform minus) {
    plus_ = std::move(plus);
    minus_ = std::move(minus);
    return *this;
  }
  DiscreteLagrangian& with_validity_radius(double r) {
    validity_radius_ = r;
    return *this;
  }
  DiscreteLagrangian& with_system(std::shared_ptr<const LagrangianSystem> sys) {
    system_ = std::move(sys);
    return *this;
  }
  DiscreteLagrangian& with_fd_scale(double s) {
    fd_scale_ = s;
    return *this;
  }
  DiscreteLagrangian& with_name(std::string name) {
    name_ = std::move(name);
    return *this;
  }

  bool analytic() const { return static_cast<bool>(plus_) && static_cast<bool>(minus_); }
  const Transform& analytic_plus() const { return plus_; }
  const Transform& analytic_minus() const { return minus_; }
  const std::optional<double>& validity_radius() const { return validity_radius_; }
  const std::shared_ptr<const LagrangianSystem>& system() const { return system_; }
  double fd_scale() const { return fd_scale_; }

  /// Finite-difference step for derivatives at g: fd_scale * (1 + |chart of g at the identity|).
  double fd_step(const GroupoidElement& g) const {
    double size = (g.x1 - g.x0).norm();
    if (instance_.has_group()) {
      try {
        size += instance_.group_log(g.k).norm();
      } catch (const Error&) {
        size += std::acos(-1.0);
      }
    }
    return fd_scale_ * (1.0 + size);
  }

 private:
  Instance instance_;
  double h_;
  Eval eval_;
  std::string name_;
  Transform plus_, minus_;
  std::optional<double> validity_radius_;
  std::shared_ptr<const LagrangianSystem> system_;
  double fd_scale_ = 1e-5;
};

namespace detail {

/// g . c_a(s) with c_a based at beta(g).
inline GroupoidElement right_perturb(const Instance& inst, const GroupoidElement& g, int a, double s) {
  return inst.compose(g, inst.identity_curve(g.x1, a, s));
}

/// c_a(s)^-1 . g with c_a based at alpha(g).
inline GroupoidElement left_perturb(const Instance& inst, const GroupoidElement& g, int a, double s) {
  return inst.compose(inst.inverse(inst.identity_curve(g.x0, a, s)), g);
}

inline Vector fd_plus(const DiscreteLagrangian& ld, const GroupoidElement& g) {
  const Instance& inst = ld.instance();
  const double s = ld.fd_step(g);
  Vector p(inst.fiber_dim());
  for (int a = 0; a < p.size(); ++a) {
    p(a) = (ld(right_perturb(inst, g, a, s)) - ld(right_perturb(inst, g, a, -s))) / (2.0 * s);
  }
  return p;
}

inline Vector fd_minus(const DiscreteLagrangian& ld, const GroupoidElement& g) {
  const Instance& inst = ld.instance();
  const double s = ld.fd_step(g);
  Vector p(inst.fiber_dim());
  for (int a = 0; a < p.size(); ++a) {
    p(a) = -(ld(left_perturb(inst, g, a, s)) - ld(left_perturb(inst, g, a, -s))) / (2.0 * s);
  }
  return p;
}

}  // namespace detail

inline Momentum dlegendre_plus(const DiscreteLagrangian& ld, const GroupoidElement& g) {
  ld.instance().check(g);
  if (ld.analytic()) return ld.analytic_plus()(g);
  return Momentum::from_coords(g.x1, detail::fd_plus(ld, g), ld.instance().algebra_dim());
}

inline Momentum dlegendre_minus(const DiscreteLagrangian& ld, const GroupoidElement& g) {
  ld.instance().check(g);
  if (ld.analytic()) return ld.analytic_minus()(g);
  return Momentum::from_coords(g.x0, detail::fd_minus(ld, g), ld.instance().algebra_dim());
}

/// F+(g) - F-(g_next); zero exactly on solutions of the discrete Euler-Lagrange equations.
inline Vector del_residual(const DiscreteLagrangian& ld, const GroupoidElement& g, const GroupoidElement& g_next) {
  const Instance& inst = ld.instance();
  inst.check(g);
  inst.check(g_next);
  if (inst.base_dim() > 0) {
    const double gap = (g.x1 - g_next.x0).cwiseAbs().maxCoeff();
    if (gap > kComposeTolerance) throw Error(ErrorCode::NotComposable, "consecutive arrows do not compose");
  }
  return dlegendre_plus(ld, g).coords() - dlegendre_minus(ld, g_next).coords();
}

struct Regularity {
  Matrix matrix;
  double condition = 0.0;
  bool regular = false;
};

inline constexpr double kMaxRegularityCondition = 1e8;

/// M_ab = -d/ds d/dt L_d(c_a(s)^-1 . g . c_b(t)).
inline Regularity regularity_matrix(const DiscreteLagrangian& ld, const GroupoidElement& g) {
  const Instance& inst = ld.instance();
  inst.check(g);
  const int d = inst.fiber_dim();
  Matrix m(d, d);
  if (ld.analytic()) {
    const double s = ld.fd_step(g);
    for (int a = 0; a < d; ++a) {
      const Vector fp = ld.analytic_plus()(detail::left_perturb(inst, g, a, s)).coords();
      const Vector fm = ld.analytic_plus()(detail::left_perturb(inst, g, a, -s)).coords();
      m.row(a) = -(fp - fm).transpose() / (2.0 * s);
    }
  } else {
    const double s = 20.0 * ld.fd_step(g);  // second differences want a larger step
    for (int a = 0; a < d; ++a) {
      for (int b = 0; b < d; ++b) {
        auto at = [&](double sa, double sb) {
          return ld(detail::right_perturb(inst, detail::left_perturb(inst, g, a, sa), b, sb));
        };
        m(a, b) = -(at(s, s) - at(s, -s) - at(-s, s) + at(-s, -s)) / (4.0 * s * s);
      }
    }
  }
  Regularity r;
  r.condition = condition_number(m);
  r.regular = std::isfinite(r.condition) && r.condition < kMaxRegularityCondition;
  r.matrix = std::move(m);
  return r;
}

struct EvolveConfig {
  double residual_tol = 1e-10;  // relative to 1 + |F+(g)|
  int max_iters = 30;
  double max_condition = kMaxRegularityCondition;
};

namespace detail {

/// Damped Newton for F(u) = 0 with a forward-difference Jacobian. Throws SingularRegularityMatrix
/// when the Jacobian condition exceeds `max_condition`.
template <class F>
Vector newton_solve(const F& f, Vector u, double tol, int max_iters, double max_condition, const char* what) {
  Vector r = f(u);
  double rn = r.norm();
  // the first Jacobian is always formed so that singular problems are reported even at a root
  for (int it = 0; it == 0 || rn > tol; ++it) {
    if (it >= max_iters) {
      throw Error(ErrorCode::NoConvergence, std::string(what) + ": residual " + std::to_string(rn));
    }
    const int n = static_cast<int>(u.size());
    Matrix jac(r.size(), n);
    const double step = 1e-7 * (1.0 + u.norm());
    for (int j = 0; j < n; ++j) {
      Vector uj = u;
      uj(j) += step;
      jac.col(j) = (f(uj) - r) / step;
    }
    const Vector du = solve_checked(jac, -r, ErrorCode::SingularRegularityMatrix, max_condition);
    if (rn <= tol) break;
    double lambda = 1.0;
    bool accepted = false;
    for (int halving = 0; halving <= 8; ++halving, lambda *= 0.5) {
      try {
        Vector rt = f(u + lambda * du);
        const double tn = rt.norm();
        if (tn < rn) {
          u += lambda * du;
          r = std::move(rt);
          rn = tn;
          accepted = true;
          break;
        }
      } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidArgument) throw;
      }
    }
    if (!accepted) {
      throw Error(ErrorCode::NoConvergence, std::string(what) + ": stalled at residual " + std::to_string(rn));
    }
  }
  return u;
}

}  // namespace detail

/// Next arrow g_next with alpha(g_next) = beta(g) solving F+(g) = F-(g_next).
inline GroupoidElement evolve(const DiscreteLagrangian& ld, const GroupoidElement& g, const EvolveConfig& cfg = {}) {
  const Instance& inst = ld.instance();
  inst.check(g);
  const GroupoidElement guess{g.k, g.x1, 2.0 * g.x1 - g.x0};
  const Vector target = dlegendre_plus(ld, g).coords();
  auto residual = [&](const Vector& u) {
    return Vector(target - dlegendre_minus(ld, inst.retract_target(guess, u)).coords());
  };
  const Vector u = detail::newton_solve(residual, Vector::Zero(inst.fiber_dim()), cfg.residual_tol * (1.0 + target.norm()),
                                        cfg.max_iters, cfg.max_condition, "evolve");
  return inst.retract_target(guess, u);
}

/// Arrow g from mu.x with F-(g) = mu.
inline GroupoidElement invert_dlegendre_minus(const DiscreteLagrangian& ld, const Momentum& mu,
                                              const EvolveConfig& cfg = {}) {
  const Instance& inst = ld.instance();
  const GroupoidElement base = inst.identity_at(mu.x);
  const Vector target = mu.coords();
  Vector u0;
  if (ld.system()) {
    u0 = ld.h() * legendre_inverse(*ld.system(), mu).fiber();
  } else {
    u0 = ld.h() * target;
  }
  auto residual = [&](const Vector& u) {
    return Vector(dlegendre_minus(ld, inst.retract_target(base, u)).coords() - target);
  };
  const Vector u = detail::newton_solve(residual, u0, cfg.residual_tol * (1.0 + target.norm()), cfg.max_iters,
                                        cfg.max_condition, "inverse discrete Legendre transform");
  return inst.retract_target(base, u);
}

/// F+ o (F-)^-1.
inline Momentum hamiltonian_evolve(const DiscreteLagrangian& ld, const Momentum& mu, const EvolveConfig& cfg = {}) {
  return dlegendre_plus(ld, invert_dlegendre_minus(ld, mu, cfg));
}

struct DiscreteTrajectory {
  std::vector<GroupoidElement> arrows;  // g_0 .. g_N
  std::vector<Momentum> momenta;        // F+(g_k)
  std::vector<double> energies;         // E_L(FL^-1(F+(g_k))) when a system is attached
  std::vector<double> casimirs;         // |mu| on so(3)
  bool failed = false;
  ErrorCode error = ErrorCode::NoConvergence;
  std::string message;
};

inline bool has_casimir(const Instance& inst) {
  return inst.kind() == InstanceKind::group && inst.algebra()->is_so3();
}

/// Iterates evolve N times; on failure keeps the arrows produced so far and flags the error.
inline DiscreteTrajectory simulate(const DiscreteLagrangian& ld, const GroupoidElement& g0, int n,
                                   const EvolveConfig& cfg = {}) {
  if (n < 0) throw Error(ErrorCode::InvalidArgument, "step count must be non-negative");
  DiscreteTrajectory tr;
  const Instance& inst = ld.instance();
  const bool casimir = has_casimir(inst);
  auto record = [&](const GroupoidElement& g) {
    const Momentum mu = dlegendre_plus(ld, g);
    const double e = ld.system() ? energy(*ld.system(), legendre_inverse(*ld.system(), mu)) : 0.0;
    if (ld.system()) tr.energies.push_back(e);
    if (casimir) tr.casimirs.push_back(mu.mu.norm());
    tr.arrows.push_back(g);
    tr.momenta.push_back(mu);
  };
  try {
    record(g0);
    for (int k = 0; k < n; ++k) record(evolve(ld, tr.arrows.back(), cfg));
  } catch (const Error& e) {
    tr.failed = true;
    tr.error = e.code();
    tr.message = e.what();
  }
  return tr;
}

}  // namespace gvi
