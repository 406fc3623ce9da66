#pragma once

// Catalogue of practical discrete Lagrangians, each bound to a continuous system
// and a step h.

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gvi/discrete.hpp"
#include "gvi/dynamics.hpp"
#include "gvi/error.hpp"
#include "gvi/exact.hpp"
#include "gvi/geometry.hpp"
#include "gvi/numerics.hpp"

namespace gvi {

struct ButcherTable {
  Matrix a;
  Vector b;

  int stages() const { return static_cast<int>(b.size()); }

  void validate() const {
    if (b.size() == 0 || a.rows() != b.size() || a.cols() != b.size()) {
      throw Error(ErrorCode::InvalidArgument, "Butcher table shape mismatch");
    }
    if (std::abs(b.sum() - 1.0) > 1e-12) throw Error(ErrorCode::InvalidArgument, "Butcher weights must sum to 1");
    for (int i = 0; i < b.size(); ++i) {
      if (b(i) == 0.0) throw Error(ErrorCode::InvalidArgument, "Butcher weights must be nonzero");
    }
  }

  static ButcherTable implicit_midpoint() { return {Matrix::Constant(1, 1, 0.5), Vector::Ones(1)}; }

  /// Two-stage Gauss-Legendre (order 4).
  static ButcherTable gauss2() {
    const double r = std::sqrt(3.0) / 6.0;
    Matrix a(2, 2);
    a << 0.25, 0.25 - r, 0.25 + r, 0.25;
    return {a, Vector::Constant(2, 0.5)};
  }

  /// Lobatto IIIA two-stage (trapezoidal).
  static ButcherTable lobatto3a2() {
    Matrix a(2, 2);
    a << 0.0, 0.0, 0.5, 0.5;
    return {a, Vector::Constant(2, 0.5)};
  }
};

enum class SchemeKind {
  midpoint_pair,
  tau_alpha,
  symmetrized,
  affine_tau_matrix,
  rk_variational,
  rkmk_variational,
  bundle_product,
  exact,
};

inline std::string to_string(SchemeKind k) {
  switch (k) {
    case SchemeKind::midpoint_pair: return "midpoint_pair";
    case SchemeKind::tau_alpha: return "tau_alpha";
    case SchemeKind::symmetrized: return "symmetrized";
    case SchemeKind::affine_tau_matrix: return "affine_tau_matrix";
    case SchemeKind::rk_variational: return "rk_variational";
    case SchemeKind::rkmk_variational: return "rkmk_variational";
    case SchemeKind::bundle_product: return "bundle_product";
    case SchemeKind::exact: return "exact";
  }
  return "?";
}

inline std::optional<SchemeKind> scheme_kind_from_string(const std::string& s) {
  for (auto k : {SchemeKind::midpoint_pair, SchemeKind::tau_alpha, SchemeKind::symmetrized,
                 SchemeKind::affine_tau_matrix, SchemeKind::rk_variational, SchemeKind::rkmk_variational,
                 SchemeKind::bundle_product, SchemeKind::exact}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

struct SchemeSpec {
  SchemeKind kind = SchemeKind::midpoint_pair;
  double alpha = 0.5;
  TauKind tau = TauKind::exp;
  std::optional<ButcherTable> table;
  std::optional<int> expected_order;
};

/// Chart-norm cap for group schemes: 0.9 of the logarithm's branch radius.
inline constexpr double kGroupValidityRadius = 0.9 * std::numbers::pi;

namespace detail {

inline std::shared_ptr<const LagrangianSystem> share(const LagrangianSystem& sys) {
  return std::make_shared<const LagrangianSystem>(sys);
}

inline void require_kind(const LagrangianSystem& sys, InstanceKind kind, const char* scheme) {
  if (sys.instance().kind() != kind) {
    throw Error(ErrorCode::InvalidArgument, std::string(scheme) + " needs a " + to_string(kind) + " instance");
  }
}

/// Reduced Lagrangian l(xi) of a group system.
inline double lred(const LagrangianSystem& sys, const Vector& xi) { return sys.value(Vector(0), xi); }

inline Vector tau_inverse_checked(const LieAlgebra& g, TauKind kind, const Matrix& k, double h) {
  const Vector eta = tau_inverse(g, kind, k, h);
  if (kind == TauKind::exp && eta.norm() > kGroupValidityRadius) {
    throw Error(ErrorCode::OutOfBranch, "arrow outside the scheme's validity radius");
  }
  return eta;
}

}  // namespace detail

/// h L((q0 + q1) / 2, (q1 - q0) / h) on the pair groupoid.
inline DiscreteLagrangian midpoint_pair(const LagrangianSystem& sys, double h) {
  detail::require_kind(sys, InstanceKind::pair, "midpoint_pair");
  auto s = detail::share(sys);
  DiscreteLagrangian ld(
      sys.instance(), h, [s, h](const GroupoidElement& g) { return h * s->value(0.5 * (g.x0 + g.x1), (g.x1 - g.x0) / h); },
      "midpoint_pair");
  ld.with_system(s);
  // D2 = h/2 L_q + L_v and -D1 = L_v - h/2 L_q at the midpoint
  auto part = [s, h](const GroupoidElement& g, double sign, const Vector& base) {
    const Vector q = 0.5 * (g.x0 + g.x1), v = (g.x1 - g.x0) / h;
    return Momentum{Vector(0), base, s->dL_dy(q, v) + sign * 0.5 * h * s->dL_dx(q, v)};
  };
  ld.with_transforms([part](const GroupoidElement& g) { return part(g, 1.0, g.x1); },
                     [part](const GroupoidElement& g) { return part(g, -1.0, g.x0); });
  return ld;
}

/// h l(d_l tau_{alpha eta}(eta / h)) with eta = tau^-1(g); affine results are projected onto the algebra.
/// The exp kind reduces to h l(log(g) / h) and carries analytic transforms.
inline DiscreteLagrangian tau_alpha_group(const LagrangianSystem& sys, TauKind tau, double alpha, double h) {
  detail::require_kind(sys, InstanceKind::group, "tau_alpha");
  auto s = detail::share(sys);
  const AlgebraPtr alg = sys.instance().algebra();
  DiscreteLagrangian ld(
      sys.instance(), h,
      [s, alg, tau, alpha, h](const GroupoidElement& g) {
        const Vector eta = detail::tau_inverse_checked(*alg, tau, g.k, h);
        if (tau == TauKind::exp) return h * detail::lred(*s, eta / h);
        // tau^-1 already carries the 1/h of tau(a) = I + h a
        return h * detail::lred(*s, dtau_left(*alg, tau, alpha * eta, eta / h, h));
      },
      "tau_alpha");
  ld.with_system(s).with_validity_radius(kGroupValidityRadius);
  if (tau == TauKind::exp) {
    // F+ = D^T dl, F- = (D Ad_{g^-1})^T dl with D the inverse of d_l exp at log g
    auto grad = [s, alg, h](const GroupoidElement& g, bool plus) {
      const Vector eta = detail::tau_inverse_checked(*alg, TauKind::exp, g.k, h);
      const Vector dl = s->dL_dy(Vector(0), eta / h);
      Matrix d = alg->dexp_left_matrix(eta).inverse();
      if (!plus) d = d * alg->Ad(g.k.inverse());
      return Momentum{d.transpose() * dl, Vector(0), Vector(0)};
    };
    ld.with_transforms([grad](const GroupoidElement& g) { return grad(g, true); },
                       [grad](const GroupoidElement& g) { return grad(g, false); });
  }
  return ld;
}

/// l_ext(a) = l(P a) + |a - P a|_F^2 / 2 with P the Frobenius projection onto the algebra.
inline double extended_lagrangian(const LagrangianSystem& sys, const Matrix& a) {
  const LieAlgebra& alg = *sys.instance().algebra();
  const Vector xi = alg.vee(a);
  const Matrix rest = a - alg.hat(xi);
  return detail::lred(sys, xi) + 0.5 * rest.squaredNorm();
}

/// h l_ext(((1 - alpha) I + alpha A)^-1 (A - I) / h) on a matrix group.
inline DiscreteLagrangian affine_tau_matrix(const LagrangianSystem& sys, double alpha, double h) {
  detail::require_kind(sys, InstanceKind::group, "affine_tau_matrix");
  auto s = detail::share(sys);
  const int n = sys.instance().ambient();
  DiscreteLagrangian ld(
      sys.instance(), h,
      [s, alpha, h, n](const GroupoidElement& g) {
        const Matrix id = Matrix::Identity(n, n);
        const Matrix m = (1.0 - alpha) * id + alpha * g.k;
        Eigen::FullPivLU<Matrix> lu(m);
        if (!lu.isInvertible() || lu.rcond() < 1e-14) {
          throw Error(ErrorCode::SingularTau, "(1 - alpha) I + alpha A is singular");
        }
        return h * extended_lagrangian(*s, lu.solve((g.k - id) / h));
      },
      "affine_tau_matrix");
  ld.with_system(s).with_validity_radius(kGroupValidityRadius);
  return ld;
}

/// Pointwise average of two discrete Lagrangians on the same instance and step.
inline DiscreteLagrangian symmetrized(const DiscreteLagrangian& a, const DiscreteLagrangian& b) {
  if (a.instance().kind() != b.instance().kind() || a.h() != b.h()) {
    throw Error(ErrorCode::InvalidArgument, "symmetrized parts must share instance and step");
  }
  DiscreteLagrangian ld(
      a.instance(), a.h(), [a, b](const GroupoidElement& g) { return 0.5 * a(g) + 0.5 * b(g); },
      "symmetrized(" + a.name() + ")");
  if (a.system()) ld.with_system(a.system());
  if (a.validity_radius()) ld.with_validity_radius(*a.validity_radius());
  if (a.analytic() && b.analytic()) {
    auto avg = [](const Momentum& p, const Momentum& q) {
      return Momentum{0.5 * (p.mu + q.mu), p.x, 0.5 * (p.p + q.p)};
    };
    ld.with_transforms([a, b, avg](const GroupoidElement& g) { return avg(a.analytic_plus()(g), b.analytic_plus()(g)); },
                       [a, b, avg](const GroupoidElement& g) {
                         return avg(a.analytic_minus()(g), b.analytic_minus()(g));
                       });
  }
  return ld;
}

struct RkStationarity {
  std::vector<Vector> eta;
  double value = 0.0;
  double residual = 0.0;  // stationarity residual of the KKT system
};

namespace detail {

/// Stages xi_i = h sum_j a_ij eta_j (rk) or the fixed point of xi_i = h sum_j a_ij dtau^-1_{xi_j}(eta_j) (rkmk).
inline std::vector<Vector> rk_stages(const LieAlgebra& alg, TauKind tau, const ButcherTable& t, const std::vector<Vector>& eta,
                                     double h, bool munthe_kaas) {
  const int s = t.stages();
  std::vector<Vector> xi(s, Vector::Zero(alg.dim()));
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) xi[i] += h * t.a(i, j) * eta[j];
  if (!munthe_kaas) return xi;
  for (int it = 0; it < 100; ++it) {
    std::vector<Vector> next(s, Vector::Zero(alg.dim()));
    std::vector<Vector> u(s);
    for (int j = 0; j < s; ++j) u[j] = dtau_inv_left(alg, tau, xi[j], eta[j], h);
    double change = 0.0;
    for (int i = 0; i < s; ++i) {
      for (int j = 0; j < s; ++j) next[i] += h * t.a(i, j) * u[j];
      change = std::max(change, (next[i] - xi[i]).norm());
    }
    xi = std::move(next);
    if (change <= 1e-15 * (1.0 + h)) return xi;
  }
  throw Error(ErrorCode::NoConvergence, "Munthe-Kaas stage iteration did not contract");
}

/// Extremizes h sum_i b_i l(d_l tau_{xi_i}(eta_i)) subject to the step constraint by Newton on the
/// KKT system of Lambda(eta, lambda) = S(eta) + lambda . C(eta); returns Lambda at the stationary point.
inline RkStationarity rk_stationary(const LagrangianSystem& sys, TauKind tau, const ButcherTable& t, const Matrix& k,
                                    double h, bool munthe_kaas) {
  const LieAlgebra& alg = *sys.instance().algebra();
  const int n = alg.dim();
  const int s = t.stages();
  const Vector c = detail::tau_inverse_checked(alg, tau, k, h);
  const int nu = s * n;
  auto unpack = [&](const Vector& z) {
    std::vector<Vector> eta(s);
    for (int i = 0; i < s; ++i) eta[i] = z.segment(i * n, n);
    return eta;
  };
  auto lagrangian = [&](const Vector& z) {
    const std::vector<Vector> eta = unpack(z);
    const std::vector<Vector> xi = rk_stages(alg, tau, t, eta, h, munthe_kaas);
    double sum = 0.0;
    Vector cons = -c;
    for (int i = 0; i < s; ++i) {
      sum += h * t.b(i) * lred(sys, dtau_left(alg, tau, xi[i], eta[i], h));
      cons += h * t.b(i) * (munthe_kaas ? dtau_inv_left(alg, tau, xi[i], eta[i], h) : eta[i]);
    }
    return std::pair<double, Vector>{sum, cons};
  };
  // gradient of Lambda in (eta, lambda)
  auto kkt = [&](const Vector& z) {
    const Vector lam = z.tail(n);
    const Vector eta = z.head(nu);
    Vector g(nu + n);
    const double step = 1e-6 * (1.0 + eta.norm() + lam.norm() * h);
    for (int i = 0; i < nu; ++i) {
      Vector ep = eta, em = eta;
      ep(i) += step;
      em(i) -= step;
      const auto [sp, cp] = lagrangian(ep);
      const auto [sm, cm] = lagrangian(em);
      g(i) = (sp + lam.dot(cp) - sm - lam.dot(cm)) / (2.0 * step);
    }
    g.tail(n) = lagrangian(eta).second;
    return g;
  };

  Vector z = Vector::Zero(nu + n);
  for (int i = 0; i < s; ++i) z.segment(i * n, n) = c / h;
  Vector r = kkt(z);
  double rn = r.norm();
  const double tol = 1e-11 * (1.0 + h);
  for (int it = 0; it < 40 && rn > tol; ++it) {
    Matrix jac(nu + n, nu + n);
    const double step = 1e-6 * (1.0 + z.norm());
    for (int j = 0; j < nu + n; ++j) {
      Vector zp = z, zm = z;
      zp(j) += step;
      zm(j) -= step;
      jac.col(j) = (kkt(zp) - kkt(zm)) / (2.0 * step);
    }
    const Vector dz = solve_checked(jac, -r, ErrorCode::SingularJacobian, 1e14);
    double lambda = 1.0;
    bool accepted = false;
    for (int halving = 0; halving <= 8; ++halving, lambda *= 0.5) {
      const Vector rt = kkt(z + lambda * dz);
      if (rt.norm() < rn) {
        z += lambda * dz;
        r = rt;
        rn = rt.norm();
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (!(rn <= 1e-10)) throw Error(ErrorCode::NoConvergence, "RK stationarity residual " + std::to_string(rn));
  const auto [sval, cval] = lagrangian(z.head(nu));
  return {unpack(z.head(nu)), sval + z.tail(n).dot(cval), rn};
}

}  // namespace detail

inline RkStationarity rk_solve(const LagrangianSystem& sys, TauKind tau, const ButcherTable& table, const Matrix& k,
                               double h, bool munthe_kaas) {
  detail::require_kind(sys, InstanceKind::group, "rk_variational");
  table.validate();
  return detail::rk_stationary(sys, tau, table, k, h, munthe_kaas);
}

/// h sum_i b_i l(d_l tau_{xi_i}(eta_i)) extremized over the stage velocities eta_i.
inline DiscreteLagrangian rk_variational(const LagrangianSystem& sys, TauKind tau, const ButcherTable& table, double h) {
  detail::require_kind(sys, InstanceKind::group, "rk_variational");
  table.validate();
  auto s = detail::share(sys);
  DiscreteLagrangian ld(
      sys.instance(), h,
      [s, tau, table, h](const GroupoidElement& g) { return detail::rk_stationary(*s, tau, table, g.k, h, false).value; },
      "rk_variational");
  ld.with_system(s).with_validity_radius(kGroupValidityRadius);
  return ld;
}

/// Munthe-Kaas variant: the constraints see dtau^-1_{xi_j}(eta_j) in place of eta_j.
inline DiscreteLagrangian rkmk_variational(const LagrangianSystem& sys, TauKind tau, const ButcherTable& table,
                                           double h) {
  detail::require_kind(sys, InstanceKind::group, "rkmk_variational");
  table.validate();
  auto s = detail::share(sys);
  DiscreteLagrangian ld(
      sys.instance(), h,
      [s, tau, table, h](const GroupoidElement& g) { return detail::rk_stationary(*s, tau, table, g.k, h, true).value; },
      "rkmk_variational");
  ld.with_system(s).with_validity_radius(kGroupValidityRadius);
  return ld;
}

/// h l(log(k) / h, (x0 + x1) / 2, (x1 - x0) / h) on the trivial bundle.
inline DiscreteLagrangian bundle_product(const LagrangianSystem& sys, double h) {
  detail::require_kind(sys, InstanceKind::bundle, "bundle_product");
  auto s = detail::share(sys);
  const AlgebraPtr alg = sys.instance().algebra();
  DiscreteLagrangian ld(
      sys.instance(), h,
      [s, alg, h](const GroupoidElement& g) {
        const Vector eta = detail::tau_inverse_checked(*alg, TauKind::exp, g.k, h);
        return h * s->value(0.5 * (g.x0 + g.x1), concat(eta / h, (g.x1 - g.x0) / h));
      },
      "bundle_product");
  ld.with_system(s).with_validity_radius(kGroupValidityRadius);
  return ld;
}

/// The exact discrete Lagrangian as a scheme; its transforms are FL o R-/+ (one shooting solve each).
inline DiscreteLagrangian exact_scheme(const LagrangianSystem& sys, double h, const ShootingConfig& cfg = {},
                                       int quad_order = 10) {
  auto s = detail::share(sys);
  DiscreteLagrangian ld(
      sys.instance(), h,
      [s, h, cfg, quad_order](const GroupoidElement& g) { return exact_discrete_lagrangian(*s, g, h, cfg, quad_order); },
      "exact");
  ld.with_system(s);
  ld.with_transforms([s, h, cfg](const GroupoidElement& g) { return exact_dlegendre_plus(*s, g, h, cfg); },
                     [s, h, cfg](const GroupoidElement& g) { return exact_dlegendre_minus(*s, g, h, cfg); });
  if (sys.instance().has_group()) ld.with_validity_radius(kGroupValidityRadius);
  return ld;
}

/// Builds the discrete Lagrangian described by `spec`. Symmetrized pairs alpha with 1 - alpha, using
/// tau_alpha for the exp retraction and the extended-Lagrangian affine scheme otherwise.
inline DiscreteLagrangian make_scheme(const LagrangianSystem& sys, const SchemeSpec& spec, double h,
                                      const ShootingConfig& shooting = {}) {
  switch (spec.kind) {
    case SchemeKind::midpoint_pair: return midpoint_pair(sys, h);
    case SchemeKind::tau_alpha: return tau_alpha_group(sys, spec.tau, spec.alpha, h);
    case SchemeKind::affine_tau_matrix: return affine_tau_matrix(sys, spec.alpha, h);
    case SchemeKind::symmetrized:
      if (spec.tau == TauKind::exp) {
        return symmetrized(tau_alpha_group(sys, spec.tau, spec.alpha, h),
                           tau_alpha_group(sys, spec.tau, 1.0 - spec.alpha, h));
      }
      return symmetrized(affine_tau_matrix(sys, spec.alpha, h), affine_tau_matrix(sys, 1.0 - spec.alpha, h));
    case SchemeKind::rk_variational:
      return rk_variational(sys, spec.tau, spec.table.value_or(ButcherTable::implicit_midpoint()), h);
    case SchemeKind::rkmk_variational:
      return rkmk_variational(sys, spec.tau, spec.table.value_or(ButcherTable::implicit_midpoint()), h);
    case SchemeKind::bundle_product: return bundle_product(sys, h);
    case SchemeKind::exact: return exact_scheme(sys, h, shooting);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown scheme kind");
}

}  // namespace gvi
