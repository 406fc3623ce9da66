#pragma once

// Concrete Lie groupoids and their algebroids: the pair groupoid on R^n, a
// matrix Lie group, and the trivial principal bundle K x (R^m x R^m).
//
// All three are stored in one shape, the trivial bundle: an arrow carries a
// group factor k (empty for the pair groupoid) and base endpoints x0 -> x1
// (empty for a bare group). Algebra elements are coordinate vectors against
// the declared basis E_a; matrices are materialized on demand.

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "gvi/error.hpp"
#include "gvi/numerics.hpp"

namespace gvi {

inline constexpr double kComposeTolerance = 1e-9;

inline Eigen::Matrix3d skew3(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

/// Finite-dimensional matrix Lie algebra with a fixed basis.
class LieAlgebra {
 public:
  /// Builds an algebra from basis matrices; throws InvalidArgument unless the
  /// span is closed under the commutator (to 1e-12) and Jacobi holds.
  static std::shared_ptr<const LieAlgebra> from_basis(std::vector<Matrix> basis,
                                                      std::string name = "custom") {
    return std::shared_ptr<const LieAlgebra>(new LieAlgebra(std::move(basis), std::move(name), false));
  }

  static std::shared_ptr<const LieAlgebra> so3() {
    static const std::shared_ptr<const LieAlgebra> algebra = [] {
      std::vector<Matrix> basis;
      for (int a = 0; a < 3; ++a) basis.emplace_back(skew3(Eigen::Vector3d::Unit(a)));
      return std::shared_ptr<const LieAlgebra>(new LieAlgebra(std::move(basis), "so3", true));
    }();
    return algebra;
  }

  int dim() const { return static_cast<int>(basis_.size()); }
  int ambient() const { return ambient_; }
  const std::string& name() const { return name_; }
  bool is_so3() const { return so3_; }
  /// True when every basis matrix is skew-symmetric (the group is orthogonal).
  bool is_orthogonal() const { return orthogonal_; }
  const std::vector<Matrix>& basis() const { return basis_; }

  /// C^c_{ab} with [E_a, E_b] = sum_c C^c_{ab} E_c.
  double structure_constant(int c, int a, int b) const { return c_[(c * dim() + a) * dim() + b]; }

  double closure_defect() const { return closure_defect_; }

  double jacobi_defect() const {
    const int n = dim();
    double worst = 0.0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c)
          for (int e = 0; e < n; ++e) {
            double s = 0.0;
            for (int d = 0; d < n; ++d) {
              s += structure_constant(d, a, b) * structure_constant(e, d, c) +
                   structure_constant(d, b, c) * structure_constant(e, d, a) +
                   structure_constant(d, c, a) * structure_constant(e, d, b);
            }
            worst = std::max(worst, std::abs(s));
          }
    return worst;
  }

  Matrix hat(const Vector& xi) const {
    check_dim(xi);
    Matrix m = Matrix::Zero(ambient_, ambient_);
    for (int a = 0; a < dim(); ++a) m += xi(a) * basis_[a];
    return m;
  }

  /// Coordinates of the Frobenius-orthogonal projection of `m` onto the algebra.
  Vector vee(const Matrix& m) const {
    Vector rhs(dim());
    for (int a = 0; a < dim(); ++a) rhs(a) = basis_[a].cwiseProduct(m).sum();
    return gram_.solve(rhs);
  }

  Matrix ad(const Vector& xi) const {
    check_dim(xi);
    const int n = dim();
    Matrix m = Matrix::Zero(n, n);
    for (int c = 0; c < n; ++c)
      for (int b = 0; b < n; ++b)
        for (int a = 0; a < n; ++a) m(c, b) += structure_constant(c, a, b) * xi(a);
    return m;
  }

  Vector bracket(const Vector& xi, const Vector& eta) const { return ad(xi) * eta; }

  /// ad*_xi mu under <ad*_xi mu, eta> = <mu, [xi, eta]>.
  Vector coad(const Vector& xi, const Vector& mu) const { return ad(xi).transpose() * mu; }

  /// Ad_g as a dim x dim matrix acting on coordinates.
  Matrix Ad(const Matrix& g) const {
    const Matrix g_inv = g.inverse();
    Matrix m(dim(), dim());
    for (int a = 0; a < dim(); ++a) m.col(a) = vee(g * basis_[a] * g_inv);
    return m;
  }

  Matrix exp(const Vector& xi) const {
    check_dim(xi);
    if (so3_) {
      const Eigen::Vector3d w = xi;
      const double theta2 = w.squaredNorm();
      const double theta = std::sqrt(theta2);
      double a, b;
      if (theta < 1e-4) {
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
      } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
      }
      const Eigen::Matrix3d k = skew3(w);
      return Eigen::Matrix3d::Identity() + a * k + b * k * k;
    }
    const Matrix x = hat(xi);
    return x.exp();
  }

  /// Principal logarithm; OutOfBranch near the cut (SO(3): angle >= pi - 1e-6).
  Vector log(const Matrix& g) const {
    if (g.rows() != ambient_ || g.cols() != ambient_) {
      throw Error(ErrorCode::InvalidArgument, "group element has wrong shape");
    }
    if (so3_) {
      const Eigen::Vector3d v(g(2, 1) - g(1, 2), g(0, 2) - g(2, 0), g(1, 0) - g(0, 1));
      const double s = 0.5 * v.norm();
      const double c = 0.5 * (g.trace() - 1.0);
      const double theta = std::atan2(s, c);
      if (theta >= std::numbers::pi - 1e-6) {
        throw Error(ErrorCode::OutOfBranch, "rotation angle " + std::to_string(theta) + " too close to pi");
      }
      double f;
      if (theta < 1e-4) {
        const double t2 = theta * theta;
        f = 0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
      } else {
        f = 0.5 * theta / std::sin(theta);
      }
      return f * v;
    }
    Eigen::EigenSolver<Matrix> es(g, false);
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
      const std::complex<double> lambda = es.eigenvalues()(i);
      if (std::abs(lambda) == 0.0 || std::abs(std::arg(lambda)) >= std::numbers::pi - 1e-6) {
        throw Error(ErrorCode::OutOfBranch, "matrix has an eigenvalue on the logarithm branch cut");
      }
    }
    const Matrix l = g.log();
    Vector xi = vee(l);
    if ((hat(xi) - l).norm() > 1e-8 * (1.0 + l.norm())) {
      throw Error(ErrorCode::OutOfBranch, "principal logarithm leaves the algebra");
    }
    return xi;
  }

  /// Matrix of d_l exp_xi = sum_j (-ad_xi)^j / (j+1)!.
  Matrix dexp_left_matrix(const Vector& xi) const {
    const Matrix minus_ad = -ad(xi);
    Matrix term = Matrix::Identity(dim(), dim());
    Matrix sum = term;
    for (int j = 1; j < 200; ++j) {
      term = minus_ad * term / static_cast<double>(j + 1);
      sum += term;
      if (term.norm() < 1e-16) break;
    }
    return sum;
  }

  Vector dexp_left(const Vector& xi, const Vector& eta) const {
    check_dim(eta);
    const Matrix minus_ad = -ad(xi);
    Vector term = eta;
    Vector sum = eta;
    const double floor = 1e-15 * std::max(1.0, eta.norm());
    for (int j = 1; j < 200; ++j) {
      term = minus_ad * term / static_cast<double>(j + 1);
      sum += term;
      if (term.norm() < floor) break;
    }
    return sum;
  }

  Vector dexpinv_left(const Vector& xi, const Vector& eta) const {
    check_dim(eta);
    return solve_checked(dexp_left_matrix(xi), eta, ErrorCode::SingularMatrix);
  }

  /// Radius of the ball on which exp is inverted by log.
  double branch_radius() const { return std::numbers::pi; }

  /// Membership test for the connected group: g^T g = I and det = 1 when orthogonal.
  bool contains(const Matrix& g, double tol = 1e-10) const {
    if (g.rows() != ambient_ || g.cols() != ambient_) return false;
    if (!orthogonal_) return std::abs(g.determinant()) > tol;
    const Matrix id = Matrix::Identity(ambient_, ambient_);
    return (g.transpose() * g - id).cwiseAbs().maxCoeff() <= tol && std::abs(g.determinant() - 1.0) <= tol;
  }

 private:
  LieAlgebra(std::vector<Matrix> basis, std::string name, bool so3)
      : basis_(std::move(basis)), name_(std::move(name)), so3_(so3) {
    if (basis_.empty()) throw Error(ErrorCode::InvalidArgument, "algebra basis is empty");
    ambient_ = static_cast<int>(basis_.front().rows());
    for (const auto& e : basis_) {
      if (e.rows() != ambient_ || e.cols() != ambient_) {
        throw Error(ErrorCode::InvalidArgument, "basis matrices must all be square of the same size");
      }
    }
    const int n = dim();
    Matrix gram(n, n);
    orthogonal_ = true;
    for (int a = 0; a < n; ++a) {
      if ((basis_[a] + basis_[a].transpose()).norm() > 1e-14) orthogonal_ = false;
      for (int b = 0; b < n; ++b) gram(a, b) = basis_[a].cwiseProduct(basis_[b]).sum();
    }
    gram_ = gram.ldlt();
    if (gram_.info() != Eigen::Success || condition_number(gram) > 1e12) {
      throw Error(ErrorCode::InvalidArgument, "basis matrices are linearly dependent");
    }
    c_.assign(static_cast<std::size_t>(n) * n * n, 0.0);
    closure_defect_ = 0.0;
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        const Matrix comm = basis_[a] * basis_[b] - basis_[b] * basis_[a];
        const Vector coords = vee(comm);
        for (int c = 0; c < n; ++c) {
          // snap round-off so integer constants stay integer
          double v = coords(c);
          if (std::abs(v - std::round(v)) < 1e-14) v = std::round(v);
          c_[(c * n + a) * n + b] = v;
        }
        Matrix recon = Matrix::Zero(ambient_, ambient_);
        for (int c = 0; c < n; ++c) recon += structure_constant(c, a, b) * basis_[c];
        closure_defect_ = std::max(closure_defect_, (recon - comm).cwiseAbs().maxCoeff());
      }
    }
    if (closure_defect_ > 1e-12) {
      throw Error(ErrorCode::InvalidArgument, "basis is not closed under the commutator");
    }
    if (jacobi_defect() > 1e-12) throw Error(ErrorCode::InvalidArgument, "Jacobi identity fails");
  }

  void check_dim(const Vector& v) const {
    if (v.size() != dim()) throw Error(ErrorCode::InvalidArgument, "algebra coordinate vector has wrong length");
  }

  std::vector<Matrix> basis_;
  std::string name_;
  bool so3_ = false;
  bool orthogonal_ = false;
  int ambient_ = 0;
  Eigen::LDLT<Matrix> gram_;
  std::vector<double> c_;
  double closure_defect_ = 0.0;
};

using AlgebraPtr = std::shared_ptr<const LieAlgebra>;

/// Arrow k : x0 -> x1. Pair: k empty. Group: x0, x1 empty.
struct GroupoidElement {
  Matrix k;
  Vector x0;
  Vector x1;

  static GroupoidElement pair(Vector q0, Vector q1) { return {Matrix(0, 0), std::move(q0), std::move(q1)}; }
  static GroupoidElement group(Matrix g) { return {std::move(g), Vector(0), Vector(0)}; }
  static GroupoidElement bundle(Matrix k, Vector x0, Vector x1) {
    return {std::move(k), std::move(x0), std::move(x1)};
  }
};

/// Algebroid element (xi, x, xdot): Tangent uses (x, xdot), Algebra uses xi.
struct AlgebroidVector {
  Vector xi;
  Vector x;
  Vector xdot;

  static AlgebroidVector tangent(Vector q, Vector v) { return {Vector(0), std::move(q), std::move(v)}; }
  static AlgebroidVector algebra(Vector xi) { return {std::move(xi), Vector(0), Vector(0)}; }
  static AlgebroidVector bundle(Vector xi, Vector x, Vector xdot) {
    return {std::move(xi), std::move(x), std::move(xdot)};
  }

  /// Fiber coordinates y = (xi, xdot).
  Vector fiber() const { return concat(xi, xdot); }

  static AlgebroidVector from_fiber(const Vector& x, const Vector& y, int algebra_dim) {
    return {y.head(algebra_dim), x, y.tail(y.size() - algebra_dim)};
  }
};

/// Covector (mu, x, p): algebra part mu, base point x, base momentum p.
struct Momentum {
  Vector mu;
  Vector x;
  Vector p;

  Vector coords() const { return concat(mu, p); }

  static Momentum from_coords(const Vector& x, const Vector& c, int algebra_dim) {
    return {c.head(algebra_dim), x, c.tail(c.size() - algebra_dim)};
  }
};

enum class InstanceKind { pair, group, bundle };

inline std::string to_string(InstanceKind kind) {
  switch (kind) {
    case InstanceKind::pair: return "pair";
    case InstanceKind::group: return "group";
    case InstanceKind::bundle: return "bundle";
  }
  return "?";
}

class Instance {
 public:
  static Instance pair(int n) { return Instance(InstanceKind::pair, nullptr, n); }
  static Instance group(AlgebraPtr algebra) { return Instance(InstanceKind::group, std::move(algebra), 0); }
  static Instance bundle(AlgebraPtr algebra, int m) { return Instance(InstanceKind::bundle, std::move(algebra), m); }

  InstanceKind kind() const { return kind_; }
  const AlgebraPtr& algebra() const { return algebra_; }
  int base_dim() const { return base_dim_; }
  int algebra_dim() const { return algebra_ ? algebra_->dim() : 0; }
  int ambient() const { return algebra_ ? algebra_->ambient() : 0; }
  /// Rank of the algebroid: algebra dimension plus base dimension.
  int fiber_dim() const { return algebra_dim() + base_dim(); }
  bool has_group() const { return algebra_ != nullptr; }

  Matrix group_identity() const { return Matrix::Identity(ambient(), ambient()); }

  Matrix group_exp(const Vector& xi) const {
    return has_group() ? algebra_->exp(xi) : Matrix(0, 0);
  }
  Vector group_log(const Matrix& g) const { return has_group() ? algebra_->log(g) : Vector(0); }

  const Vector& alpha(const GroupoidElement& a) const { return a.x0; }
  const Vector& beta(const GroupoidElement& a) const { return a.x1; }

  GroupoidElement identity_at(const Vector& x) const {
    check_base(x);
    return {group_identity(), x, x};
  }

  GroupoidElement compose(const GroupoidElement& a, const GroupoidElement& b) const {
    check(a);
    check(b);
    if (base_dim_ > 0) {
      const double gap = (a.x1 - b.x0).cwiseAbs().maxCoeff();
      if (gap > kComposeTolerance) {
        throw Error(ErrorCode::NotComposable, "target and source differ by " + std::to_string(gap));
      }
    }
    return {has_group() ? Matrix(a.k * b.k) : Matrix(0, 0), a.x0, b.x1};
  }

  GroupoidElement inverse(const GroupoidElement& a) const {
    check(a);
    return {has_group() ? invert(a.k) : Matrix(0, 0), a.x1, a.x0};
  }

  /// Chart centred at `ref`: (log(ref.k^-1 a.k), a.x0 - ref.x0, a.x1 - ref.x1).
  Vector chart_coords(const GroupoidElement& ref, const GroupoidElement& a) const {
    check(ref);
    check(a);
    Vector group_part = has_group() ? algebra_->log(invert(ref.k) * a.k) : Vector(0);
    return concat(group_part, a.x0 - ref.x0, a.x1 - ref.x1);
  }

  /// Chart coordinates on the alpha-fibre: (log(ref.k^-1 a.k), a.x1 - ref.x1), length fiber_dim().
  Vector target_coords(const GroupoidElement& ref, const GroupoidElement& a) const {
    Vector group_part = has_group() ? algebra_->log(invert(ref.k) * a.k) : Vector(0);
    return concat(group_part, a.x1 - ref.x1);
  }

  /// Inverse of target_coords: ref.k exp(u_xi), same source, target ref.x1 + u_x.
  GroupoidElement retract_target(const GroupoidElement& ref, const Vector& u) const {
    const int na = algebra_dim();
    Matrix k = has_group() ? Matrix(ref.k * algebra_->exp(u.head(na))) : Matrix(0, 0);
    return {std::move(k), ref.x0, ref.x1 + u.tail(base_dim_)};
  }

  /// Arrow from (x, x) along basis direction `dir` of the algebroid at parameter s:
  /// algebra directions move the group factor by exp(s E_dir), base directions move the target.
  GroupoidElement identity_curve(const Vector& x, int dir, double s) const {
    GroupoidElement c = identity_at(x);
    const int na = algebra_dim();
    if (dir < na) {
      c.k = algebra_->exp(s * Vector::Unit(na, dir));
    } else {
      c.x1(dir - na) += s;
    }
    return c;
  }

  bool contains(const GroupoidElement& a, double tol = 1e-10) const {
    if (a.x0.size() != base_dim_ || a.x1.size() != base_dim_) return false;
    if (!has_group()) return a.k.size() == 0;
    return algebra_->contains(a.k, tol);
  }

  void check(const GroupoidElement& a) const {
    if (a.x0.size() != base_dim_ || a.x1.size() != base_dim_ ||
        (has_group() && (a.k.rows() != ambient() || a.k.cols() != ambient()))) {
      throw Error(ErrorCode::InvalidArgument, "arrow does not belong to the " + to_string(kind_) + " instance");
    }
  }

  void check(const AlgebroidVector& v) const {
    if (v.xi.size() != algebra_dim() || v.x.size() != base_dim_ || v.xdot.size() != base_dim_) {
      throw Error(ErrorCode::InvalidArgument, "algebroid vector does not belong to the instance");
    }
  }

 private:
  Instance(InstanceKind kind, AlgebraPtr algebra, int m) : kind_(kind), algebra_(std::move(algebra)), base_dim_(m) {
    if (kind_ != InstanceKind::pair && !algebra_) throw Error(ErrorCode::InvalidArgument, "missing algebra");
    if (m < 0 || (kind_ == InstanceKind::pair && m == 0)) {
      throw Error(ErrorCode::InvalidArgument, "invalid base dimension");
    }
  }

  void check_base(const Vector& x) const {
    if (x.size() != base_dim_) throw Error(ErrorCode::InvalidArgument, "base point has wrong dimension");
  }

  static Matrix invert(const Matrix& k) {
    Eigen::FullPivLU<Matrix> lu(k);
    if (!lu.isInvertible()) throw Error(ErrorCode::SingularMatrix, "group factor is singular");
    return lu.inverse();
  }

  InstanceKind kind_;
  AlgebraPtr algebra_;
  int base_dim_ = 0;
};

/// Retraction maps tau : g -> G used by the group discretizations.
/// exp: tau(a) = exp(a). affine: tau(a) = I + h a, with results projected back onto
/// the algebra (Frobenius-orthogonal) since (I + hX)^-1 hH generally leaves it.
enum class TauKind { exp, affine };

inline std::string to_string(TauKind kind) { return kind == TauKind::exp ? "exp" : "affine"; }

inline Matrix tau_map(const LieAlgebra& g, TauKind kind, const Vector& xi, double h) {
  if (kind == TauKind::exp) return g.exp(xi);
  return Matrix::Identity(g.ambient(), g.ambient()) + h * g.hat(xi);
}

inline Vector tau_inverse(const LieAlgebra& g, TauKind kind, const Matrix& k, double h) {
  if (kind == TauKind::exp) return g.log(k);
  return g.vee((k - Matrix::Identity(g.ambient(), g.ambient())) / h);
}

/// Left-trivialized derivative d_l tau_xi(eta).
inline Vector dtau_left(const LieAlgebra& g, TauKind kind, const Vector& xi, const Vector& eta, double h) {
  if (kind == TauKind::exp) return g.dexp_left(xi, eta);
  const Matrix m = Matrix::Identity(g.ambient(), g.ambient()) + h * g.hat(xi);
  Eigen::FullPivLU<Matrix> lu(m);
  if (!lu.isInvertible() || lu.rcond() < 1e-14) throw Error(ErrorCode::SingularTau, "I + hX is singular");
  return g.vee(lu.solve(h * g.hat(eta)));
}

inline Matrix dtau_left_matrix(const LieAlgebra& g, TauKind kind, const Vector& xi, double h) {
  if (kind == TauKind::exp) return g.dexp_left_matrix(xi);
  Matrix m(g.dim(), g.dim());
  for (int a = 0; a < g.dim(); ++a) m.col(a) = dtau_left(g, kind, xi, Vector::Unit(g.dim(), a), h);
  return m;
}

inline Vector dtau_inv_left(const LieAlgebra& g, TauKind kind, const Vector& xi, const Vector& zeta, double h) {
  if (kind == TauKind::exp) return g.dexpinv_left(xi, zeta);
  return solve_checked(dtau_left_matrix(g, kind, xi, h), zeta, ErrorCode::SingularTau);
}

}  // namespace gvi
