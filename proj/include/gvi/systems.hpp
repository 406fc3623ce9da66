#pragma once

// Built-in Lagrangians, all with analytic derivatives.

#include <cmath>
#include <string>
#include <vector>

#include "gvi/dynamics.hpp"

namespace gvi::systems {

/// L = |v|^2 / 2 - omega^2 |q|^2 / 2 on TR^n.
inline LagrangianSystem harmonic_oscillator(int n = 1, double omega = 1.0) {
  const double w2 = omega * omega;
  LagrangianDerivatives d;
  d.dx = [w2](const Vector& q, const Vector&) -> Vector { return -w2 * q; };
  d.dy = [](const Vector&, const Vector& v) -> Vector { return v; };
  d.dyy = [n](const Vector&, const Vector&) -> Matrix { return Matrix::Identity(n, n); };
  d.dyx = [n](const Vector&, const Vector&) -> Matrix { return Matrix::Zero(n, n); };
  return LagrangianSystem(
      Instance::pair(n),
      [w2](const Vector& q, const Vector& v) { return 0.5 * v.squaredNorm() - 0.5 * w2 * q.squaredNorm(); },
      std::move(d), "harmonic_oscillator");
}

inline LagrangianSystem free_particle(int n = 1) {
  LagrangianDerivatives d;
  d.dx = [](const Vector& q, const Vector&) -> Vector { return Vector::Zero(q.size()); };
  d.dy = [](const Vector&, const Vector& v) -> Vector { return v; };
  d.dyy = [n](const Vector&, const Vector&) -> Matrix { return Matrix::Identity(n, n); };
  d.dyx = [n](const Vector&, const Vector&) -> Matrix { return Matrix::Zero(n, n); };
  return LagrangianSystem(
      Instance::pair(n), [](const Vector&, const Vector& v) { return 0.5 * v.squaredNorm(); }, std::move(d),
      "free_particle");
}

/// L = v^2 / 2 + omega^2 cos q on TR.
inline LagrangianSystem pendulum(double omega = 1.0) {
  const double w2 = omega * omega;
  LagrangianDerivatives d;
  d.dx = [w2](const Vector& q, const Vector&) -> Vector { return Vector::Constant(1, -w2 * std::sin(q(0))); };
  d.dy = [](const Vector&, const Vector& v) -> Vector { return v; };
  d.dyy = [](const Vector&, const Vector&) -> Matrix { return Matrix::Identity(1, 1); };
  d.dyx = [](const Vector&, const Vector&) -> Matrix { return Matrix::Zero(1, 1); };
  return LagrangianSystem(
      Instance::pair(1), [w2](const Vector& q, const Vector& v) { return 0.5 * v(0) * v(0) + w2 * std::cos(q(0)); },
      std::move(d), "pendulum");
}

/// Free rigid body on SO(3): l(xi) = xi^T diag(I) xi / 2.
inline LagrangianSystem rigid_body(double i1, double i2, double i3) {
  if (!(i1 > 0.0 && i2 > 0.0 && i3 > 0.0)) throw Error(ErrorCode::InvalidArgument, "inertia must be positive");
  const Eigen::Vector3d inertia(i1, i2, i3);
  LagrangianDerivatives d;
  d.dx = [](const Vector&, const Vector&) -> Vector { return Vector(0); };
  d.dy = [inertia](const Vector&, const Vector& xi) -> Vector { return inertia.cwiseProduct(xi.head<3>()); };
  d.dyy = [inertia](const Vector&, const Vector&) -> Matrix { return Matrix(inertia.asDiagonal()); };
  d.dyx = [](const Vector&, const Vector&) -> Matrix { return Matrix::Zero(3, 0); };
  return LagrangianSystem(
      Instance::group(LieAlgebra::so3()),
      [inertia](const Vector&, const Vector& xi) { return 0.5 * xi.dot(inertia.cwiseProduct(xi.head<3>())); },
      std::move(d), "rigid_body");
}

/// Coupled rigid body and point mass on SO(3) x (R^3 x R^3):
/// l = xi^T I xi / 2 + m |xdot|^2 / 2 + c xi . (x cross xdot) - m g x_3.
/// Regular while c^2 |x|^2 < min(I) m; the fiber Hessian loses definiteness beyond.
inline LagrangianSystem heavy_top_trivial_bundle(const Eigen::Vector3d& inertia, double mass, double gravity,
                                                 double coupling) {
  if (!(inertia.minCoeff() > 0.0) || !(mass > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "inertia and mass must be positive");
  }
  const double c = coupling;
  const double mg = mass * gravity;
  LagrangianDerivatives d;
  d.dx = [c, mg](const Vector&, const Vector& y) -> Vector {
    const Eigen::Vector3d xi = y.head<3>(), xd = y.tail<3>();
    Eigen::Vector3d g = c * xd.cross(xi);
    g.z() -= mg;
    return g;
  };
  d.dy = [inertia, mass, c](const Vector& x, const Vector& y) -> Vector {
    const Eigen::Vector3d xi = y.head<3>(), xd = y.tail<3>(), q = x;
    Vector g(6);
    g.head<3>() = inertia.cwiseProduct(xi) + c * q.cross(xd);
    g.tail<3>() = mass * xd + c * xi.cross(q);
    return g;
  };
  d.dyy = [inertia, mass, c](const Vector& x, const Vector&) -> Matrix {
    Matrix h = Matrix::Zero(6, 6);
    h.topLeftCorner<3, 3>() = inertia.asDiagonal();
    h.bottomRightCorner<3, 3>() = mass * Eigen::Matrix3d::Identity();
    h.topRightCorner<3, 3>() = c * skew3(x);
    h.bottomLeftCorner<3, 3>() = -c * skew3(x);
    return h;
  };
  d.dyx = [c](const Vector&, const Vector& y) -> Matrix {
    Matrix h(6, 3);
    h.topRows<3>() = -c * skew3(y.tail<3>());
    h.bottomRows<3>() = c * skew3(y.head<3>());
    return h;
  };
  return LagrangianSystem(
      Instance::bundle(LieAlgebra::so3(), 3),
      [inertia, mass, c, mg](const Vector& x, const Vector& y) {
        const Eigen::Vector3d xi = y.head<3>(), xd = y.tail<3>(), q = x;
        return 0.5 * xi.dot(inertia.cwiseProduct(xi)) + 0.5 * mass * xd.squaredNorm() + c * xi.dot(q.cross(xd)) -
               mg * q.z();
      },
      std::move(d), "heavy_top_trivial_bundle");
}

/// L = y^T M y / 2 - sum_i sum_k coeffs[i][k] x_i^k on any instance; M symmetric positive definite.
inline LagrangianSystem quadratic(Instance instance, Matrix mass, std::vector<std::vector<double>> potential = {}) {
  const int d = instance.fiber_dim();
  const int m = instance.base_dim();
  if (mass.rows() != d || mass.cols() != d) throw Error(ErrorCode::InvalidArgument, "mass matrix has wrong shape");
  if ((mass - mass.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw Error(ErrorCode::InvalidArgument, "mass matrix must be symmetric");
  }
  if (static_cast<int>(potential.size()) > m) throw Error(ErrorCode::InvalidArgument, "too many potential rows");
  potential.resize(m);
  auto v = [potential](const Vector& x) {
    double s = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      double p = 0.0;
      for (auto it = potential[i].rbegin(); it != potential[i].rend(); ++it) p = p * x(i) + *it;
      s += p;
    }
    return s;
  };
  LagrangianDerivatives der;
  der.dx = [potential](const Vector& x, const Vector&) -> Vector {
    Vector g(x.size());
    for (int i = 0; i < x.size(); ++i) {
      double dp = 0.0;
      const auto& c = potential[i];
      for (int k = static_cast<int>(c.size()) - 1; k >= 1; --k) dp = dp * x(i) + k * c[k];
      g(i) = -dp;
    }
    return g;
  };
  der.dy = [mass](const Vector&, const Vector& y) -> Vector { return mass * y; };
  der.dyy = [mass](const Vector&, const Vector&) -> Matrix { return mass; };
  der.dyx = [d, m](const Vector&, const Vector&) -> Matrix { return Matrix::Zero(d, m); };
  return LagrangianSystem(
      std::move(instance), [mass, v](const Vector& x, const Vector& y) { return 0.5 * y.dot(mass * y) - v(x); },
      std::move(der), "quadratic");
}

}  // namespace gvi::systems
