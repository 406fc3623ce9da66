#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gvi/exact.hpp"
#include "gvi/systems.hpp"

using namespace gvi;

namespace {

Vector v1(double a) { return Vector::Constant(1, a); }

// Closed-form action of the oscillator trajectory q(t) = (q0 sin(h-t) + q1 sin t) / sin h.
double ho_exact_dl(double q0, double q1, double h) {
  return ((q0 * q0 + q1 * q1) * std::cos(h) - 2 * q0 * q1) / (2 * std::sin(h));
}

// Composite Simpson quadrature of that trajectory's Lagrangian, independent of the formula above.
double ho_action_simpson(double q0, double q1, double h) {
  const int n = 4000;
  auto lag = [&](double t) {
    const double q = (q0 * std::sin(h - t) + q1 * std::sin(t)) / std::sin(h);
    const double v = (-q0 * std::cos(h - t) + q1 * std::cos(t)) / std::sin(h);
    return 0.5 * v * v - 0.5 * q * q;
  };
  double s = lag(0) + lag(h);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * lag(h * i / n);
  return s * h / (3.0 * n);
}

}  // namespace

TEST(ExactOracle, ClosedFormMatchesQuadrature) {
  for (double h : {0.05, 0.5, 1.3})
    for (auto [q0, q1] : {std::pair{0.0, 1.0}, {0.3, -0.7}, {1.0, 1.0}}) {
      EXPECT_NEAR(ho_exact_dl(q0, q1, h), ho_action_simpson(q0, q1, h), 1e-10);
    }
  EXPECT_NEAR(ho_exact_dl(0, 1, 0.5), std::cos(0.5) / (2 * std::sin(0.5)), 1e-15);
}

TEST(Exact, ExponentialMap) {
  const auto ho = systems::harmonic_oscillator(1);
  const auto g = exponential_map(ho, AlgebroidVector::tangent(v1(0), v1(1)), 0.3);
  EXPECT_NEAR(g.x1(0), std::sin(0.3), 1e-11);
  const auto z = exponential_map(ho, AlgebroidVector::tangent(v1(0.4), v1(1)), 0.0);
  EXPECT_EQ(z.x0(0), 0.4);
  EXPECT_EQ(z.x1(0), 0.4);
  const auto iso = systems::rigid_body(1, 1, 1);
  const Vector xi = Eigen::Vector3d(0.2, 0.5, -0.4);
  EXPECT_LE((exponential_map(iso, AlgebroidVector::algebra(xi), 0.7).k - LieAlgebra::so3()->exp(0.7 * xi)).norm(), 1e-10);
}

TEST(Exact, RetractionsHarmonicOscillator) {
  const auto ho = systems::harmonic_oscillator(1);
  const double h = 0.1;
  const auto g = GroupoidElement::pair(v1(0), v1(std::sin(h)));
  const auto s = shoot(ho, g, h);
  EXPECT_NEAR(s.minus.xdot(0), 1.0, 1e-10);
  EXPECT_NEAR(s.minus.x(0), 0.0, 0.0);
  EXPECT_NEAR(s.plus.xdot(0), std::cos(h), 1e-10);
  EXPECT_NEAR(s.plus.x(0), std::sin(h), 1e-12);
  // R+ is the flow of R-
  const auto fl = flow(ho, s.minus, h);
  EXPECT_NEAR(fl.xdot(0), s.plus.xdot(0), 1e-10);
}

TEST(Exact, FreeParticleIsOneNewtonStep) {
  const auto fp = systems::free_particle(2);
  const auto g = GroupoidElement::pair(Eigen::Vector2d(0.2, -1), Eigen::Vector2d(1.4, 0.5));
  const double h = 0.3;
  const auto s = shoot(fp, g, h);
  EXPECT_LE(s.iterations, 1);
  EXPECT_LE((s.minus.xdot - (g.x1 - g.x0) / h).norm(), 1e-12);
  EXPECT_LE((s.plus.xdot - s.minus.xdot).norm(), 1e-12);
  EXPECT_LE((s.plus.x - g.x1).norm(), 1e-12);
  EXPECT_NEAR(exact_discrete_lagrangian(fp, g, h), (g.x1 - g.x0).squaredNorm() / (2 * h), 1e-12);
}

TEST(Exact, RigidBodyRoundTrip) {
  const auto rb = systems::rigid_body(1, 2, 3);
  const auto so3 = LieAlgebra::so3();
  std::mt19937 rng(9);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 5; ++trial) {
    const Vector xi = Eigen::Vector3d(n(rng), n(rng), n(rng));
    const double h = 0.2;
    const auto g = GroupoidElement::group(so3->exp(h * xi));
    const auto a = retraction_minus(rb, g, h);
    const auto back = exponential_map(rb, a, h);
    EXPECT_LE(rb.instance().chart_coords(g, back).norm(), 1e-10);
  }
}

TEST(Exact, DiscreteLagrangianHarmonicOscillator) {
  const auto ho = systems::harmonic_oscillator(1);
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double h : {0.05, 0.5}) {
    for (int trial = 0; trial < 5; ++trial) {
      const double q0 = u(rng), q1 = u(rng);
      const auto g = GroupoidElement::pair(v1(q0), v1(q1));
      const auto e = exact_evaluate(ho, g, h);
      EXPECT_NEAR(e.value, ho_exact_dl(q0, q1, h), 1e-8);
      // the exact transforms, derived from the closed form by differentiation
      EXPECT_NEAR(e.minus.p(0), (q1 - q0 * std::cos(h)) / std::sin(h), 1e-8);
      EXPECT_NEAR(e.plus.p(0), (q1 * std::cos(h) - q0) / std::sin(h), 1e-8);
      EXPECT_EQ(e.minus.x(0), q0);
      EXPECT_EQ(e.plus.x(0), q1);
    }
  }
}

TEST(Exact, QuadratureOrderStable) {
  const auto ho = systems::harmonic_oscillator(1);
  const auto g = GroupoidElement::pair(v1(0.3), v1(-0.4));
  ShootingConfig cfg;
  const auto s = shoot(ho, g, 0.4, cfg);
  EXPECT_NEAR(action(ho, s.trajectory, 10), action(ho, s.trajectory, 20), 1e-11);
}

TEST(Exact, EquilibriumIdentityArrow) {
  // V = -2 + q^2/2 so L(0, 0) = 2 and q = 0 is an equilibrium
  const auto sys = systems::quadratic(Instance::pair(1), Matrix::Identity(1, 1), {{-2.0, 0.0, 0.5}});
  const auto g = sys.instance().identity_at(v1(0.0));
  EXPECT_NEAR(exact_discrete_lagrangian(sys, g, 0.25), 0.5, 1e-13);
}

TEST(Exact, ShootingFailsOutsideBasin) {
  // beyond h = pi the oscillator's two-point problem loses uniqueness
  const auto ho = systems::harmonic_oscillator(1);
  ShootingConfig cfg;
  cfg.max_newton_iters = 5;
  try {
    shoot(ho, GroupoidElement::pair(v1(0.0), v1(1.0)), std::acos(-1.0), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::NoConvergence || e.code() == ErrorCode::SingularJacobian) << e.what();
  }
}

TEST(Certify, HarmonicOscillatorBox) {
  CertifyConfig cfg;
  cfg.R0 = 1.0;
  cfg.R1 = 2.0;
  cfg.target_radius = 0.5;
  const auto c = certify_h0(systems::harmonic_oscillator(1), cfg);
  EXPECT_TRUE(c.exact_constants);
  EXPECT_DOUBLE_EQ(c.M, 1.0);
  EXPECT_DOUBLE_EQ(c.theta1, 1.0);
  EXPECT_DOUBLE_EQ(c.theta2, 0.0);
  EXPECT_DOUBLE_EQ(c.h0, 2.0);
  EXPECT_NEAR(c.R, 0.5, 1e-15);
  EXPECT_TRUE(c.theta_condition && c.position_condition && c.velocity_condition);
  EXPECT_FALSE(c.unbounded);
  // the lower edge of the feasible range: 2 h0 - h0^2 / 2 >= 0.5
  cfg.h_max = 0.27;
  EXPECT_DOUBLE_EQ(certify_h0(systems::harmonic_oscillator(1), cfg).h0, 0.27);
  cfg.h_max = 0.267;
  EXPECT_THROW(certify_h0(systems::harmonic_oscillator(1), cfg), Error);
}

TEST(Certify, FreeParticleUnbounded) {
  CertifyConfig cfg;
  cfg.R0 = 1.0;
  cfg.R1 = 2.0;
  cfg.h_max = 5.0;
  const auto c = certify_h0(systems::free_particle(1), cfg);
  EXPECT_TRUE(c.unbounded);
  EXPECT_DOUBLE_EQ(c.h0, 5.0);
}

TEST(Certify, StiffBound) {
  CertifyConfig cfg;
  cfg.R0 = 1.0;
  cfg.R1 = 100.0;
  cfg.target_radius = 0.01;
  const auto c = certify_h0(systems::harmonic_oscillator(1, 10.0), cfg);
  EXPECT_DOUBLE_EQ(c.theta1, 100.0);
  EXPECT_LT(c.h0, std::sqrt(8.0 / 100.0));
  EXPECT_LT(c.theta1 * c.h0 * c.h0 / 8.0, 1.0);
}

TEST(Certify, NonlinearInflatesSampledBounds) {
  // pendulum-like potential: xi = -sin q is not affine
  const LagrangianSystem pend(Instance::pair(1), [](const Vector& q, const Vector& v) {
    return 0.5 * v(0) * v(0) + std::cos(q(0));
  });
  CertifyConfig cfg;
  cfg.R0 = 1.0;
  cfg.R1 = 2.0;
  const auto c = certify_h0(pend, cfg);
  EXPECT_FALSE(c.exact_constants);
  EXPECT_NEAR(c.theta1, 1.2, 1e-3);
  EXPECT_NEAR(c.M, 1.2 * std::sin(1.0), 2e-2);
  EXPECT_TRUE(c.theta_condition && c.position_condition && c.velocity_condition);
}

TEST(Certify, ShootingConvergesInsideCertifiedBall) {
  CertifyConfig cfg;
  cfg.R0 = 1.0;
  cfg.R1 = 2.0;
  const auto ho = systems::harmonic_oscillator(1);
  const auto c = certify_h0(ho, cfg);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 10; ++i) {
    const auto g = GroupoidElement::pair(v1(0.0), v1(c.R * u(rng)));
    EXPECT_NO_THROW(shoot(ho, g, c.h0 / 2));
  }
}
