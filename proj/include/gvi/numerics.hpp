#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "gvi/error.hpp"

namespace gvi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline Vector concat(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

inline Vector concat(const Vector& a, const Vector& b, const Vector& c) {
  Vector out(a.size() + b.size() + c.size());
  out << a, b, c;
  return out;
}

/// 2-norm condition number; +inf for singular or empty-rank matrices.
inline double condition_number(const Matrix& m) {
  if (m.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  if (!(smax > 0.0) || !(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

/// Dense solve that reports a 2-norm condition number above `max_condition` through `code`.
inline Vector solve_checked(const Matrix& a, const Vector& b, ErrorCode code,
                            double max_condition = 1e13) {
  if (a.rows() == 0) return Vector(0);
  const double cond = condition_number(a);
  if (!(cond <= max_condition)) {
    throw Error(code, "matrix is singular or ill-conditioned (condition " + std::to_string(cond) + ")");
  }
  return a.partialPivLu().solve(b);
}

struct QuadratureRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

/// Gauss-Legendre rule with `points` nodes (exact for degree 2*points-1).
inline QuadratureRule gauss_legendre(int points) {
  if (points < 1) throw Error(ErrorCode::InvalidArgument, "quadrature needs at least one node");
  QuadratureRule rule;
  rule.nodes.resize(points);
  rule.weights.resize(points);
  const auto n = static_cast<unsigned>(points);
  for (int i = 0; i < points; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (points + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      const double p = std::legendre(n, x);
      const double pm = n > 0 ? std::legendre(n - 1, x) : 0.0;
      dp = points * (x * p - pm) / (x * x - 1.0);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double p = std::legendre(n, x);
    const double pm = std::legendre(n - 1, x);
    dp = points * (x * p - pm) / (x * x - 1.0);
    rule.nodes[i] = x;
    rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double ci95 = 0.0;  // half-width of the 95% interval on the slope
};

/// Ordinary least squares y = intercept + slope * x with a Student-t interval.
inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  const auto n = x.size();
  if (n < 2 || y.size() != n) throw Error(ErrorCode::InsufficientPoints, "need at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorCode::InsufficientPoints, "degenerate abscissae");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (n > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - fit.intercept - fit.slope * x[i];
      rss += r * r;
    }
    const double dof = static_cast<double>(n - 2);
    fit.slope_stderr = std::sqrt(rss / dof / sxx);
    boost::math::students_t dist(dof);
    fit.ci95 = boost::math::quantile(boost::math::complement(dist, 0.025)) * fit.slope_stderr;
  }
  return fit;
}

}  // namespace gvi
