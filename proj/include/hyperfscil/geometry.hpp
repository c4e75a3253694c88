#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace hyperfscil {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Margin kept between projected points and the ball boundary.
inline constexpr double kBallMargin = 1e-5;
// Ceiling for the artanh argument inside the distance.
inline constexpr double kAtanhCeil = 1.0 - 1e-7;
// Below this squared separation the distance gradient is treated as singular.
inline constexpr double kCoincidentSq = 1e-24;

/// Constant curvature of a Poincare ball. c == 0 selects the Euclidean /
/// cosine-similarity path throughout the library.
struct Curvature {
  double c;

  explicit Curvature(double value) : c(value) {
    if (!(value >= 0.0) || !std::isfinite(value))
      throw std::domain_error("curvature must be a finite nonnegative real");
  }

  double sqrt_c() const { return std::sqrt(c); }
  bool euclidean() const { return c == 0.0; }
};

inline void check_same_dim(const Vec& x, const Vec& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("vector dimension mismatch");
}

inline bool inside_ball(const Vec& x, Curvature c) {
  return c.c * x.squaredNorm() < 1.0;
}

inline void check_inside_ball(const Vec& x, Curvature c) {
  if (!inside_ball(x, c))
    throw std::domain_error("point lies on or outside the Poincare ball");
}

/// Rescales x to norm (1 - eps)/sqrt(c) when it falls outside that radius;
/// identity otherwise. Keeps downstream artanh/acosh arguments finite.
inline Vec ball_project(const Vec& x, Curvature c, double eps = kBallMargin) {
  if (c.euclidean()) return x;
  const double max_norm = (1.0 - eps) / c.sqrt_c();
  const double n = x.norm();
  if (n <= max_norm) return x;
  return x * (max_norm / n);
}

/// Mobius addition on the ball of curvature c:
///   x (+)_c y = [(1 + 2c<x,y> + c|y|^2) x + (1 - c|x|^2) y]
///               / (1 + 2c<x,y> + c^2 |x|^2 |y|^2)
inline Vec mobius_add(const Vec& x, const Vec& y, Curvature c) {
  check_same_dim(x, y);
  if (c.euclidean()) return x + y;
  check_inside_ball(x, c);
  check_inside_ball(y, c);
  const double xx = x.squaredNorm();
  const double yy = y.squaredNorm();
  const double xy = x.dot(y);
  const double denom = 1.0 + 2.0 * c.c * xy + c.c * c.c * xx * yy;
  Vec out = ((1.0 + 2.0 * c.c * xy + c.c * yy) * x + (1.0 - c.c * xx) * y) / denom;
  return ball_project(out, c);
}

/// Exponential map at the origin: v -> tanh(sqrt(c)|v|) * v / (sqrt(c)|v|).
/// The conformal factor lambda_0^c = 2 is already folded into the tanh
/// argument. c == 0 passes v through unchanged.
inline Vec exp_map_zero(const Vec& v, Curvature c) {
  if (!v.allFinite())
    throw std::domain_error("exp_map_zero: non-finite input");
  if (c.euclidean()) return v;
  const double n = v.norm();
  if (n == 0.0) return v;
  const double a = c.sqrt_c() * n;
  const Vec mapped = (std::tanh(a) / a) * v;
  return ball_project(mapped, c);
}

/// Geodesic distance between ball points:
///   d(x, y) = (2/sqrt(c)) artanh( sqrt(c) | (-x) (+)_c y | )
/// The c -> 0 limit is 2|x - y|, returned exactly at c == 0.
inline double hyperbolic_distance(const Vec& x, const Vec& y, Curvature c) {
  check_same_dim(x, y);
  if (c.euclidean()) return 2.0 * (x - y).norm();
  const Vec m = mobius_add(-x, y, c);
  double arg = c.sqrt_c() * m.norm();
  if (!std::isfinite(arg))
    throw std::domain_error("hyperbolic_distance: non-finite input");
  if (arg > kAtanhCeil) arg = kAtanhCeil;
  return (2.0 / c.sqrt_c()) * std::atanh(arg);
}

/// 2 - 2 cos(x, y), in [0, 4].
inline double cosine_distance(const Vec& x, const Vec& y) {
  check_same_dim(x, y);
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0)
    throw std::domain_error("cosine_distance: zero-norm input");
  double cosv = x.dot(y) / (nx * ny);
  if (cosv > 1.0) cosv = 1.0;
  if (cosv < -1.0) cosv = -1.0;
  return 2.0 - 2.0 * cosv;
}

struct DistanceGrad {
  Vec wrt_x;
  Vec wrt_y;
  bool coincident = false;  // subgradient 0 returned at x == y
};

/// Exact gradient of hyperbolic_distance, from the acosh closed form
///   d = (1/sqrt(c)) acosh(1 + 2c A / (Bx By)),
/// A = |x-y|^2, Bx = 1 - c|x|^2, By = 1 - c|y|^2.
/// At coincident points the gradient direction is undefined; zero vectors
/// are returned with the flag set.
inline DistanceGrad hyperbolic_distance_grad(const Vec& x, const Vec& y, Curvature c) {
  check_same_dim(x, y);
  DistanceGrad g;
  const Vec diff = x - y;
  const double A = diff.squaredNorm();
  if (A < kCoincidentSq) {
    g.wrt_x = Vec::Zero(x.size());
    g.wrt_y = Vec::Zero(x.size());
    g.coincident = true;
    return g;
  }
  if (c.euclidean()) {
    const double n = std::sqrt(A);
    g.wrt_x = 2.0 * diff / n;
    g.wrt_y = -g.wrt_x;
    return g;
  }
  check_inside_ball(x, c);
  check_inside_ball(y, c);
  const double bx = 1.0 - c.c * x.squaredNorm();
  const double by = 1.0 - c.c * y.squaredNorm();
  const double t = 2.0 * c.c * A / (bx * by);  // acosh argument minus one
  const double root = std::sqrt(t * (t + 2.0));
  const double scale = 1.0 / (c.sqrt_c() * root);
  // d t / d x and d t / d y
  const Vec tx = (2.0 * c.c / by) * (2.0 * diff / bx + (2.0 * c.c * A / (bx * bx)) * x);
  const Vec ty = (2.0 * c.c / bx) * (-2.0 * diff / by + (2.0 * c.c * A / (by * by)) * y);
  g.wrt_x = scale * tx;
  g.wrt_y = scale * ty;
  return g;
}

}  // namespace hyperfscil
