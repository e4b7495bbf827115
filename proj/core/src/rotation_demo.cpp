#include "ipgo/rotation_demo.hpp"

#include <cmath>
#include <numbers>

#include "ipgo/error.hpp"
#include "ipgo/rng.hpp"

namespace ipgo {

namespace {

using Vec2 = std::array<double, 2>;

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kCircleGrid = 256;

double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }
double norm(const Vec2& a) { return std::hypot(a[0], a[1]); }
Vec2 perp(const Vec2& a) { return {-a[1], a[0]}; }  // R(pi/2) a

// Works on M = A^T A and x_star directly; f(x) = (x - x*)^T M (x - x*).
class Problem {
 public:
  explicit Problem(const Quadratic2d& q) {
    validate_quadratic(q);
    const Mat m = matmul_tn(q.a, q.a);
    m_ = {m(0, 0), m(0, 1), m(1, 0), m(1, 1)};
    star_ = {q.x_star(0, 0), q.x_star(1, 0)};
  }

  Vec2 hess_apply(const Vec2& v) const {
    return {m_[0] * v[0] + m_[1] * v[1], m_[2] * v[0] + m_[3] * v[1]};
  }
  double value(const Vec2& x) const {
    const Vec2 e{x[0] - star_[0], x[1] - star_[1]};
    return dot(e, hess_apply(e));
  }
  Vec2 gradient(const Vec2& x) const {
    const Vec2 me = hess_apply({x[0] - star_[0], x[1] - star_[1]});
    return {2.0 * me[0], 2.0 * me[1]};
  }
  // Exact minimizer of f(x - alpha g) over alpha.
  double line_step(const Vec2& g) const {
    const double curvature = dot(g, hess_apply(g));
    return curvature > 0.0 ? 0.5 * dot(g, g) / curvature : 0.0;
  }
  const Vec2& star() const { return star_; }

 private:
  std::array<double, 4> m_{};
  Vec2 star_{};
};

Vec2 on_circle(double radius, double phi) { return {radius * std::cos(phi), radius * std::sin(phi)}; }

// d/dphi f(r (cos phi, sin phi)) = grad f(x)^T R(pi/2) x.
double circle_slope(const Problem& p, double radius, double phi) {
  const Vec2 x = on_circle(radius, phi);
  return dot(p.gradient(x), perp(x));
}

// Global minimizer of f on the circle of radius `radius`: coarse grid, then
// bisection on the slope inside the bracket around the best grid point.
double minimize_on_circle(const Problem& p, double radius, double phi_start) {
  const double spacing = 2.0 * kPi / static_cast<double>(kCircleGrid);
  std::size_t best = 0;
  double best_value = p.value(on_circle(radius, phi_start));
  for (std::size_t i = 1; i < kCircleGrid; ++i) {
    const double v = p.value(on_circle(radius, phi_start + spacing * static_cast<double>(i)));
    if (v < best_value) {
      best_value = v;
      best = i;
    }
  }
  const double center = phi_start + spacing * static_cast<double>(best);
  const double slope = circle_slope(p, radius, center);
  if (slope == 0.0) return center;
  double lo = slope < 0.0 ? center : center - spacing;
  double hi = slope < 0.0 ? center + spacing : center;
  if (!(circle_slope(p, radius, lo) < 0.0 && circle_slope(p, radius, hi) > 0.0)) {
    // The grid point is a minimum of the sampled values but the slope does
    // not bracket a root; keep the grid point.
    return center;
  }
  for (int iter = 0; iter < 200 && hi - lo > 0.0; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double s = circle_slope(p, radius, mid);
    if (s == 0.0) return mid;
    (s < 0.0 ? lo : hi) = mid;
  }
  return std::abs(circle_slope(p, radius, lo)) <= std::abs(circle_slope(p, radius, hi)) ? lo : hi;
}

double wrap_to_pi(double angle) { return std::remainder(angle, 2.0 * kPi); }

}  // namespace

double Quadratic2d::value(const Mat& x) const {
  const Mat e = matmul(a, x - x_star);
  return frobenius_dot(e, e);
}

Mat Quadratic2d::gradient(const Mat& x) const {
  Mat g = matmul_tn(a, matmul(a, x - x_star));
  g *= 2.0;
  return g;
}

void validate_quadratic(const Quadratic2d& q) {
  if (q.a.rows() != 2 || q.a.cols() != 2 || q.x_star.rows() != 2 || q.x_star.cols() != 1) {
    throw Error(ErrorCode::kDimensionMismatch, "quadratic needs a 2x2 matrix and a 2x1 optimum");
  }
  const double scale = std::max(1.0, max_abs(q.a));
  if (std::abs(q.a(0, 1) - q.a(1, 0)) > 1e-12 * scale) {
    throw Error(ErrorCode::kInvalidArgument, "quadratic matrix is not symmetric");
  }
  const double det = q.a(0, 0) * q.a(1, 1) - q.a(0, 1) * q.a(1, 0);
  if (!(q.a(0, 0) > 0.0) || !(det > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "quadratic matrix is not positive definite");
  }
  require_finite(q.x_star, "quadratic optimum");
}

Mat DescentPath::final_point() const {
  const Vec2& last = points.back();
  return Mat::column(last);
}

DescentPath plain_gd_2d(const Quadratic2d& q, const Mat& x0, const DescentOptions& opts) {
  const Problem p(q);
  DescentPath path;
  Vec2 x{x0(0, 0), x0(1, 0)};
  path.points.push_back(x);
  for (std::size_t step = 0; step < opts.max_steps; ++step) {
    const Vec2 g = p.gradient(x);
    if (norm(g) <= opts.grad_tol) {
      path.converged = true;
      break;
    }
    const double alpha = p.line_step(g);
    const Vec2 next{x[0] - alpha * g[0], x[1] - alpha * g[1]};
    path.path_length += std::hypot(next[0] - x[0], next[1] - x[1]);
    x = next;
    path.points.push_back(x);
    ++path.steps;
  }
  if (!path.converged) path.converged = norm(p.gradient(x)) <= opts.grad_tol;
  return path;
}

RotationPath rotation_descent_2d(const Quadratic2d& q, const Mat& x0, const DescentOptions& opts) {
  const Problem p(q);
  RotationPath path;
  Vec2 x{x0(0, 0), x0(1, 0)};
  double theta = 0.0;
  path.points.push_back(x);

  for (std::size_t step = 0; step < opts.max_steps; ++step) {
    if (norm(p.gradient(x)) <= opts.grad_tol) {
      path.converged = true;
      break;
    }
    const double radius = norm(x);
    // The first move (and any move from the origin) has no circle to search.
    if (step > 0 && radius > 0.0) {
      const double phi_old = std::atan2(x[1], x[0]);
      const double phi_new = minimize_on_circle(p, radius, phi_old);
      const double delta = wrap_to_pi(phi_new - phi_old);
      theta += delta;
      path.arc_length += radius * std::abs(delta);
      x = on_circle(radius, phi_new);
      path.theta_trace.push_back(theta);
      path.tangency_residuals.push_back(std::abs(dot(p.gradient(x), perp(x))));
    }
    const Vec2 g = p.gradient(x);
    const double alpha = p.line_step(g);
    const Vec2 next{x[0] - alpha * g[0], x[1] - alpha * g[1]};
    path.path_length += std::hypot(next[0] - x[0], next[1] - x[1]);
    x = next;
    path.points.push_back(x);
    ++path.steps;
  }
  if (!path.converged) path.converged = norm(p.gradient(x)) <= opts.grad_tol;
  return path;
}

std::vector<SuiteEntry> quadratic_suite(std::size_t count, double kappa_lo, double kappa_hi,
                                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteEntry> suite;
  suite.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double kappa = rng.uniform(kappa_lo, kappa_hi);
    const double angle = rng.uniform(0.0, kPi);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    // Q diag(1, kappa) Q^T, written out so the result is exactly symmetric.
    const double a00 = c * c + kappa * s * s;
    const double a11 = s * s + kappa * c * c;
    const double a01 = c * s * (1.0 - kappa);
    SuiteEntry entry;
    entry.kappa = kappa;
    entry.quadratic.a = Mat::from_rows({{a00, a01}, {a01, a11}});
    entry.quadratic.x_star = Mat::from_rows({{rng.uniform(-2.0, 2.0)}, {rng.uniform(-2.0, 2.0)}});
    suite.push_back(std::move(entry));
  }
  return suite;
}

SuiteComparison compare_on_suite(const std::vector<SuiteEntry>& suite, const DescentOptions& opts) {
  SuiteComparison out;
  const Mat origin(2, 1);
  std::size_t not_longer = 0;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const auto& q = suite[i].quadratic;
    const RotationPath rot = rotation_descent_2d(q, origin, opts);
    const DescentPath plain = plain_gd_2d(q, origin, opts);
    SuiteRow row;
    row.index = i;
    row.kappa = suite[i].kappa;
    row.rotation_length = rot.path_length;
    row.plain_length = plain.path_length;
    row.rotation_steps = rot.steps;
    row.plain_steps = plain.steps;
    row.rotation_error = frobenius_norm(rot.final_point() - q.x_star);
    row.plain_error = frobenius_norm(plain.final_point() - q.x_star);
    for (double r : rot.tangency_residuals) {
      row.max_tangency_residual = std::max(row.max_tangency_residual, r);
    }
    if (rot.path_length <= plain.path_length) ++not_longer;
    out.rows.push_back(row);
  }
  if (!suite.empty()) {
    out.rotation_not_longer_fraction =
        static_cast<double>(not_longer) / static_cast<double>(suite.size());
  }
  return out;
}

}  // namespace ipgo
