#include <gtest/gtest.h>

#include <cmath>

#include "ipgo/error.hpp"
#include "ipgo/rotation_demo.hpp"

namespace ipgo {
namespace {

Quadratic2d diag_quadratic(double a, double b, double sx, double sy) {
  return {Mat::from_rows({{a, 0}, {0, b}}), Mat::from_rows({{sx}, {sy}})};
}

// Steepest descent with exact line search, written against the matrix form
// f(x) = ||A(x - x*)||^2 so it shares nothing with the library code.
std::vector<std::array<double, 2>> reference_plain_gd(const Quadratic2d& q, std::size_t steps) {
  const Mat m = matmul_tn(q.a, q.a);
  double x = 0.0, y = 0.0;
  std::vector<std::array<double, 2>> pts{{x, y}};
  for (std::size_t i = 0; i < steps; ++i) {
    const double ex = x - q.x_star(0, 0), ey = y - q.x_star(1, 0);
    const double gx = 2 * (m(0, 0) * ex + m(0, 1) * ey);
    const double gy = 2 * (m(1, 0) * ex + m(1, 1) * ey);
    const double num = gx * gx + gy * gy;
    const double den = 2 * (gx * (m(0, 0) * gx + m(0, 1) * gy) + gy * (m(1, 0) * gx + m(1, 1) * gy));
    if (den == 0.0) break;
    x -= num / den * gx;
    y -= num / den * gy;
    pts.push_back({x, y});
  }
  return pts;
}

TEST(RotationDemo, StartingAtOptimumGivesEmptyPath) {
  const Quadratic2d q = diag_quadratic(1.0, 3.0, 0.5, -0.25);
  const RotationPath r = rotation_descent_2d(q, q.x_star);
  EXPECT_EQ(r.path_length, 0.0);
  EXPECT_EQ(r.steps, 0u);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(plain_gd_2d(q, q.x_star).path_length, 0.0);
}

TEST(RotationDemo, RejectsNonSpdMatrix) {
  EXPECT_THROW(rotation_descent_2d(diag_quadratic(1.0, -2.0, 1, 1), Mat(2, 1)), Error);
  Quadratic2d asym{Mat::from_rows({{2, 1}, {0, 2}}), Mat(2, 1)};
  EXPECT_THROW(plain_gd_2d(asym, Mat(2, 1)), Error);
}

TEST(RotationDemo, PlainDescentMatchesReference) {
  const auto suite = quadratic_suite(5, 5.0, 50.0, 7);
  for (const auto& e : suite) {
    const DescentPath p = plain_gd_2d(e.quadratic, Mat(2, 1));
    const auto ref = reference_plain_gd(e.quadratic, std::min<std::size_t>(p.steps, 8));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_NEAR(p.points[i][0], ref[i][0], 1e-12);
      EXPECT_NEAR(p.points[i][1], ref[i][1], 1e-12);
    }
  }
}

TEST(RotationDemo, TangencyAndConvergenceOnSuite) {
  const auto suite = quadratic_suite(50, 5.0, 50.0, 2024);
  ASSERT_EQ(suite.size(), 50u);
  const SuiteComparison cmp = compare_on_suite(suite);
  for (const auto& row : cmp.rows) {
    EXPECT_GE(row.kappa, 5.0);
    EXPECT_LE(row.kappa, 50.0);
    EXPECT_LT(row.max_tangency_residual, 1e-10) << "quadratic " << row.index;
    EXPECT_LT(row.rotation_error, 1e-6) << "quadratic " << row.index;
    EXPECT_LT(row.plain_error, 1e-6) << "quadratic " << row.index;
  }
  EXPECT_GE(cmp.rotation_not_longer_fraction, 0.0);
  EXPECT_LE(cmp.rotation_not_longer_fraction, 1.0);
}

TEST(RotationDemo, RotationLineMovesAreRadialAfterFirstStep) {
  // After the first move every rotation leaves the gradient radial, so the
  // line-search move points along the radius and the total line length
  // collapses towards ||x*||.
  const auto suite = quadratic_suite(10, 5.0, 50.0, 99);
  for (const auto& e : suite) {
    const RotationPath r = rotation_descent_2d(e.quadratic, Mat(2, 1));
    ASSERT_TRUE(r.converged);
    for (double res : r.tangency_residuals) EXPECT_LT(res, 1e-10);
    EXPECT_EQ(r.theta_trace.size(), r.tangency_residuals.size());
    EXPECT_LE(r.path_length, frobenius_norm(e.quadratic.x_star) * 1.5);
  }
}

TEST(RotationDemo, SuiteIsSeeded) {
  const auto a = quadratic_suite(4, 5.0, 50.0, 1);
  const auto b = quadratic_suite(4, 5.0, 50.0, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i].quadratic.a, b[i].quadratic.a);
    EXPECT_EQ(a[i].quadratic.x_star, b[i].quadratic.x_star);
    // A = Q diag(1, kappa) Q^T: eigenvalue ratio is kappa.
    const Mat& m = a[i].quadratic.a;
    const double tr = m(0, 0) + m(1, 1), det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    const double disc = std::sqrt(tr * tr / 4 - det);
    EXPECT_NEAR((tr / 2 + disc) / (tr / 2 - disc), a[i].kappa, 1e-9 * a[i].kappa);
  }
}

}  // namespace
}  // namespace ipgo
