#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "ipgo/linalg.hpp"

namespace ipgo {

// f(x) = ||A (x - x_star)||^2 on R^2, A symmetric positive definite.
struct Quadratic2d {
  Mat a;       // 2 x 2
  Mat x_star;  // 2 x 1

  double value(const Mat& x) const;
  Mat gradient(const Mat& x) const;
};

// Throws kInvalidArgument unless A is 2x2 symmetric positive definite.
void validate_quadratic(const Quadratic2d& q);

struct DescentOptions {
  std::size_t max_steps = 200000;
  // Stop once ||grad f|| falls to this value.
  double grad_tol = 1e-11;
};

struct DescentPath {
  std::vector<std::array<double, 2>> points;
  // Total length of the straight-line (line-search) moves.
  double path_length = 0.0;
  std::size_t steps = 0;
  bool converged = false;

  Mat final_point() const;
};

struct RotationPath : DescentPath {
  // theta after every rotation update, x = R(theta) y.
  std::vector<double> theta_trace;
  // |grad f(x)^T (dR/dtheta) y| at each accepted rotation.
  std::vector<double> tangency_residuals;
  // Length of the circular arcs traversed by the rotations. Not part of
  // path_length: a rotation changes the parameterization, not a line move.
  double arc_length = 0.0;
};

// Rotation-assisted descent: the first move is a line search along the
// negative gradient. Every later step picks theta so that x = R(theta) y sits
// where the circle of radius ||x|| touches a contour of f (the minimizer of f
// on that circle, where the gradient is radial), then line-searches exactly
// along the gradient from there.
RotationPath rotation_descent_2d(const Quadratic2d& q, const Mat& x0,
                                 const DescentOptions& opts = {});

// Exact line-search steepest descent.
DescentPath plain_gd_2d(const Quadratic2d& q, const Mat& x0, const DescentOptions& opts = {});

// Seeded suite: A = Q diag(1, kappa) Q^T with kappa ~ U[kappa_lo, kappa_hi]
// and a random rotation Q; x_star uniform in [-2, 2]^2.
struct SuiteEntry {
  Quadratic2d quadratic;
  double kappa = 0.0;
};
std::vector<SuiteEntry> quadratic_suite(std::size_t count, double kappa_lo, double kappa_hi,
                                        std::uint64_t seed);

struct SuiteRow {
  std::size_t index = 0;
  double kappa = 0.0;
  double rotation_length = 0.0;
  double plain_length = 0.0;
  std::size_t rotation_steps = 0;
  std::size_t plain_steps = 0;
  double rotation_error = 0.0;  // ||x_final - x_star||
  double plain_error = 0.0;
  double max_tangency_residual = 0.0;
};

struct SuiteComparison {
  std::vector<SuiteRow> rows;
  // Fraction of quadratics where rotation path_length <= plain path_length.
  double rotation_not_longer_fraction = 0.0;
};

// Runs both methods from the origin on every suite entry.
SuiteComparison compare_on_suite(const std::vector<SuiteEntry>& suite,
                                 const DescentOptions& opts = {});

}  // namespace ipgo
