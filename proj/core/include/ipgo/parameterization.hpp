#pragma once

#include <cstddef>
#include <cstdint>

#include "ipgo/linalg.hpp"

namespace ipgo {

// One insert (prefix or suffix): V = R2(theta2) R1(theta1) basis coeffs^T.
//   basis:  d x m, orthonormal columns
//   coeffs: N x m, entries in [-1, 1]
//   theta1, theta2 in (-pi/2, pi/2]
struct InsertBlock {
  Mat basis;
  Mat coeffs;
  double theta1 = 0.0;
  double theta2 = 0.0;

  std::size_t dim() const noexcept { return basis.rows(); }
  std::size_t rank() const noexcept { return basis.cols(); }
  std::size_t tokens() const noexcept { return coeffs.rows(); }
  friend bool operator==(const InsertBlock&, const InsertBlock&) = default;
};

// The full trainable set: bases, coefficients and four angles.
struct InsertionParams {
  InsertBlock prefix;
  InsertBlock suffix;

  std::size_t dim() const noexcept { return prefix.dim(); }
  friend bool operator==(const InsertionParams&, const InsertionParams&) = default;
};

// Gradient (or any other per-parameter quantity) with the exact layout of
// InsertionParams.
struct ParamGrads {
  InsertBlock prefix;
  InsertBlock suffix;

  static ParamGrads zeros_like(const InsertionParams& params);

  double global_norm() const;
  void scale(double s);
  ParamGrads& operator+=(const ParamGrads& other);
  bool all_finite() const;
  friend bool operator==(const ParamGrads&, const ParamGrads&) = default;
};

// 2x2 [[cos, -sin], [sin, cos]].
Mat elementary_rotation(double theta);

// (I_{d/2} kron R_e(theta)) x: rotates coordinate pairs (0,1), (2,3), ...
// of every column. d must be even.
Mat apply_r1(double theta, const Mat& x);

// Rotates pairs (1,2), (3,4), ..., (d-3,d-2) and the wraparound pair
// (d-1, 0), where coordinate d-1 takes the first slot (zero-based indices).
Mat apply_r2(double theta, const Mat& x);

// Checked forward: validates orthonormality (1e-8), the coefficient box and
// the angle range, then returns the d x N insert.
Mat build_insert(const InsertBlock& block);
// Same map with no feasibility checks (shapes are still validated).
Mat build_insert_unchecked(const InsertBlock& block);

// Exact reverse pass of build_insert for upstream gradient dv = dL/dV.
InsertBlock backward_insert(const InsertBlock& block, const Mat& dv);

// Throws kConstraintViolation naming the first violated constraint.
void validate_block(const InsertBlock& block, double ortho_tol = 1e-8);
void validate_params(const InsertionParams& params, double ortho_tol = 1e-10);

struct InsertShape {
  std::size_t dim = 0;
  std::size_t m_pre = 0;
  std::size_t m_suff = 0;
  std::size_t n_pre = 0;
  std::size_t n_suff = 0;
};

// Bases from orthonormalized Gaussian seeds, coefficients ~ U(-0.1, 0.1),
// angles zero.
InsertionParams init_params(const InsertShape& shape, std::uint64_t seed);

std::size_t param_count(const InsertionParams& params);

}  // namespace ipgo
