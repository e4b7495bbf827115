#include "ipgo/parameterization.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "ipgo/error.hpp"
#include "ipgo/rng.hpp"

namespace ipgo {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

void require_even(const Mat& x) {
  if (x.rows() % 2 != 0 || x.rows() == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "rotation requires even embedding dimension, got " + std::to_string(x.rows()));
  }
}

// Rotates rows (i, j) of every column of x in place: (a, b) -> (c a - s b, s a + c b).
void rotate_pair(Mat& x, std::size_t i, std::size_t j, double c, double s) {
  for (std::size_t col = 0; col < x.cols(); ++col) {
    const double a = x(i, col);
    const double b = x(j, col);
    x(i, col) = c * a - s * b;
    x(j, col) = s * a + c * b;
  }
}

bool angle_in_range(double theta) { return theta > -kHalfPi && theta <= kHalfPi; }

void check_block_shapes(const InsertBlock& block, const char* where) {
  if (block.coeffs.cols() != block.basis.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(where) + ": basis " + block.basis.shape_string() +
                    " and coefficients " + block.coeffs.shape_string() + " disagree on rank");
  }
}

}  // namespace

ParamGrads ParamGrads::zeros_like(const InsertionParams& params) {
  ParamGrads g;
  for (auto [dst, src] : {std::pair{&g.prefix, &params.prefix}, {&g.suffix, &params.suffix}}) {
    dst->basis = Mat(src->basis.rows(), src->basis.cols());
    dst->coeffs = Mat(src->coeffs.rows(), src->coeffs.cols());
  }
  return g;
}

double ParamGrads::global_norm() const {
  const Mat angles = Mat::from_rows(
      {{prefix.theta1, prefix.theta2, suffix.theta1, suffix.theta2}});
  const std::array<const Mat*, 5> parts = {&prefix.basis, &suffix.basis, &prefix.coeffs,
                                           &suffix.coeffs, &angles};
  return ipgo::global_norm(parts);
}

void ParamGrads::scale(double s) {
  for (InsertBlock* b : {&prefix, &suffix}) {
    b->basis *= s;
    b->coeffs *= s;
    b->theta1 *= s;
    b->theta2 *= s;
  }
}

ParamGrads& ParamGrads::operator+=(const ParamGrads& other) {
  for (auto [dst, src] : {std::pair{&prefix, &other.prefix}, {&suffix, &other.suffix}}) {
    dst->basis += src->basis;
    dst->coeffs += src->coeffs;
    dst->theta1 += src->theta1;
    dst->theta2 += src->theta2;
  }
  return *this;
}

bool ParamGrads::all_finite() const {
  for (const InsertBlock* b : {&prefix, &suffix}) {
    if (!b->basis.all_finite() || !b->coeffs.all_finite() || !std::isfinite(b->theta1) ||
        !std::isfinite(b->theta2)) {
      return false;
    }
  }
  return true;
}

Mat elementary_rotation(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return Mat::from_rows({{c, -s}, {s, c}});
}

Mat apply_r1(double theta, const Mat& x) {
  require_even(x);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Mat y = x;
  for (std::size_t i = 0; i + 1 < x.rows(); i += 2) rotate_pair(y, i, i + 1, c, s);
  return y;
}

Mat apply_r2(double theta, const Mat& x) {
  require_even(x);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const std::size_t d = x.rows();
  Mat y = x;
  for (std::size_t i = 1; i + 1 < d; i += 2) rotate_pair(y, i, i + 1, c, s);
  rotate_pair(y, d - 1, 0, c, s);
  return y;
}

void validate_block(const InsertBlock& block, double ortho_tol) {
  check_block_shapes(block, "insert");
  if (block.basis.rows() % 2 != 0) {
    throw Error(ErrorCode::kConstraintViolation, "embedding dimension must be even");
  }
  if (block.rank() > block.dim()) {
    throw Error(ErrorCode::kConstraintViolation, "basis rank exceeds embedding dimension");
  }
  const double ortho = orthonormality_error(block.basis);
  if (!(ortho <= ortho_tol)) {
    throw Error(ErrorCode::kConstraintViolation,
                "orthonormality constraint violated: max |E^T E - I| = " + std::to_string(ortho));
  }
  for (double z : block.coeffs.data()) {
    if (!(z >= -1.0 && z <= 1.0)) {
      throw Error(ErrorCode::kConstraintViolation,
                  "range constraint violated: coefficient " + std::to_string(z) +
                      " outside [-1, 1]");
    }
  }
  for (double theta : {block.theta1, block.theta2}) {
    if (!angle_in_range(theta)) {
      throw Error(ErrorCode::kConstraintViolation,
                  "angle constraint violated: " + std::to_string(theta) +
                      " outside (-pi/2, pi/2]");
    }
  }
}

void validate_params(const InsertionParams& params, double ortho_tol) {
  if (params.prefix.dim() != params.suffix.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "prefix and suffix bases differ in dimension");
  }
  validate_block(params.prefix, ortho_tol);
  validate_block(params.suffix, ortho_tol);
}

Mat build_insert_unchecked(const InsertBlock& block) {
  check_block_shapes(block, "build_insert");
  const Mat combined = matmul_nt(block.basis, block.coeffs);
  return apply_r2(block.theta2, apply_r1(block.theta1, combined));
}

Mat build_insert(const InsertBlock& block) {
  validate_block(block);
  return build_insert_unchecked(block);
}

InsertBlock backward_insert(const InsertBlock& block, const Mat& dv) {
  check_block_shapes(block, "backward_insert");
  if (dv.rows() != block.dim() || dv.cols() != block.tokens()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "backward_insert: upstream gradient " + dv.shape_string() + " expected " +
                    std::to_string(block.dim()) + "x" + std::to_string(block.tokens()));
  }
  const Mat combined = matmul_nt(block.basis, block.coeffs);

  // Pull dv back through both rotations: U = R1^T R2^T dv.
  const Mat pulled = apply_r1(-block.theta1, apply_r2(-block.theta2, dv));

  InsertBlock grad;
  grad.basis = matmul(pulled, block.coeffs);
  grad.coeffs = matmul_tn(pulled, block.basis);

  // dR_e/dtheta = R_e(theta + pi/2), applied to every pair.
  const Mat r1_combined = apply_r1(block.theta1, combined);
  const Mat dv_theta1 = apply_r2(block.theta2, apply_r1(block.theta1 + kHalfPi, combined));
  const Mat dv_theta2 = apply_r2(block.theta2 + kHalfPi, r1_combined);
  grad.theta1 = frobenius_dot(dv, dv_theta1);
  grad.theta2 = frobenius_dot(dv, dv_theta2);
  return grad;
}

InsertionParams init_params(const InsertShape& shape, std::uint64_t seed) {
  if (shape.dim == 0 || shape.dim % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "rotation requires even embedding dimension, got " + std::to_string(shape.dim));
  }
  if (shape.m_pre == 0 || shape.m_suff == 0 || shape.m_pre > shape.dim ||
      shape.m_suff > shape.dim) {
    throw Error(ErrorCode::kInvalidArgument,
                "basis ranks must satisfy 1 <= m <= d (m_pre=" + std::to_string(shape.m_pre) +
                    ", m_suff=" + std::to_string(shape.m_suff) +
                    ", d=" + std::to_string(shape.dim) + ")");
  }
  if (shape.n_pre + shape.n_suff == 0) {
    throw Error(ErrorCode::kInvalidArgument, "at least one of N_pre, N_suff must be positive");
  }
  Rng rng(seed);
  InsertionParams params;
  params.prefix.basis = qr_orthonormalize(random_gaussian(shape.dim, shape.m_pre, rng));
  params.suffix.basis = qr_orthonormalize(random_gaussian(shape.dim, shape.m_suff, rng));
  params.prefix.coeffs = random_uniform(shape.n_pre, shape.m_pre, -0.1, 0.1, rng);
  params.suffix.coeffs = random_uniform(shape.n_suff, shape.m_suff, -0.1, 0.1, rng);
  return params;
}

std::size_t param_count(const InsertionParams& params) {
  return params.prefix.basis.size() + params.suffix.basis.size() + params.prefix.coeffs.size() +
         params.suffix.coeffs.size() + 4;
}

}  // namespace ipgo
