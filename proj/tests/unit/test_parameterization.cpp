#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ipgo/error.hpp"
#include "ipgo/gradcheck.hpp"
#include "ipgo/parameterization.hpp"
#include "reference.hpp"

namespace ipgo {
namespace {

constexpr double kPi = std::numbers::pi;

Mat dense_insert(const InsertBlock& b) {
  const std::size_t d = b.dim();
  return ref::naive_matmul(ref::dense_r2(d, b.theta2),
                           ref::naive_matmul(ref::dense_r1(d, b.theta1),
                                             ref::naive_matmul(b.basis, ref::naive_transpose(b.coeffs))));
}

InsertBlock random_block(std::size_t d, std::size_t m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  InsertBlock b;
  b.basis = qr_orthonormalize(random_gaussian(d, m, rng));
  b.coeffs = random_uniform(n, m, -1.0, 1.0, rng);
  b.theta1 = rng.uniform(-1.5, 1.5);
  b.theta2 = rng.uniform(-1.5, 1.5);
  return b;
}

TEST(ElementaryRotation, ZeroIsIdentity) { EXPECT_EQ(elementary_rotation(0.0), Mat::identity(2)); }

TEST(ElementaryRotation, QuarterTurn) {
  const Mat r = elementary_rotation(kPi / 2);
  EXPECT_LE(max_abs_diff(r, Mat::from_rows({{0, -1}, {1, 0}})), 1e-16);
}

TEST(ElementaryRotation, UnitDeterminant) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Mat r = elementary_rotation(rng.uniform(-10, 10));
    EXPECT_NEAR(r(0, 0) * r(1, 1) - r(0, 1) * r(1, 0), 1.0, 1e-15);
  }
}

TEST(RotationR1, ZeroAngleLeavesInput) {
  const Mat x = ref::gaussian(6, 3, 1);
  EXPECT_EQ(apply_r1(0.0, x), x);
}

TEST(RotationR1, QuarterTurnMapsE1ToE2) {
  EXPECT_LE(max_abs_diff(apply_r1(kPi / 2, ref::unit_column(4, 0)), ref::unit_column(4, 1)), 1e-16);
}

TEST(RotationR1, MatchesKroneckerMatrix) {
  const Mat x = ref::gaussian(8, 1, 2);
  const double theta = 0.7312;
  EXPECT_LE(max_abs_diff(apply_r1(theta, x), ref::naive_matmul(ref::dense_r1(8, theta), x)), 1e-14);
}

TEST(RotationR1, OddDimensionRejected) {
  try {
    apply_r1(0.1, Mat(5, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("rotation requires even embedding dimension"), std::string::npos);
  }
  EXPECT_THROW(apply_r2(0.1, Mat(3, 2)), Error);
}

TEST(RotationR2, ZeroAngleLeavesInput) {
  const Mat x = ref::gaussian(6, 3, 4);
  EXPECT_EQ(apply_r2(0.0, x), x);
}

TEST(RotationR2, QuarterTurnMapsE2ToE3) {
  EXPECT_LE(max_abs_diff(apply_r2(kPi / 2, ref::unit_column(4, 1)), ref::unit_column(4, 2)), 1e-16);
}

TEST(RotationR2, WraparoundMapsLastToFirst) {
  const Mat out = apply_r2(kPi / 2, ref::unit_column(4, 3));
  EXPECT_LE(max_abs_diff(out, ref::unit_column(4, 0)), 1e-16);
  // Cross-check against the explicit matrix.
  EXPECT_LE(max_abs_diff(out, ref::naive_matmul(ref::dense_r2(4, kPi / 2), ref::unit_column(4, 3))), 1e-16);
}

TEST(RotationR2, MatchesExplicitMatrixAllDims) {
  for (std::size_t d : {2u, 4u, 6u, 8u, 16u}) {
    const Mat x = ref::gaussian(d, 3, 10 + d);
    const double theta = -0.4 + 0.05 * static_cast<double>(d);
    EXPECT_LE(max_abs_diff(apply_r2(theta, x), ref::naive_matmul(ref::dense_r2(d, theta), x)), 1e-14)
        << "d=" << d;
  }
}

TEST(RotationProperties, PreserveInnerProducts) {
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    const std::size_t d = 2 * (1 + rng.below(8));
    const Mat x = random_gaussian(d, 1, rng), y = random_gaussian(d, 1, rng);
    const double theta = rng.uniform(-kPi, kPi);
    const double before = frobenius_dot(x, y);
    EXPECT_NEAR(frobenius_dot(apply_r1(theta, x), apply_r1(theta, y)), before, 1e-12);
    EXPECT_NEAR(frobenius_dot(apply_r2(theta, x), apply_r2(theta, y)), before, 1e-12);
  }
}

TEST(RotationProperties, ComposeAdditivelyAndInvert) {
  Rng rng(6);
  for (int i = 0; i < 40; ++i) {
    const std::size_t d = 2 * (1 + rng.below(8));
    const Mat x = random_gaussian(d, 2, rng);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    EXPECT_LE(max_abs_diff(apply_r1(a, apply_r1(b, x)), apply_r1(a + b, x)), 1e-12);
    EXPECT_LE(max_abs_diff(apply_r2(a, apply_r2(b, x)), apply_r2(a + b, x)), 1e-12);
    EXPECT_LE(max_abs_diff(apply_r1(-a, apply_r1(a, x)), x), 1e-13);
    EXPECT_LE(max_abs_diff(apply_r2(-a, apply_r2(a, x)), x), 1e-13);
  }
}

TEST(BuildInsert, IdentityBasisOneHotCoefficients) {
  InsertBlock b;
  b.basis = Mat::identity(6).leading_cols(3);
  b.coeffs = Mat::from_rows({{0, 1, 0}, {0, 0, 1}});
  const Mat v = build_insert(b);
  EXPECT_EQ(v.col_block(0, 1), ref::unit_column(6, 1));
  EXPECT_EQ(v.col_block(1, 1), ref::unit_column(6, 2));
}

TEST(BuildInsert, ZeroCoefficientsGiveZero) {
  InsertBlock b = random_block(6, 2, 3, 7);
  b.coeffs = Mat(3, 2);
  EXPECT_EQ(max_abs(build_insert(b)), 0.0);
}

TEST(BuildInsert, MatchesDenseConstruction) {
  const InsertBlock b = random_block(6, 2, 3, 8);
  EXPECT_LE(max_abs_diff(build_insert(b), dense_insert(b)), 1e-13);
}

TEST(BuildInsert, MatchesDenseAcrossDimsAndSeeds) {
  for (std::size_t d : {2u, 4u, 6u, 8u}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const std::size_t m = 1 + seed % d;
      const InsertBlock b = random_block(d, m, 1 + seed % 3, 1000 * d + seed);
      EXPECT_LE(max_abs_diff(build_insert(b), dense_insert(b)), 1e-13) << "d=" << d << " seed=" << seed;
    }
  }
}

TEST(BuildInsert, NamesViolatedConstraint) {
  InsertBlock b = random_block(4, 2, 1, 9);
  b.coeffs(0, 0) = 1.5;
  try {
    build_insert(b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConstraintViolation);
    EXPECT_NE(std::string(e.what()).find("range constraint"), std::string::npos) << e.what();
  }
  b = random_block(4, 2, 1, 9);
  b.theta1 = 2.0;
  EXPECT_THROW(build_insert(b), Error);
  b = random_block(4, 2, 1, 9);
  b.basis(0, 0) += 0.1;
  EXPECT_THROW(build_insert(b), Error);
}

// Linear functional L(V) = <W, V>; its gradient with respect to V is W.
double functional(const InsertBlock& b, const Mat& w) { return frobenius_dot(build_insert_unchecked(b), w); }

TEST(BackwardInsert, ZeroUpstreamGivesZero) {
  const InsertBlock b = random_block(8, 3, 2, 10);
  const InsertBlock g = backward_insert(b, Mat(8, 2));
  EXPECT_EQ(max_abs(g.basis), 0.0);
  EXPECT_EQ(max_abs(g.coeffs), 0.0);
  EXPECT_EQ(g.theta1, 0.0);
  EXPECT_EQ(g.theta2, 0.0);
}

TEST(BackwardInsert, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const InsertBlock b = random_block(8, 3, 2, 500 + seed);
    const Mat w = ref::gaussian(8, 2, 600 + seed);
    const InsertBlock g = backward_insert(b, w);
    const double h = 1e-5;

    const Mat fd_basis = ref::central_diff(
        [&](const Mat& x) {
          InsertBlock c = b;
          c.basis = x;
          return functional(c, w);
        },
        b.basis, h);
    const Mat fd_coeffs = ref::central_diff(
        [&](const Mat& x) {
          InsertBlock c = b;
          c.coeffs = x;
          return functional(c, w);
        },
        b.coeffs, h);
    const double fd_t1 = ref::central_diff_scalar(
        [&](double t) {
          InsertBlock c = b;
          c.theta1 = t;
          return functional(c, w);
        },
        b.theta1, h);
    const double fd_t2 = ref::central_diff_scalar(
        [&](double t) {
          InsertBlock c = b;
          c.theta2 = t;
          return functional(c, w);
        },
        b.theta2, h);

    EXPECT_LT(max_relative_error(g.basis, fd_basis), 1e-6) << "seed " << seed;
    EXPECT_LT(max_relative_error(g.coeffs, fd_coeffs), 1e-6) << "seed " << seed;
    EXPECT_LT(relative_error(g.theta1, fd_t1), 1e-6) << "seed " << seed;
    EXPECT_LT(relative_error(g.theta2, fd_t2), 1e-6) << "seed " << seed;
  }
}

TEST(BackwardInsert, EvenFunctionalHasZeroAngleGradientAtZero) {
  // L(V) = ||V||^2 is rotation invariant, so dL/dtheta vanishes everywhere.
  InsertBlock b = random_block(8, 3, 2, 11);
  b.theta1 = b.theta2 = 0.0;
  const Mat v = build_insert(b);
  const InsertBlock g = backward_insert(b, 2.0 * v);
  const double fd = ref::central_diff_scalar(
      [&](double t) {
        InsertBlock c = b;
        c.theta1 = t;
        const Mat x = build_insert_unchecked(c);
        return frobenius_dot(x, x);
      },
      0.0, 1e-5);
  EXPECT_NEAR(fd, 0.0, 1e-8);
  EXPECT_NEAR(g.theta1, 0.0, 1e-12);
  EXPECT_NEAR(g.theta2, 0.0, 1e-12);
}

TEST(BackwardInsert, ShapeMismatchRejected) {
  const InsertBlock b = random_block(8, 3, 2, 12);
  EXPECT_THROW(backward_insert(b, Mat(8, 3)), Error);
}

TEST(InitParams, DeterministicAndFeasible) {
  const InsertShape shape{8, 3, 2, 2, 3};
  const InsertionParams a = init_params(shape, 17);
  EXPECT_EQ(a, init_params(shape, 17));
  EXPECT_NO_THROW(validate_params(a));
  EXPECT_EQ(a.prefix.theta1, 0.0);
  EXPECT_EQ(a.suffix.theta2, 0.0);
  EXPECT_LE(max_abs(a.prefix.coeffs), 0.1);
  EXPECT_LE(max_abs(a.suffix.coeffs), 0.1);
  EXPECT_LT(orthonormality_error(a.prefix.basis), 1e-12);
}

TEST(InitParams, InfeasibleShapesRejected) {
  EXPECT_THROW(init_params({7, 2, 2, 1, 1}, 0), Error);
  EXPECT_THROW(init_params({4, 5, 2, 1, 1}, 0), Error);
}

TEST(ParamCount, DefaultShapeIs466804) {
  // 2*768*300 + 2*10*300 + 4
  EXPECT_EQ(param_count(init_params({768, 300, 300, 10, 10}, 0)), 466804u);
}

TEST(ParamCount, HandCounts) {
  EXPECT_EQ(param_count(init_params({4, 2, 2, 1, 1}, 0)), 24u);
  EXPECT_EQ(param_count(init_params({4, 1, 2, 1, 1}, 0)), 19u);
}

}  // namespace
}  // namespace ipgo
