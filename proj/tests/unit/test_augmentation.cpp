#include <gtest/gtest.h>

#include <cmath>

#include "ipgo/augmentation.hpp"
#include "ipgo/error.hpp"
#include "ipgo/gradcheck.hpp"
#include "reference.hpp"

namespace ipgo {
namespace {

Mat constant_cols(std::size_t d, std::size_t n, double value) { return Mat(d, n, value); }

// From-scratch residual attention with explicit loops and exponentials.
Mat reference_attention(const Mat& v, const Mat& t) {
  const std::size_t d = v.rows(), n = v.cols(), k = t.cols();
  Mat out = v;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logits(k);
    double mx = -1e300;
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < d; ++r) s += v(r, i) * t(r, j);
      logits[j] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t r = 0; r < d; ++r) out(r, i) += logits[j] / z * t(r, j);
    }
  }
  return out;
}

TEST(Concat, PrefixEmptySuffixPresent) {
  const PromptEmbedding p(ref::gaussian(4, 3, 1));
  const Mat s = ref::gaussian(4, 2, 2);
  const AugmentedEmbedding aug = concat(Mat(4, 0), p, s);
  EXPECT_EQ(aug.emb.cols(), 5u);
  EXPECT_EQ(aug.emb.col_block(0, 3), p.emb());
  EXPECT_EQ(aug.emb.col_block(3, 2), s);
}

TEST(Concat, ColumnOrderPrefixPromptSuffix) {
  const PromptEmbedding p(constant_cols(2, 3, 2.0));
  const AugmentedEmbedding aug = concat(constant_cols(2, 2, 1.0), p, constant_cols(2, 2, 3.0));
  const double expect[] = {1, 1, 2, 2, 2, 3, 3};
  for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(aug.emb(0, j), expect[j]);
  EXPECT_EQ(aug.n_pre, 2u);
  EXPECT_EQ(aug.k, 3u);
  EXPECT_EQ(aug.n_suff, 2u);
}

TEST(Concat, SegmentsRoundTripBitExact) {
  const PromptEmbedding p(ref::gaussian(6, 4, 3));
  const Mat a = ref::gaussian(6, 2, 4), b = ref::gaussian(6, 3, 5);
  const AugmentedEmbedding aug = concat(a, p, b);
  EXPECT_EQ(aug.prefix(), a);
  EXPECT_EQ(aug.prompt(), p.emb());
  EXPECT_EQ(aug.suffix(), b);
}

TEST(Concat, DimensionMismatchRejected) {
  const PromptEmbedding p(ref::gaussian(4, 2, 6));
  EXPECT_THROW(concat(Mat(6, 1), p, Mat(4, 1)), Error);
}

TEST(PromptEmbedding, RejectsBadInput) {
  EXPECT_THROW(PromptEmbedding(Mat(4, 0)), Error);
  EXPECT_THROW(PromptEmbedding(Mat(3, 2)), Error);
  Mat bad(4, 1);
  bad(0, 0) = INFINITY;
  EXPECT_THROW(PromptEmbedding{bad}, Error);
}

TEST(Conformity, InsertsAtPromptMeanGiveZero) {
  const PromptEmbedding p(ref::gaussian(6, 3, 7));
  const Mat mu = token_mean(p.emb());
  Mat ins(6, 2);
  ins.set_col_block(0, mu);
  ins.set_col_block(1, mu);
  const ConformityResult c = conformity_penalty(concat(ins, p, ins), p);
  EXPECT_LE(c.penalty, 1e-30);
}

TEST(Conformity, HandArithmetic) {
  // Prompt mean (1, 0); aug mean (1, 1).
  const PromptEmbedding p(Mat::from_rows({{1}, {0}}));
  const Mat ins = Mat::from_rows({{1}, {1.5}});
  const AugmentedEmbedding aug = concat(ins, p, ins);  // mean = (1, 1)
  EXPECT_DOUBLE_EQ(conformity_penalty(aug, p).penalty, 1.0);
}

TEST(Conformity, GradientMatchesFiniteDifferences) {
  const PromptEmbedding p(ref::gaussian(6, 3, 8));
  const AugmentedEmbedding aug = concat(ref::gaussian(6, 2, 9), p, ref::gaussian(6, 2, 10));
  const ConformityResult c = conformity_penalty(aug, p);
  const Mat fd = ref::central_diff(
      [&](const Mat& x) {
        AugmentedEmbedding a = aug;
        a.emb = x;
        return conformity_penalty(a, p).penalty;
      },
      aug.emb, 1e-5);
  EXPECT_LT(max_relative_error(c.grad, fd), 1e-7);
}

TEST(Conformity, InvariantUnderColumnPermutation) {
  const PromptEmbedding p(ref::gaussian(4, 2, 11));
  AugmentedEmbedding aug = concat(ref::gaussian(4, 2, 12), p, ref::gaussian(4, 1, 13));
  const double before = conformity_penalty(aug, p).penalty;
  Mat swapped = aug.emb;
  swapped.set_col_block(0, aug.emb.col_block(4, 1));
  swapped.set_col_block(4, aug.emb.col_block(0, 1));
  aug.emb = swapped;
  EXPECT_NEAR(conformity_penalty(aug, p).penalty, before, 1e-15);
}

TEST(Softmax, RowsSumToOneAcrossMagnitudes) {
  Rng rng(14);
  for (double scale : {1e-3, 1.0, 1e3}) {
    Mat logits = random_gaussian(5, 7, rng);
    logits *= scale;
    const Mat s = softmax_rows(logits);
    for (std::size_t i = 0; i < 5; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 7; ++j) sum += s(i, j);
      EXPECT_NEAR(sum, 1.0, 1e-12) << "scale " << scale;
    }
  }
}

TEST(Attention, SingleKeyReturnsItsValue) {
  const Mat q = ref::gaussian(3, 4, 15);
  const Mat k = ref::gaussian(1, 4, 16);
  const Mat w = ref::gaussian(1, 4, 17);
  const Mat out = scaled_dot_attention(q, k, w);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out(i, j), w(0, j));
  }
}

TEST(Attention, EqualLogitsAverageValues) {
  const Mat q = Mat::from_rows({{0, 0, 1}});
  const Mat k = Mat::from_rows({{1, 0, 0}, {0, 1, 0}});
  const Mat w = Mat::from_rows({{2, 4, 6}, {4, 8, 10}});
  EXPECT_LE(max_abs_diff(scaled_dot_attention(q, k, w), Mat::from_rows({{3, 6, 8}})), 1e-15);
}

TEST(Attention, TwoByTwoHandSoftmax) {
  // d = 2 so the scale is 1/sqrt(2).
  const Mat q = Mat::from_rows({{1, 0}, {0, 2}});
  const Mat k = Mat::from_rows({{1, 1}, {-1, 0}});
  const Mat w = Mat::from_rows({{1, 0}, {0, 1}});
  const double s = 1.0 / std::sqrt(2.0);
  // Row 0 logits (s, -s); row 1 logits (2s, 0).
  const double p0 = std::exp(s) / (std::exp(s) + std::exp(-s));
  const double p1 = std::exp(2 * s) / (std::exp(2 * s) + 1.0);
  const Mat expect = Mat::from_rows({{p0, 1 - p0}, {p1, 1 - p1}});
  EXPECT_LE(max_abs_diff(scaled_dot_attention(q, k, w), expect), 1e-15);
}

TEST(AttachAttention, SingleTokenAddsIt) {
  const Mat t = ref::gaussian(4, 1, 18);
  const PromptEmbedding p(t);
  const Mat v = ref::gaussian(4, 3, 19);
  const Mat out = attach_attention(v, p);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_LE(max_abs_diff(out.col_block(j, 1), v.col_block(j, 1) + t), 1e-14);
  }
}

TEST(AttachAttention, DuplicatedTokenSameAsSingle) {
  const Mat t = ref::gaussian(4, 1, 20);
  Mat tt(4, 2);
  tt.set_col_block(0, t);
  tt.set_col_block(1, t);
  const Mat v = ref::gaussian(4, 2, 21);
  EXPECT_LE(max_abs_diff(attach_attention(v, PromptEmbedding(tt)), attach_attention(v, PromptEmbedding(t))),
            1e-15);
}

TEST(AttachAttention, MatchesFromScratchReference) {
  const Mat t = ref::gaussian(4, 3, 22);
  const Mat v = ref::gaussian(4, 2, 23);
  EXPECT_LE(max_abs_diff(attach_attention(v, PromptEmbedding(t)), reference_attention(v, t)), 1e-14);
}

TEST(AttachAttention, ResidualLiesInPromptSpan) {
  // d = 8, K = 3: the attention term must be a combination of prompt columns.
  const Mat t = ref::gaussian(8, 3, 24);
  const Mat v = ref::gaussian(8, 4, 25);
  const Mat resid = attach_attention(v, PromptEmbedding(t)) - v;
  const Mat q = qr_orthonormalize(t);
  const Mat proj = matmul(q, matmul_tn(q, resid));
  EXPECT_LT(max_abs_diff(proj, resid), 1e-10);
}

TEST(BackwardAttention, SingleTokenIsPassThrough) {
  const PromptEmbedding p(ref::gaussian(4, 1, 26));
  const Mat v = ref::gaussian(4, 2, 27);
  const Mat d_out = ref::gaussian(4, 2, 28);
  EXPECT_EQ(backward_attention(v, p, d_out), d_out);
}

TEST(BackwardAttention, ZeroUpstreamGivesZero) {
  const PromptEmbedding p(ref::gaussian(4, 3, 29));
  EXPECT_EQ(max_abs(backward_attention(ref::gaussian(4, 2, 30), p, Mat(4, 2))), 0.0);
}

TEST(BackwardAttention, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PromptEmbedding p(ref::gaussian(4, 3, 100 + seed));
    const Mat v = ref::gaussian(4, 2, 200 + seed);
    const Mat w = ref::gaussian(4, 2, 300 + seed);
    const Mat g = backward_attention(v, p, w);
    const Mat fd = ref::central_diff([&](const Mat& x) { return frobenius_dot(attach_attention(x, p), w); }, v,
                                     1e-5);
    EXPECT_LT(max_relative_error(g, fd), 1e-6) << "seed " << seed;
  }
}

}  // namespace
}  // namespace ipgo
