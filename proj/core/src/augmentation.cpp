#include "ipgo/augmentation.hpp"

#include <algorithm>
#include <cmath>

#include "ipgo/error.hpp"

namespace ipgo {

namespace {

void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::kDimensionMismatch, std::string(what) + " has dimension " +
                                                   std::to_string(got) + ", expected " +
                                                   std::to_string(want));
  }
}

}  // namespace

PromptEmbedding::PromptEmbedding(Mat emb, std::string prompt_id)
    : emb_(std::move(emb)), id_(std::move(prompt_id)) {
  if (emb_.cols() == 0) {
    throw Error(ErrorCode::kZeroColumns, "prompt embedding has no tokens");
  }
  if (emb_.rows() == 0 || emb_.rows() % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "prompt embedding dimension must be even, got " +
                                                 std::to_string(emb_.rows()));
  }
  require_finite(emb_, "prompt embedding");
}

AugmentedEmbedding concat(const Mat& v_pre, const PromptEmbedding& prompt, const Mat& v_suff) {
  require_dim(v_pre.rows(), prompt.dim(), "prefix");
  require_dim(v_suff.rows(), prompt.dim(), "suffix");
  if (v_pre.cols() + v_suff.cols() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "prefix and suffix cannot both be empty");
  }
  AugmentedEmbedding aug;
  aug.n_pre = v_pre.cols();
  aug.k = prompt.tokens();
  aug.n_suff = v_suff.cols();
  aug.emb = Mat(prompt.dim(), aug.n_pre + aug.k + aug.n_suff);
  aug.emb.set_col_block(0, v_pre);
  aug.emb.set_col_block(aug.n_pre, prompt.emb());
  aug.emb.set_col_block(aug.n_pre + aug.k, v_suff);
  return aug;
}

ConformityResult conformity_penalty(const AugmentedEmbedding& aug, const PromptEmbedding& prompt) {
  require_dim(aug.dim(), prompt.dim(), "augmented embedding");
  const Mat diff = token_mean(aug.emb) - token_mean(prompt.emb());
  ConformityResult out;
  out.penalty = frobenius_dot(diff, diff);
  out.grad = Mat(aug.dim(), aug.tokens());
  const double scale = 2.0 / static_cast<double>(aug.tokens());
  for (std::size_t r = 0; r < aug.dim(); ++r) {
    const double g = scale * diff(r, 0);
    for (std::size_t c = 0; c < aug.tokens(); ++c) out.grad(r, c) = g;
  }
  return out;
}

Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double row_max = logits(i, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) row_max = std::max(row_max, logits(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      p(i, j) = std::exp(logits(i, j) - row_max);
      total += p(i, j);
    }
    for (std::size_t j = 0; j < logits.cols(); ++j) p(i, j) /= total;
  }
  return p;
}

Mat scaled_dot_attention(const Mat& q, const Mat& k, const Mat& w) {
  if (q.cols() != k.cols() || k.rows() != w.rows() || k.rows() == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "attention: q " + q.shape_string() + ", k " +
                                                   k.shape_string() + ", w " + w.shape_string());
  }
  Mat logits = matmul_nt(q, k);
  logits *= 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return matmul(softmax_rows(logits), w);
}

Mat attach_attention(const Mat& v, const PromptEmbedding& prompt) {
  require_dim(v.rows(), prompt.dim(), "insert");
  const Mat tokens = prompt.emb().transpose();
  const Mat attended = scaled_dot_attention(v.transpose(), tokens, tokens);
  return v + attended.transpose();
}

Mat backward_attention(const Mat& v, const PromptEmbedding& prompt, const Mat& d_out) {
  require_dim(v.rows(), prompt.dim(), "insert");
  if (!d_out.same_shape(v)) {
    throw Error(ErrorCode::kDimensionMismatch, "backward_attention: upstream gradient " +
                                                   d_out.shape_string() + " vs insert " +
                                                   v.shape_string());
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(v.rows()));
  const Mat& tokens_t = prompt.emb();  // d x K, i.e. keys/values transposed
  // Logits S = V^T T / sqrt(d), N x K.
  Mat logits = matmul_tn(v, tokens_t);
  logits *= inv_sqrt_d;
  const Mat probs = softmax_rows(logits);

  // O = P T^T so dP = dO T with dO = d_out^T (N x d).
  const Mat d_probs = matmul_tn(d_out, tokens_t);
  Mat d_logits(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < probs.cols(); ++j) inner += d_probs(i, j) * probs(i, j);
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      d_logits(i, j) = probs(i, j) * (d_probs(i, j) - inner);
    }
  }
  // dQ = dS K / sqrt(d) (N x d); the insert gradient is its transpose.
  Mat d_query_t = matmul_nt(tokens_t, d_logits);
  d_query_t *= inv_sqrt_d;
  return d_out + d_query_t;
}

}  // namespace ipgo
