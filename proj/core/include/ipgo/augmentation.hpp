#pragma once

#include <cstddef>
#include <string>

#include "ipgo/linalg.hpp"

namespace ipgo {

// Frozen d x K token embeddings of one prompt.
class PromptEmbedding {
 public:
  // Throws unless K >= 1, d is even and every entry is finite.
  PromptEmbedding(Mat emb, std::string prompt_id = {});

  const Mat& emb() const noexcept { return emb_; }
  const std::string& id() const noexcept { return id_; }
  std::size_t dim() const noexcept { return emb_.rows(); }
  std::size_t tokens() const noexcept { return emb_.cols(); }

 private:
  Mat emb_;
  std::string id_;
};

// prefix | prompt | suffix, column-wise.
struct AugmentedEmbedding {
  Mat emb;
  std::size_t n_pre = 0;
  std::size_t k = 0;
  std::size_t n_suff = 0;

  std::size_t dim() const noexcept { return emb.rows(); }
  std::size_t tokens() const noexcept { return emb.cols(); }
  Mat prefix() const { return emb.col_block(0, n_pre); }
  Mat prompt() const { return emb.col_block(n_pre, k); }
  Mat suffix() const { return emb.col_block(n_pre + k, n_suff); }
};

AugmentedEmbedding concat(const Mat& v_pre, const PromptEmbedding& prompt, const Mat& v_suff);

struct ConformityResult {
  double penalty = 0.0;
  Mat grad;  // d x L, dpenalty/daug
};

// ||mean(aug) - mean(prompt)||^2 over the token axis, with its gradient.
ConformityResult conformity_penalty(const AugmentedEmbedding& aug, const PromptEmbedding& prompt);

// Row-wise stable softmax.
Mat softmax_rows(const Mat& logits);

// softmax(q k^T / sqrt(d)) w with tokens as rows: q n_q x d, k and w n_k x d.
Mat scaled_dot_attention(const Mat& q, const Mat& k, const Mat& w);

// v + Attention(v, T, T) in column-per-token layout (v is d x N).
Mat attach_attention(const Mat& v, const PromptEmbedding& prompt);

// d(attach_attention)/dv applied to the upstream gradient d_out (d x N).
Mat backward_attention(const Mat& v, const PromptEmbedding& prompt, const Mat& d_out);

}  // namespace ipgo
