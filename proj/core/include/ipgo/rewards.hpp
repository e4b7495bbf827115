#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "ipgo/augmentation.hpp"
#include "ipgo/linalg.hpp"

namespace ipgo {

struct OracleResult {
  double reward = 0.0;
  Mat grad;  // dreward/daug.emb, same shape as the augmented embedding
  std::map<std::string, double> aux;
};

struct OracleDims {
  std::size_t dim = 0;
  // Largest augmented token count the oracle accepts; nullopt means no limit.
  std::optional<std::size_t> max_tokens;
};

// A differentiable scorer of augmented embeddings. Everything between the
// embeddings and the scalar reward (sampling, the image, the reward model)
// is private to the implementation.
//
// evaluate() must be deterministic for fixed inputs. Analytic oracles are
// safe to call concurrently; RemoteOracle serializes calls per connection.
class RewardOracle {
 public:
  virtual ~RewardOracle() = default;

  virtual OracleResult evaluate(const AugmentedEmbedding& aug, const PromptEmbedding& prompt) = 0;
  virtual std::string describe() const = 0;
  virtual OracleDims dims() const = 0;
};

// reward = -||mean(aug) - target||^2.
std::unique_ptr<RewardOracle> quadratic_oracle(Mat target);
// reward = <mean(aug), target> / (||mean|| ||target||).
std::unique_ptr<RewardOracle> cosine_oracle(Mat target);
// reward = <mean(aug), direction>.
std::unique_ptr<RewardOracle> linear_oracle(Mat direction);
// reward = w2 . tanh(W1 mean(aug) + b1) + b2 with frozen seeded weights.
std::unique_ptr<RewardOracle> net_oracle(std::size_t dim, std::size_t hidden_width,
                                         std::uint64_t seed);
// Constant reward with zero gradient; accepts any dimension.
std::unique_ptr<RewardOracle> constant_oracle(double value = 0.0);

// Central differences of oracle.evaluate(...).reward with respect to every
// entry of aug.emb. h must lie in [1e-7, 1e-3].
Mat finite_diff_grad(RewardOracle& oracle, const AugmentedEmbedding& aug,
                     const PromptEmbedding& prompt, double h);

}  // namespace ipgo
