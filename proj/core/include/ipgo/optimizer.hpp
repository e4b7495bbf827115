#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "ipgo/augmentation.hpp"
#include "ipgo/error.hpp"
#include "ipgo/parameterization.hpp"
#include "ipgo/rewards.hpp"

namespace ipgo {

enum class Mode { kIpgo, kIpgoPlus };

// lr0 * factor^floor(epoch / period)
struct StepDecay {
  double lr0 = 1e-3;
  double factor = 0.9;
  std::size_t period = 10;
};

// Cosine interpolation from hi (first epoch) to lo (last epoch).
struct CosineSchedule {
  double hi = 1e-4;
  double lo = 1e-5;
};

using LrSchedule = std::variant<StepDecay, CosineSchedule>;

double lr_at(const LrSchedule& schedule, std::size_t epoch, std::size_t total_epochs);

// Ablation switches for the hard constraints. Conformity is soft and is
// switched off with gamma = 0.
struct ConstraintToggles {
  bool range = true;
  bool orthogonality = true;
};

struct TrainConfig {
  Mode mode = Mode::kIpgo;
  std::size_t epochs = 50;
  LrSchedule schedule = StepDecay{};
  double gamma = 1e-3;
  double clip_norm = 1.0;
  std::size_t n_pre = 10;
  std::size_t n_suff = 10;
  std::size_t m_pre = 300;
  std::size_t m_suff = 300;
  std::uint64_t seed = 0;
  std::size_t batch_size = 4;
  ConstraintToggles constraints;
};

// Throws kInvalidArgument describing the first bad field.
void validate_config(const TrainConfig& cfg);

struct AdamState {
  explicit AdamState(const InsertionParams& params);

  ParamGrads first_moment;
  ParamGrads second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double reward = 0.0;
  double p_conf = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
  double best_reward = 0.0;
  std::size_t best_epoch = 0;

  friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

struct TrainResult {
  InsertionParams best;
  InsertionParams last;
  RunMetrics metrics;
};

// Thrown when the oracle (or anything else) fails mid-run; carries whatever
// was completed before the failure.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const Error& cause, RunMetrics partial, InsertionParams best)
      : Error(ErrorCode::kTrainingAborted, std::string("training aborted: ") + cause.what()),
        cause_code_(cause.code()),
        partial_(std::move(partial)),
        best_(std::move(best)) {}

  ErrorCode cause_code() const noexcept { return cause_code_; }
  const RunMetrics& partial() const noexcept { return partial_; }
  const InsertionParams& best() const noexcept { return best_; }

 private:
  ErrorCode cause_code_;
  RunMetrics partial_;
  InsertionParams best_;
};

// One forward/backward pass of L = -reward + gamma * p_conf.
struct ObjectiveEval {
  double reward = 0.0;
  double p_conf = 0.0;
  double objective = 0.0;
  ParamGrads grads;  // dL/dOmega
};

// Builds both inserts (plus attention in kIpgoPlus), evaluates the oracle and
// the conformity penalty, and backpropagates through the whole chain.
ObjectiveEval evaluate_objective(const InsertionParams& params, const PromptEmbedding& prompt,
                                 RewardOracle& oracle, Mode mode, double gamma);

// Arithmetic mean of evaluate_objective over `prompts`.
ObjectiveEval evaluate_batch_objective(const InsertionParams& params,
                                       std::span<const PromptEmbedding> prompts,
                                       RewardOracle& oracle, Mode mode, double gamma);

// The augmented embedding that evaluate_objective would score.
AugmentedEmbedding forward_augmented(const InsertionParams& params, const PromptEmbedding& prompt,
                                     Mode mode);

// Rescales to global norm c when the global norm exceeds c.
ParamGrads clip_grads(ParamGrads grads, double c);

// Bias-corrected Adam, no weight decay; minimizes (params -= ...).
void adam_step(AdamState& state, InsertionParams& params, const ParamGrads& grads, double lr);

// Clamps coefficients to [-1, 1], wraps angles into (-pi/2, pi/2] by
// multiples of pi, and retracts the bases onto orthonormal columns. A wrap by
// an odd total multiple of pi flips the sign of R2 R1, which is absorbed by
// negating the coefficients so the built insert is unchanged; when `adam` is
// given, the matching first moments are negated too.
InsertionParams enforce_constraints(InsertionParams params, const ConstraintToggles& toggles = {},
                                    AdamState* adam = nullptr);

// Wraps theta into (-pi/2, pi/2]; returns the number of pi subtracted.
long wrap_angle(double& theta);

// Called after every optimizer step (post constraint enforcement) with the
// 1-based step count and the current parameters.
using StepObserver = std::function<void(std::size_t step, const InsertionParams& params)>;

TrainResult train_promptwise(const PromptEmbedding& prompt, RewardOracle& oracle,
                             const TrainConfig& cfg, const StepObserver& observer = {});

// Shared inserts over a prompt batch (kIpgoPlus only). Each epoch visits the
// prompts in a seeded shuffled order, split into minibatches of
// cfg.batch_size; every minibatch takes one step on its mean objective.
TrainResult train_batch(std::span<const PromptEmbedding> prompts, RewardOracle& oracle,
                        const TrainConfig& cfg, const StepObserver& observer = {});

struct InsertPair {
  Mat prefix;
  Mat suffix;

  friend bool operator==(const InsertPair&, const InsertPair&) = default;
};

// The built prefix and suffix. Attention is not applied: in kIpgoPlus it
// depends on the prompt the inserts are attached to.
InsertPair build_inserts(const InsertionParams& params);

// lambda * a + (1 - lambda) * b on both matrices; lambda in [0, 1].
InsertPair mix_inserts(const InsertPair& a, const InsertPair& b, double lambda);

// One JSON object per epoch, then a {"summary": ...} line.
void write_metrics_jsonl(std::ostream& os, const RunMetrics& metrics);

}  // namespace ipgo
