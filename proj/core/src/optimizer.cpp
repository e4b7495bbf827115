#include "ipgo/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "ipgo/rng.hpp"
#include "json.hpp"

namespace ipgo {

namespace {

constexpr double kPi = std::numbers::pi;

InsertShape shape_of(const TrainConfig& cfg, std::size_t dim) {
  return {dim, cfg.m_pre, cfg.m_suff, cfg.n_pre, cfg.n_suff};
}

void check_oracle_result(const OracleResult& res, const AugmentedEmbedding& aug) {
  if (!res.grad.same_shape(aug.emb)) {
    throw Error(ErrorCode::kDimensionMismatch, "oracle gradient " + res.grad.shape_string() +
                                                   " does not match augmented embedding " +
                                                   aug.emb.shape_string());
  }
  if (!std::isfinite(res.reward)) {
    throw Error(ErrorCode::kNonFinite, "oracle returned a non-finite reward");
  }
  require_finite(res.grad, "oracle gradient");
}

template <class F>
void for_each_tensor(InsertionParams& params, ParamGrads& a, ParamGrads& b, const ParamGrads& g,
                     F&& f) {
  InsertBlock* p_blocks[] = {&params.prefix, &params.suffix};
  InsertBlock* a_blocks[] = {&a.prefix, &a.suffix};
  InsertBlock* b_blocks[] = {&b.prefix, &b.suffix};
  const InsertBlock* g_blocks[] = {&g.prefix, &g.suffix};
  for (int i = 0; i < 2; ++i) {
    auto pb = p_blocks[i]->basis.data();
    f(pb, a_blocks[i]->basis.data(), b_blocks[i]->basis.data(), g_blocks[i]->basis.data());
    f(p_blocks[i]->coeffs.data(), a_blocks[i]->coeffs.data(), b_blocks[i]->coeffs.data(),
      g_blocks[i]->coeffs.data());
    f(std::span<double>(&p_blocks[i]->theta1, 1), std::span<double>(&a_blocks[i]->theta1, 1),
      std::span<double>(&b_blocks[i]->theta1, 1), std::span<const double>(&g_blocks[i]->theta1, 1));
    f(std::span<double>(&p_blocks[i]->theta2, 1), std::span<double>(&a_blocks[i]->theta2, 1),
      std::span<double>(&b_blocks[i]->theta2, 1), std::span<const double>(&g_blocks[i]->theta2, 1));
  }
}

// Running state shared by the prompt-wise and batch drivers.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::size_t dim, const StepObserver& observer)
      : cfg_(cfg), observer_(observer), params_(init_params(shape_of(cfg, dim), cfg.seed)),
        adam_(params_), best_(params_) {}

  // Records the reward of the current parameters and takes one step.
  void step(const ObjectiveEval& eval, double lr) {
    if (!have_best_ || eval.reward > metrics_.best_reward) {
      have_best_ = true;
      metrics_.best_reward = eval.reward;
      metrics_.best_epoch = epoch_;
      best_ = params_;
    }
    const ParamGrads clipped = clip_grads(eval.grads, cfg_.clip_norm);
    adam_step(adam_, params_, clipped, lr);
    params_ = enforce_constraints(std::move(params_), cfg_.constraints, &adam_);
    ++steps_;
    if (observer_) observer_(steps_, params_);
  }

  void begin_epoch(std::size_t epoch) { epoch_ = epoch; }
  void record(const EpochRecord& rec) { metrics_.epochs.push_back(rec); }

  [[noreturn]] void abort(const Error& cause) {
    throw TrainingAborted(cause, metrics_, best_);
  }

  const InsertionParams& params() const { return params_; }
  TrainResult finish() { return {std::move(best_), std::move(params_), std::move(metrics_)}; }

 private:
  const TrainConfig& cfg_;
  const StepObserver& observer_;
  InsertionParams params_;
  AdamState adam_;
  InsertionParams best_;
  RunMetrics metrics_;
  std::size_t epoch_ = 0;
  std::size_t steps_ = 0;
  bool have_best_ = false;
};

}  // namespace

double lr_at(const LrSchedule& schedule, std::size_t epoch, std::size_t total_epochs) {
  if (const auto* step = std::get_if<StepDecay>(&schedule)) {
    const auto drops = static_cast<double>(epoch / step->period);
    return step->lr0 * std::pow(step->factor, drops);
  }
  const auto& cosine = std::get<CosineSchedule>(schedule);
  if (total_epochs <= 1) return cosine.hi;
  const double progress = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  return cosine.lo + 0.5 * (cosine.hi - cosine.lo) * (1.0 + std::cos(kPi * progress));
}

void validate_config(const TrainConfig& cfg) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, msg); };
  if (cfg.epochs < 1) fail("epochs must be >= 1");
  if (!(cfg.gamma >= 0.0)) fail("gamma must be >= 0");
  if (!(cfg.clip_norm > 0.0)) fail("clip_norm must be > 0");
  if (cfg.batch_size < 1) fail("batch_size must be >= 1");
  if (const auto* step = std::get_if<StepDecay>(&cfg.schedule)) {
    if (!(step->lr0 > 0.0)) fail("learning rate must be > 0");
    if (!(step->factor > 0.0)) fail("decay factor must be > 0");
    if (step->period < 1) fail("decay period must be >= 1");
  } else {
    const auto& cosine = std::get<CosineSchedule>(cfg.schedule);
    if (!(cosine.hi > 0.0) || !(cosine.lo > 0.0)) fail("learning rates must be > 0");
  }
  if (cfg.n_pre + cfg.n_suff == 0) fail("at least one of n_pre, n_suff must be positive");
  if (cfg.m_pre < 1 || cfg.m_suff < 1) fail("basis ranks must be >= 1");
}

AdamState::AdamState(const InsertionParams& params)
    : first_moment(ParamGrads::zeros_like(params)), second_moment(ParamGrads::zeros_like(params)) {}

AugmentedEmbedding forward_augmented(const InsertionParams& params, const PromptEmbedding& prompt,
                                     Mode mode) {
  Mat v_pre = build_insert_unchecked(params.prefix);
  Mat v_suff = build_insert_unchecked(params.suffix);
  if (mode == Mode::kIpgoPlus) {
    v_pre = attach_attention(v_pre, prompt);
    v_suff = attach_attention(v_suff, prompt);
  }
  return concat(v_pre, prompt, v_suff);
}

ObjectiveEval evaluate_objective(const InsertionParams& params, const PromptEmbedding& prompt,
                                 RewardOracle& oracle, Mode mode, double gamma) {
  const Mat v_pre = build_insert_unchecked(params.prefix);
  const Mat v_suff = build_insert_unchecked(params.suffix);
  const bool plus = mode == Mode::kIpgoPlus;
  const AugmentedEmbedding aug = plus ? concat(attach_attention(v_pre, prompt), prompt,
                                               attach_attention(v_suff, prompt))
                                      : concat(v_pre, prompt, v_suff);

  const OracleResult res = oracle.evaluate(aug, prompt);
  check_oracle_result(res, aug);
  const ConformityResult conf = conformity_penalty(aug, prompt);

  ObjectiveEval out;
  out.reward = res.reward;
  out.p_conf = conf.penalty;
  out.objective = -res.reward + gamma * conf.penalty;

  // dL/daug = -dreward/daug + gamma dp_conf/daug
  Mat d_aug = gamma * conf.grad;
  d_aug -= res.grad;

  Mat d_pre = d_aug.col_block(0, aug.n_pre);
  Mat d_suff = d_aug.col_block(aug.n_pre + aug.k, aug.n_suff);
  if (plus) {
    d_pre = backward_attention(v_pre, prompt, d_pre);
    d_suff = backward_attention(v_suff, prompt, d_suff);
  }
  out.grads.prefix = backward_insert(params.prefix, d_pre);
  out.grads.suffix = backward_insert(params.suffix, d_suff);
  return out;
}

ObjectiveEval evaluate_batch_objective(const InsertionParams& params,
                                       std::span<const PromptEmbedding> prompts,
                                       RewardOracle& oracle, Mode mode, double gamma) {
  if (prompts.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty prompt batch");
  }
  // Fixed-order reduction starting from the first prompt's terms.
  ObjectiveEval total = evaluate_objective(params, prompts[0], oracle, mode, gamma);
  for (std::size_t i = 1; i < prompts.size(); ++i) {
    const ObjectiveEval one = evaluate_objective(params, prompts[i], oracle, mode, gamma);
    total.reward += one.reward;
    total.p_conf += one.p_conf;
    total.objective += one.objective;
    total.grads += one.grads;
  }
  const auto n = static_cast<double>(prompts.size());
  total.reward /= n;
  total.p_conf /= n;
  total.objective /= n;
  total.grads.scale(1.0 / n);
  return total;
}

ParamGrads clip_grads(ParamGrads grads, double c) {
  if (!(c > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "clip norm must be > 0");
  }
  const double norm = grads.global_norm();
  if (norm > c) grads.scale(c / norm);
  return grads;
}

void adam_step(AdamState& state, InsertionParams& params, const ParamGrads& grads, double lr) {
  state.step += 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double eps = state.epsilon;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(b1, t);
  const double bias2 = 1.0 - std::pow(b2, t);
  for_each_tensor(params, state.first_moment, state.second_moment, grads,
                  [&](std::span<double> p, std::span<double> m, std::span<double> v,
                      std::span<const double> g) {
                    if (p.size() != g.size()) {
                      throw Error(ErrorCode::kDimensionMismatch,
                                  "adam_step: gradient does not match parameter shape");
                    }
                    for (std::size_t i = 0; i < p.size(); ++i) {
                      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                      const double m_hat = m[i] / bias1;
                      const double v_hat = v[i] / bias2;
                      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
                    }
                  });
}

long wrap_angle(double& theta) {
  const double k = std::ceil((theta - kPi / 2.0) / kPi);
  theta -= k * kPi;
  // Guard the half-open boundaries against rounding in the subtraction.
  long turns = static_cast<long>(k);
  while (theta > kPi / 2.0) {
    theta -= kPi;
    ++turns;
  }
  while (theta <= -kPi / 2.0) {
    theta += kPi;
    --turns;
  }
  return turns;
}

InsertionParams enforce_constraints(InsertionParams params, const ConstraintToggles& toggles,
                                    AdamState* adam) {
  InsertBlock* blocks[] = {&params.prefix, &params.suffix};
  InsertBlock* moments[] = {adam ? &adam->first_moment.prefix : nullptr,
                            adam ? &adam->first_moment.suffix : nullptr};
  for (int i = 0; i < 2; ++i) {
    InsertBlock& b = *blocks[i];
    const long turns = wrap_angle(b.theta1) + wrap_angle(b.theta2);
    if (turns % 2 != 0) {
      b.coeffs *= -1.0;
      if (moments[i] != nullptr) moments[i]->coeffs *= -1.0;
    }
    if (toggles.range) {
      for (double& z : b.coeffs.data()) z = std::clamp(z, -1.0, 1.0);
    }
    if (toggles.orthogonality) b.basis = qr_orthonormalize(b.basis);
  }
  return params;
}

TrainResult train_promptwise(const PromptEmbedding& prompt, RewardOracle& oracle,
                             const TrainConfig& cfg, const StepObserver& observer) {
  validate_config(cfg);
  Trainer trainer(cfg, prompt.dim(), observer);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    trainer.begin_epoch(epoch);
    const double lr = lr_at(cfg.schedule, epoch, cfg.epochs);
    ObjectiveEval eval;
    try {
      eval = evaluate_objective(trainer.params(), prompt, oracle, cfg.mode, cfg.gamma);
    } catch (const Error& e) {
      trainer.abort(e);
    }
    trainer.record({epoch, eval.reward, eval.p_conf, eval.objective, eval.grads.global_norm(), lr});
    trainer.step(eval, lr);
  }
  return trainer.finish();
}

TrainResult train_batch(std::span<const PromptEmbedding> prompts, RewardOracle& oracle,
                        const TrainConfig& cfg, const StepObserver& observer) {
  validate_config(cfg);
  if (cfg.mode != Mode::kIpgoPlus) {
    throw Error(ErrorCode::kInvalidArgument, "batch training requires ipgo-plus mode");
  }
  if (prompts.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "batch training needs at least one prompt");
  }
  const std::size_t dim = prompts[0].dim();
  for (const auto& p : prompts) {
    if (p.dim() != dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "prompt '" + p.id() + "' has d=" + std::to_string(p.dim()) +
                      ", batch uses d=" + std::to_string(dim));
    }
  }

  Trainer trainer(cfg, dim, observer);
  Rng shuffle_rng(splitmix64(cfg.seed ^ 0x53485546464C45ULL));
  std::vector<std::size_t> order(prompts.size());
  std::vector<PromptEmbedding> minibatch;
  minibatch.reserve(cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    trainer.begin_epoch(epoch);
    const double lr = lr_at(cfg.schedule, epoch, cfg.epochs);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }

    EpochRecord rec{epoch, 0.0, 0.0, 0.0, 0.0, lr};
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      minibatch.clear();
      for (std::size_t i = start; i < stop; ++i) minibatch.push_back(prompts[order[i]]);

      ObjectiveEval eval;
      try {
        eval = evaluate_batch_objective(trainer.params(), minibatch, oracle, cfg.mode, cfg.gamma);
      } catch (const Error& e) {
        trainer.abort(e);
      }
      const auto weight = static_cast<double>(minibatch.size());
      const double grad_norm = eval.grads.global_norm();
      if (steps == 0) {
        rec.reward = eval.reward * weight;
        rec.p_conf = eval.p_conf * weight;
        rec.objective = eval.objective * weight;
        rec.grad_norm = grad_norm;
      } else {
        rec.reward += eval.reward * weight;
        rec.p_conf += eval.p_conf * weight;
        rec.objective += eval.objective * weight;
        rec.grad_norm += grad_norm;
      }
      ++steps;
      trainer.step(eval, lr);
    }
    const auto n = static_cast<double>(prompts.size());
    rec.reward /= n;
    rec.p_conf /= n;
    rec.objective /= n;
    rec.grad_norm /= static_cast<double>(steps);
    trainer.record(rec);
  }
  return trainer.finish();
}

InsertPair build_inserts(const InsertionParams& params) {
  return {build_insert_unchecked(params.prefix), build_insert_unchecked(params.suffix)};
}

InsertPair mix_inserts(const InsertPair& a, const InsertPair& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "mixing weight must lie in [0, 1]");
  }
  if (!a.prefix.same_shape(b.prefix) || !a.suffix.same_shape(b.suffix)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cannot mix inserts of shapes (" + a.prefix.shape_string() + ", " +
                    a.suffix.shape_string() + ") and (" + b.prefix.shape_string() + ", " +
                    b.suffix.shape_string() + ")");
  }
  return {lerp(a.prefix, b.prefix, lambda), lerp(a.suffix, b.suffix, lambda)};
}

void write_metrics_jsonl(std::ostream& os, const RunMetrics& metrics) {
  for (const auto& rec : metrics.epochs) {
    nlohmann::ordered_json line;
    line["epoch"] = rec.epoch;
    line["reward"] = rec.reward;
    line["p_conf"] = rec.p_conf;
    line["objective"] = rec.objective;
    line["grad_norm"] = rec.grad_norm;
    line["lr"] = rec.lr;
    os << line.dump() << '\n';
  }
  nlohmann::ordered_json summary;
  summary["epochs"] = metrics.epochs.size();
  summary["best_reward"] = metrics.best_reward;
  summary["best_epoch"] = metrics.best_epoch;
  nlohmann::ordered_json line;
  line["summary"] = summary;
  os << line.dump() << '\n';
}

}  // namespace ipgo
