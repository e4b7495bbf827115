// Hot paths at full size: d = 768, rank 300, ten tokens per insert and a
// 77-token prompt.

#include <benchmark/benchmark.h>

#include "ipgo/augmentation.hpp"
#include "ipgo/optimizer.hpp"
#include "ipgo/oracle_server.hpp"
#include "ipgo/parameterization.hpp"
#include "ipgo/rewards.hpp"
#include "ipgo/rng.hpp"

namespace {

using namespace ipgo;

constexpr std::size_t kDim = 768, kRank = 300, kTokens = 10, kPrompt = 77;

InsertionParams full_params() { return init_params({kDim, kRank, kRank, kTokens, kTokens}, 1); }

void BM_BuildInsert(benchmark::State& state) {
  const InsertionParams p = full_params();
  for (auto _ : state) benchmark::DoNotOptimize(build_insert(p.prefix));
}
BENCHMARK(BM_BuildInsert)->Unit(benchmark::kMicrosecond);

void BM_BackwardInsert(benchmark::State& state) {
  const InsertionParams p = full_params();
  Rng rng(2);
  const Mat dv = random_gaussian(kDim, kTokens, rng);
  for (auto _ : state) benchmark::DoNotOptimize(backward_insert(p.prefix, dv));
}
BENCHMARK(BM_BackwardInsert)->Unit(benchmark::kMicrosecond);

void BM_ApplyR2(benchmark::State& state) {
  Rng rng(3);
  const Mat x = random_gaussian(kDim, kRank, rng);
  for (auto _ : state) benchmark::DoNotOptimize(apply_r2(0.3, x));
}
BENCHMARK(BM_ApplyR2)->Unit(benchmark::kMicrosecond);

void BM_AttachAttention(benchmark::State& state) {
  Rng rng(4);
  const Mat v = random_gaussian(kDim, kTokens, rng);
  const PromptEmbedding prompt = synthetic_prompt(kDim, kPrompt, 5);
  for (auto _ : state) benchmark::DoNotOptimize(attach_attention(v, prompt));
}
BENCHMARK(BM_AttachAttention)->Unit(benchmark::kMicrosecond);

void BM_BackwardAttention(benchmark::State& state) {
  Rng rng(6);
  const Mat v = random_gaussian(kDim, kTokens, rng);
  const Mat up = random_gaussian(kDim, kTokens, rng);
  const PromptEmbedding prompt = synthetic_prompt(kDim, kPrompt, 7);
  for (auto _ : state) benchmark::DoNotOptimize(backward_attention(v, prompt, up));
}
BENCHMARK(BM_BackwardAttention)->Unit(benchmark::kMicrosecond);

void BM_EvaluateObjective(benchmark::State& state) {
  const Mode mode = state.range(0) == 0 ? Mode::kIpgo : Mode::kIpgoPlus;
  const InsertionParams p = full_params();
  const PromptEmbedding prompt = synthetic_prompt(kDim, kPrompt, 8);
  auto oracle = quadratic_oracle(token_mean(prompt.emb()));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_objective(p, prompt, *oracle, mode, 1e-3));
}
BENCHMARK(BM_EvaluateObjective)->Arg(0)->Arg(1)->ArgNames({"plus"})->Unit(benchmark::kMicrosecond);

void BM_EnforceConstraints(benchmark::State& state) {
  const InsertionParams p = full_params();
  for (auto _ : state) benchmark::DoNotOptimize(enforce_constraints(p));
}
BENCHMARK(BM_EnforceConstraints)->Unit(benchmark::kMillisecond);

// One full training step: forward, backward, clip, Adam, constraints.
void BM_TrainEpoch(benchmark::State& state) {
  const PromptEmbedding prompt = synthetic_prompt(kDim, kPrompt, 9);
  auto oracle = quadratic_oracle(token_mean(prompt.emb()));
  TrainConfig cfg;
  cfg.mode = Mode::kIpgoPlus;
  cfg.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train_promptwise(prompt, *oracle, cfg));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
