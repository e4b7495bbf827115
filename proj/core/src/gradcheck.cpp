#include "ipgo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "ipgo/error.hpp"
#include "ipgo/oracle_server.hpp"
#include "ipgo/rng.hpp"

namespace ipgo {

namespace {

// Visits every trainable scalar of a block in a fixed order.
void for_each_scalar(InsertBlock& b, const std::function<void(double&)>& fn) {
  for (double& x : b.basis.data()) fn(x);
  for (double& x : b.coeffs.data()) fn(x);
  fn(b.theta1);
  fn(b.theta2);
}

std::size_t block_size(const InsertBlock& b) { return b.basis.size() + b.coeffs.size() + 2; }

Mat finite_diff_mat(Mat x, double h, const std::function<double(const Mat&)>& f) {
  Mat out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double saved = x(i, j);
      x(i, j) = saved + h;
      const double up = f(x);
      x(i, j) = saved - h;
      const double down = f(x);
      x(i, j) = saved;
      out(i, j) = (up - down) / (2.0 * h);
    }
  }
  return out;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

double max_relative_error(const Mat& analytic, const Mat& numeric, double floor) {
  if (!analytic.same_shape(numeric)) {
    throw Error(ErrorCode::kDimensionMismatch, "cannot compare " + analytic.shape_string() +
                                                   " with " + numeric.shape_string());
  }
  double worst = 0.0;
  const auto a = analytic.data();
  const auto n = numeric.data();
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], n[i], floor));
  return worst;
}

double max_relative_error(const ParamGrads& analytic, const ParamGrads& numeric, double floor) {
  double worst = 0.0;
  for (const auto& [a, n] : {std::pair{&analytic.prefix, &numeric.prefix},
                             std::pair{&analytic.suffix, &numeric.suffix}}) {
    worst = std::max(worst, max_relative_error(a->basis, n->basis, floor));
    worst = std::max(worst, max_relative_error(a->coeffs, n->coeffs, floor));
    worst = std::max(worst, relative_error(a->theta1, n->theta1, floor));
    worst = std::max(worst, relative_error(a->theta2, n->theta2, floor));
  }
  return worst;
}

ParamGrads finite_diff_objective(const InsertionParams& params, const PromptEmbedding& prompt,
                                 RewardOracle& oracle, Mode mode, double gamma, double h) {
  InsertionParams probe = params;
  ParamGrads out = ParamGrads::zeros_like(params);
  auto objective = [&] { return evaluate_objective(probe, prompt, oracle, mode, gamma).objective; };
  for (auto [probe_block, out_block] : {std::pair{&probe.prefix, &out.prefix},
                                        std::pair{&probe.suffix, &out.suffix}}) {
    std::vector<double> diffs;
    diffs.reserve(block_size(*probe_block));
    for_each_scalar(*probe_block, [&](double& x) {
      const double saved = x;
      x = saved + h;
      const double up = objective();
      x = saved - h;
      const double down = objective();
      x = saved;
      diffs.push_back((up - down) / (2.0 * h));
    });
    std::size_t next = 0;
    for_each_scalar(*out_block, [&](double& x) { x = diffs[next++]; });
  }
  return out;
}

InsertionParams random_feasible_params(const InsertShape& shape, std::uint64_t seed) {
  InsertionParams p = init_params(shape, seed);
  Rng rng(splitmix64(seed ^ 0x4752414443484B));
  for (InsertBlock* b : {&p.prefix, &p.suffix}) {
    for (double& z : b->coeffs.data()) z = rng.uniform(-1.0, 1.0);
    b->theta1 = rng.uniform(-1.2, 1.2);
    b->theta2 = rng.uniform(-1.2, 1.2);
  }
  return p;
}

std::vector<GradCheckEntry> run_gradcheck(const GradCheckConfig& cfg, RewardOracle& oracle) {
  const InsertShape shape{cfg.dim, cfg.m, cfg.m, cfg.n_pre, cfg.n_suff};
  const InsertionParams params = random_feasible_params(shape, cfg.seed);
  const PromptEmbedding prompt = synthetic_prompt(cfg.dim, cfg.tokens, splitmix64(cfg.seed + 1));
  Rng rng(splitmix64(cfg.seed + 2));
  std::vector<GradCheckEntry> out;

  // Insert parameterization against a random linear functional of V.
  {
    const Mat g = random_gaussian(cfg.dim, cfg.n_pre, rng);
    const InsertBlock analytic = backward_insert(params.prefix, g);
    InsertBlock probe = params.prefix;
    auto f = [&] { return frobenius_dot(g, build_insert_unchecked(probe)); };
    std::vector<double> numeric;
    for_each_scalar(probe, [&](double& x) {
      const double saved = x;
      x = saved + cfg.h;
      const double up = f();
      x = saved - cfg.h;
      const double down = f();
      x = saved;
      numeric.push_back((up - down) / (2.0 * cfg.h));
    });
    InsertBlock copy = analytic;
    double worst = 0.0;
    std::size_t next = 0;
    for_each_scalar(copy, [&](double& x) { worst = std::max(worst, relative_error(x, numeric[next++])); });
    out.push_back({"build_insert", worst, numeric.size()});
  }

  // Attention residual against a random linear functional of its output.
  {
    const Mat v = build_insert_unchecked(params.prefix);
    const Mat g = random_gaussian(cfg.dim, cfg.n_pre, rng);
    const Mat analytic = backward_attention(v, prompt, g);
    const Mat numeric = finite_diff_mat(v, cfg.h, [&](const Mat& x) {
      return frobenius_dot(g, attach_attention(x, prompt));
    });
    out.push_back({"attach_attention", max_relative_error(analytic, numeric), v.size()});
  }

  const AugmentedEmbedding aug = forward_augmented(params, prompt, Mode::kIpgo);

  {
    const ConformityResult conf = conformity_penalty(aug, prompt);
    const Mat numeric = finite_diff_mat(aug.emb, cfg.h, [&](const Mat& x) {
      AugmentedEmbedding probe = aug;
      probe.emb = x;
      return conformity_penalty(probe, prompt).penalty;
    });
    out.push_back({"conformity_penalty", max_relative_error(conf.grad, numeric), aug.emb.size()});
  }

  {
    const OracleResult res = oracle.evaluate(aug, prompt);
    const Mat numeric = finite_diff_grad(oracle, aug, prompt, cfg.h);
    out.push_back({"oracle " + oracle.describe(), max_relative_error(res.grad, numeric), aug.emb.size()});
  }

  for (Mode mode : {Mode::kIpgo, Mode::kIpgoPlus}) {
    const ObjectiveEval eval = evaluate_objective(params, prompt, oracle, mode, cfg.gamma);
    const ParamGrads numeric = finite_diff_objective(params, prompt, oracle, mode, cfg.gamma, cfg.h);
    out.push_back({std::string("full_chain ") + (mode == Mode::kIpgo ? "ipgo" : "ipgo-plus"),
                   max_relative_error(eval.grads, numeric),
                   block_size(params.prefix) + block_size(params.suffix)});
  }
  return out;
}

}  // namespace ipgo
