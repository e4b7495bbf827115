#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ipgo/optimizer.hpp"

namespace ipgo {

// |a - n| / max(|a|, |n|, floor). Central differences at h = 1e-5 carry an
// absolute error around 1e-10, so components below the floor are judged on
// an absolute scale instead of blowing up the ratio.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Central differences of evaluate_objective(...).objective with respect to
// every trainable scalar.
ParamGrads finite_diff_objective(const InsertionParams& params, const PromptEmbedding& prompt,
                                 RewardOracle& oracle, Mode mode, double gamma, double h);

// Largest relative_error over all matching components; shapes must agree.
double max_relative_error(const Mat& analytic, const Mat& numeric, double floor = 1e-6);
double max_relative_error(const ParamGrads& analytic, const ParamGrads& numeric, double floor = 1e-6);

struct GradCheckConfig {
  std::size_t dim = 8;
  std::size_t m = 3;
  std::size_t n_pre = 2;
  std::size_t n_suff = 2;
  std::size_t tokens = 4;
  double gamma = 1e-3;
  double h = 1e-5;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t components = 0;
};

// Random feasible parameters with nonzero angles and coefficients spread
// over the whole box, so no term of the backward pass is trivially zero.
InsertionParams random_feasible_params(const InsertShape& shape, std::uint64_t seed);

// Checks every backward pass against finite differences: the insert
// parameterization, attention, the conformity penalty, the oracle itself and
// the full chain in both modes.
std::vector<GradCheckEntry> run_gradcheck(const GradCheckConfig& cfg, RewardOracle& oracle);

}  // namespace ipgo
