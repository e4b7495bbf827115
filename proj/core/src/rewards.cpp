#include "ipgo/rewards.hpp"

#include <cmath>
#include <sstream>

#include "ipgo/error.hpp"
#include "ipgo/rng.hpp"

namespace ipgo {

namespace {

void require_oracle_dim(const AugmentedEmbedding& aug, std::size_t dim, const char* oracle) {
  if (aug.dim() != dim) {
    throw Error(ErrorCode::kDimensionMismatch, std::string(oracle) + " oracle expects d=" +
                                                   std::to_string(dim) + ", got d=" +
                                                   std::to_string(aug.dim()));
  }
}

// Every column of the gradient of f(mean(aug)) equals df/dmean / L.
Mat broadcast_mean_grad(const Mat& d_mean, std::size_t tokens) {
  Mat grad(d_mean.rows(), tokens);
  const double inv = 1.0 / static_cast<double>(tokens);
  for (std::size_t r = 0; r < d_mean.rows(); ++r) {
    const double g = d_mean(r, 0) * inv;
    for (std::size_t c = 0; c < tokens; ++c) grad(r, c) = g;
  }
  return grad;
}

Mat require_column(Mat target, const char* oracle) {
  if (target.cols() != 1 || target.rows() == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string(oracle) + " target must be a d x 1 column, got " +
                    target.shape_string());
  }
  require_finite(target, oracle);
  return target;
}

class QuadraticOracle final : public RewardOracle {
 public:
  explicit QuadraticOracle(Mat target) : target_(require_column(std::move(target), "quadratic")) {}

  OracleResult evaluate(const AugmentedEmbedding& aug, const PromptEmbedding&) override {
    require_oracle_dim(aug, target_.rows(), "quadratic");
    const Mat diff = token_mean(aug.emb) - target_;
    OracleResult out;
    out.reward = -frobenius_dot(diff, diff);
    out.grad = broadcast_mean_grad(-2.0 * diff, aug.tokens());
    return out;
  }
  std::string describe() const override {
    return "quadratic(d=" + std::to_string(target_.rows()) + ")";
  }
  OracleDims dims() const override { return {target_.rows(), std::nullopt}; }

 private:
  Mat target_;
};

class CosineOracle final : public RewardOracle {
 public:
  explicit CosineOracle(Mat target) : target_(require_column(std::move(target), "cosine")) {
    target_norm_ = frobenius_norm(target_);
    if (!(target_norm_ > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "cosine oracle target must be nonzero");
    }
  }

  OracleResult evaluate(const AugmentedEmbedding& aug, const PromptEmbedding&) override {
    require_oracle_dim(aug, target_.rows(), "cosine");
    const Mat mean = token_mean(aug.emb);
    const double mean_norm = frobenius_norm(mean);
    if (!(mean_norm > 0.0)) {
      throw Error(ErrorCode::kUndefined, "undefined cosine at zero mean");
    }
    const double cosine = frobenius_dot(mean, target_) / (mean_norm * target_norm_);
    // d cos / d mean = t / (|mu| |t|) - cos * mu / |mu|^2
    Mat d_mean = (1.0 / (mean_norm * target_norm_)) * target_;
    d_mean -= (cosine / (mean_norm * mean_norm)) * mean;
    OracleResult out;
    out.reward = cosine;
    out.grad = broadcast_mean_grad(d_mean, aug.tokens());
    return out;
  }
  std::string describe() const override {
    return "cosine(d=" + std::to_string(target_.rows()) + ")";
  }
  OracleDims dims() const override { return {target_.rows(), std::nullopt}; }

 private:
  Mat target_;
  double target_norm_ = 0.0;
};

class LinearOracle final : public RewardOracle {
 public:
  explicit LinearOracle(Mat direction)
      : direction_(require_column(std::move(direction), "linear")) {}

  OracleResult evaluate(const AugmentedEmbedding& aug, const PromptEmbedding&) override {
    require_oracle_dim(aug, direction_.rows(), "linear");
    OracleResult out;
    out.reward = frobenius_dot(token_mean(aug.emb), direction_);
    out.grad = broadcast_mean_grad(direction_, aug.tokens());
    return out;
  }
  std::string describe() const override {
    return "linear(d=" + std::to_string(direction_.rows()) + ")";
  }
  OracleDims dims() const override { return {direction_.rows(), std::nullopt}; }

 private:
  Mat direction_;
};

class NetOracle final : public RewardOracle {
 public:
  NetOracle(std::size_t dim, std::size_t width, std::uint64_t seed)
      : dim_(dim), width_(width), seed_(seed) {
    if (dim == 0 || width == 0) {
      throw Error(ErrorCode::kInvalidArgument, "net oracle needs d >= 1 and hidden_width >= 1");
    }
    Rng rng(seed);
    w1_ = random_gaussian(width, dim, rng);
    w1_ *= 1.0 / std::sqrt(static_cast<double>(dim));
    b1_ = random_gaussian(width, 1, rng);
    b1_ *= 0.1;
    w2_ = random_gaussian(width, 1, rng);
    w2_ *= 1.0 / std::sqrt(static_cast<double>(width));
    b2_ = 0.1 * rng.gaussian();
  }

  OracleResult evaluate(const AugmentedEmbedding& aug, const PromptEmbedding&) override {
    require_oracle_dim(aug, dim_, "net");
    const Mat mean = token_mean(aug.emb);
    Mat hidden = matmul(w1_, mean) + b1_;
    for (double& h : hidden.data()) h = std::tanh(h);

    OracleResult out;
    out.reward = frobenius_dot(w2_, hidden) + b2_;
    // d reward / d pre-activation = w2 * (1 - h^2)
    Mat d_pre(width_, 1);
    for (std::size_t i = 0; i < width_; ++i) {
      d_pre(i, 0) = w2_(i, 0) * (1.0 - hidden(i, 0) * hidden(i, 0));
    }
    out.grad = broadcast_mean_grad(matmul_tn(w1_, d_pre), aug.tokens());
    return out;
  }
  std::string describe() const override {
    std::ostringstream os;
    os << "net(d=" << dim_ << ", width=" << width_ << ", seed=" << seed_ << ")";
    return os.str();
  }
  OracleDims dims() const override { return {dim_, std::nullopt}; }

 private:
  std::size_t dim_;
  std::size_t width_;
  std::uint64_t seed_;
  Mat w1_;
  Mat b1_;
  Mat w2_;
  double b2_ = 0.0;
};

class ConstantOracle final : public RewardOracle {
 public:
  explicit ConstantOracle(double value) : value_(value) {}

  OracleResult evaluate(const AugmentedEmbedding& aug, const PromptEmbedding&) override {
    return {value_, Mat(aug.dim(), aug.tokens()), {}};
  }
  std::string describe() const override { return "constant(" + std::to_string(value_) + ")"; }
  OracleDims dims() const override { return {0, std::nullopt}; }

 private:
  double value_;
};

}  // namespace

std::unique_ptr<RewardOracle> quadratic_oracle(Mat target) {
  return std::make_unique<QuadraticOracle>(std::move(target));
}

std::unique_ptr<RewardOracle> cosine_oracle(Mat target) {
  return std::make_unique<CosineOracle>(std::move(target));
}

std::unique_ptr<RewardOracle> linear_oracle(Mat direction) {
  return std::make_unique<LinearOracle>(std::move(direction));
}

std::unique_ptr<RewardOracle> net_oracle(std::size_t dim, std::size_t hidden_width,
                                         std::uint64_t seed) {
  return std::make_unique<NetOracle>(dim, hidden_width, seed);
}

std::unique_ptr<RewardOracle> constant_oracle(double value) {
  return std::make_unique<ConstantOracle>(value);
}

Mat finite_diff_grad(RewardOracle& oracle, const AugmentedEmbedding& aug,
                     const PromptEmbedding& prompt, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) {
    throw Error(ErrorCode::kInvalidArgument, "finite-difference step must lie in [1e-7, 1e-3]");
  }
  AugmentedEmbedding probe = aug;
  Mat grad(aug.dim(), aug.tokens());
  for (std::size_t r = 0; r < aug.dim(); ++r) {
    for (std::size_t c = 0; c < aug.tokens(); ++c) {
      const double saved = probe.emb(r, c);
      probe.emb(r, c) = saved + h;
      const double up = oracle.evaluate(probe, prompt).reward;
      probe.emb(r, c) = saved - h;
      const double down = oracle.evaluate(probe, prompt).reward;
      probe.emb(r, c) = saved;
      grad(r, c) = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

}  // namespace ipgo
