#include "ipgo/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ipgo/error.hpp"
#include "ipgo/rng.hpp"

namespace ipgo {

namespace {

constexpr double kRankTolerance = 1e-10;

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kDimensionMismatch, std::string(op) + ": shape mismatch " +
                                                   a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matrix data length " + std::to_string(data_.size()) + " does not match " +
                    shape_string());
  }
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw Error(ErrorCode::kDimensionMismatch, "from_rows: ragged row literal");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  return Mat(r, c, std::move(data));
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::column(std::span<const double> values) {
  return Mat(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

std::string Mat::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

Mat Mat::transpose() const {
  Mat t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  }
  return t;
}

Mat Mat::col_block(std::size_t first, std::size_t count) const {
  if (first + count > cols_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "col_block: columns [" + std::to_string(first) + ", " +
                    std::to_string(first + count) + ") out of range for " + shape_string());
  }
  Mat out(rows_, count);
  for (std::size_t r = 0; r < rows_; ++r) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + first), count,
                out.data_.begin() + static_cast<std::ptrdiff_t>(r * count));
  }
  return out;
}

void Mat::set_col_block(std::size_t first, const Mat& block) {
  if (block.rows_ != rows_ || first + block.cols_ > cols_) {
    throw Error(ErrorCode::kDimensionMismatch, "set_col_block: block " + block.shape_string() +
                                                   " does not fit " + shape_string());
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    std::copy_n(block.data_.begin() + static_cast<std::ptrdiff_t>(r * block.cols_), block.cols_,
                data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + first));
  }
}

Mat& Mat::operator+=(const Mat& other) {
  require_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Mat& Mat::operator-=(const Mat& other) {
  require_same_shape(*this, other, "subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Mat& Mat::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

bool Mat::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(double s, Mat a) { return a *= s; }

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matmul: " + a.shape_string() + " * " + b.shape_string());
  }
  Mat out(a.rows(), b.cols());
  // i-k-j order; every out(i, j) accumulates over k in increasing order.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matmul_tn: " + a.shape_string() + "^T * " + b.shape_string());
  }
  Mat out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  }
  return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matmul_nt: " + a.shape_string() + " * " + b.shape_string() + "^T");
  }
  Mat out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
      out(i, j) = acc;
    }
  }
  return out;
}

Mat lerp(const Mat& a, const Mat& b, double lambda) {
  require_same_shape(a, b, "lerp");
  Mat out(a.rows(), a.cols());
  auto od = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = lambda * ad[i] + (1.0 - lambda) * bd[i];
  return out;
}

double frobenius_norm(const Mat& a) { return std::sqrt(frobenius_dot(a, a)); }

double frobenius_dot(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "frobenius_dot");
  double acc = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) acc += ad[i] * bd[i];
  return acc;
}

double max_abs(const Mat& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) m = std::max(m, std::abs(ad[i] - bd[i]));
  return m;
}

double global_norm(std::span<const Mat* const> mats) {
  if (mats.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "global_norm of an empty list");
  }
  double acc = 0.0;
  for (const Mat* m : mats) {
    for (double x : m->data()) acc += x * x;
  }
  return std::sqrt(acc);
}

Mat token_mean(const Mat& x) {
  if (x.cols() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "token_mean of a matrix with no columns");
  }
  Mat mean(x.rows(), 1);
  const double inv = 1.0 / static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) acc += x(r, c);
    mean(r, 0) = acc * inv;
  }
  return mean;
}

Mat qr_orthonormalize(const Mat& a) {
  const std::size_t d = a.rows();
  const std::size_t m = a.cols();
  if (m > d) {
    throw Error(ErrorCode::kRankDeficient, "basis seed is rank deficient: " +
                                               std::to_string(m) + " columns in dimension " +
                                               std::to_string(d));
  }
  Mat q = a;
  std::vector<double> v(d);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t r = 0; r < d; ++r) v[r] = q(r, j);
    const double original = std::sqrt(
        std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    // Classical Gram-Schmidt applied twice is orthogonal to working precision.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t r = 0; r < d; ++r) dot += q(r, k) * v[r];
        for (std::size_t r = 0; r < d; ++r) v[r] -= dot * q(r, k);
      }
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (!(norm > kRankTolerance) || !(norm > kRankTolerance * original)) {
      throw Error(ErrorCode::kRankDeficient,
                  "basis seed is rank deficient (column " + std::to_string(j) + ")");
    }
    for (std::size_t r = 0; r < d; ++r) q(r, j) = v[r] / norm;
  }
  return q;
}

double orthonormality_error(const Mat& q) {
  const Mat gram = matmul_tn(q, q);
  return max_abs_diff(gram, Mat::identity(q.cols()));
}

Mat random_gaussian(std::size_t rows, std::size_t cols, Rng& rng) {
  Mat out(rows, cols);
  for (double& x : out.data()) x = rng.gaussian();
  return out;
}

Mat random_uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
  Mat out(rows, cols);
  for (double& x : out.data()) x = rng.uniform(lo, hi);
  return out;
}

void require_finite(const Mat& a, const char* what) {
  if (!a.all_finite()) {
    throw Error(ErrorCode::kNonFinite, std::string(what) + " contains NaN or Inf");
  }
}

}  // namespace ipgo
