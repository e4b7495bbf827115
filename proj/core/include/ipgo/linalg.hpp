#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ipgo {

class Rng;

// Dense row-major matrix of doubles. Embedding matrices are stored d x L
// with one column per token.
//
// Zero-sized dimensions are permitted so that an empty prefix or suffix
// (N = 0) is representable; every other dimension is expected to be >= 1.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  // Row-by-row literal, e.g. Mat::from_rows({{1, 2}, {3, 4}}).
  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Mat identity(std::size_t n);
  static Mat column(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool same_shape(const Mat& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Mat transpose() const;
  // Columns [first, first + count).
  Mat col_block(std::size_t first, std::size_t count) const;
  // First `count` columns; shorthand used for "first m columns of I_d".
  Mat leading_cols(std::size_t count) const { return col_block(0, count); }
  void set_col_block(std::size_t first, const Mat& block);

  Mat& operator+=(const Mat& other);
  Mat& operator-=(const Mat& other);
  Mat& operator*=(double s);

  bool all_finite() const noexcept;

  friend bool operator==(const Mat& a, const Mat& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(double s, Mat a);

Mat matmul(const Mat& a, const Mat& b);
// a^T b without materializing the transpose.
Mat matmul_tn(const Mat& a, const Mat& b);
// a b^T without materializing the transpose.
Mat matmul_nt(const Mat& a, const Mat& b);

// Elementwise weighted sum lambda * a + (1 - lambda) * b.
Mat lerp(const Mat& a, const Mat& b, double lambda);

double frobenius_norm(const Mat& a);
double frobenius_dot(const Mat& a, const Mat& b);
double max_abs(const Mat& a);
double max_abs_diff(const Mat& a, const Mat& b);
// Square root of the sum of squared entries across every matrix in `mats`.
double global_norm(std::span<const Mat* const> mats);

// d x 1 arithmetic mean over the L columns of a d x L matrix.
Mat token_mean(const Mat& x);

// Gram-Schmidt (two passes) orthonormalization of the columns of a d x m
// matrix, m <= d. The triangular factor has a positive diagonal, so the map
// is a deterministic function of its input. Throws kRankDeficient when a
// column's residual norm falls below 1e-10.
Mat qr_orthonormalize(const Mat& a);

// Max-norm deviation of Q^T Q from the identity.
double orthonormality_error(const Mat& q);

Mat random_gaussian(std::size_t rows, std::size_t cols, Rng& rng);
Mat random_uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng);

// Throws kNonFinite naming `what` when any entry is NaN or infinite.
void require_finite(const Mat& a, const char* what);

}  // namespace ipgo
