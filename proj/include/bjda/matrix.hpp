#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bjda {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_{rows}, cols_{cols}, data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_{rows}, cols_{cols}, data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  /// Builds a matrix from untrusted values, rejecting NaN/Inf.
  static Matrix checked(std::size_t rows, std::size_t cols, std::vector<double> data) {
    Matrix m(rows, cols, std::move(data));
    for (std::size_t k = 0; k < m.data_.size(); ++k)
      if (!std::isfinite(m.data_[k]))
        throw DomainError("Matrix: non-finite entry at (" + std::to_string(k / cols) + "," +
                          std::to_string(k % cols) + ")");
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix diag(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::string shape() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }
  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Matrix& operator+=(const Matrix& o) {
    require_same(o, "+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same(o, "-=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  Matrix& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }
  friend bool operator==(const Matrix&, const Matrix&) = default;

  double sum() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }
  double trace() const {
    if (rows_ != cols_) throw DimensionError("trace: non-square matrix " + shape());
    double s = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) s += (*this)(i, i);
    return s;
  }
  double frobenius_norm() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }
  double max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }
  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  void require_same(const Matrix& o, const char* op) const {
    if (!same_shape(o))
      throw DimensionError(std::string("Matrix ") + op + ": shape mismatch " + shape() + " vs " +
                           o.shape());
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Trans { none, transpose };

namespace detail {
// C[n x m] += A[n x k] * B[k x m], all row-major and contiguous. Blocked over
// k so a panel of B stays cache resident across rows of A. The summation
// order per entry is fixed, so results are bitwise reproducible.
inline void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* A, const double* B,
                    double* C) {
  constexpr std::size_t kc = 64;
  for (std::size_t p0 = 0; p0 < k; p0 += kc) {
    const std::size_t p1 = std::min(k, p0 + kc);
    for (std::size_t i = 0; i < n; ++i) {
      double* __restrict crow = C + i * m;
      const double* arow = A + i * k;
      for (std::size_t p = p0; p < p1; ++p) {
        const double aip = arow[p];
        if (aip == 0.0) continue;
        const double* __restrict brow = B + p * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
      }
    }
  }
}
}  // namespace detail

/// out = op(a) * op(b).
inline Matrix matmul(const Matrix& a, const Matrix& b, Trans ta = Trans::none,
                     Trans tb = Trans::none) {
  const std::size_t n = ta == Trans::none ? a.rows() : a.cols();
  const std::size_t k = ta == Trans::none ? a.cols() : a.rows();
  const std::size_t kb = tb == Trans::none ? b.rows() : b.cols();
  const std::size_t m = tb == Trans::none ? b.cols() : b.rows();
  if (k != kb)
    throw DimensionError("matmul: inner dimensions differ, " + a.shape() +
                         (ta == Trans::transpose ? "^T" : "") + " x " + b.shape() +
                         (tb == Trans::transpose ? "^T" : ""));
  Matrix out(n, m);
  if (n == 0 || m == 0 || k == 0) return out;
  const Matrix at = ta == Trans::none ? Matrix() : a.transpose();
  const Matrix bt = tb == Trans::none ? Matrix() : b.transpose();
  const Matrix& A = ta == Trans::none ? a : at;
  const Matrix& B = tb == Trans::none ? b : bt;
  detail::gemm_nn(n, k, m, A.data().data(), B.data().data(), out.data().data());
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw DimensionError("hadamard: shape mismatch " + a.shape() + " vs " + b.shape());
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] *= bd[k];
  return out;
}

/// Column means of a sample matrix (rows are samples).
inline Matrix column_mean(const Matrix& x) {
  Matrix mu(1, x.cols());
  if (x.rows() == 0) return mu;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) mu(0, j) += x(i, j);
  mu *= 1.0 / static_cast<double>(x.rows());
  return mu;
}

inline Matrix center_rows(const Matrix& x) {
  Matrix mu = column_mean(x);
  Matrix c = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) c(i, j) -= mu(0, j);
  return c;
}

/// Biased empirical covariance (1/n) Xc^T Xc.
inline Matrix empirical_covariance(const Matrix& x) {
  if (x.rows() == 0) throw InputError("empirical_covariance: no samples");
  Matrix c = center_rows(x);
  Matrix s = matmul(c, c, Trans::transpose, Trans::none);
  s *= 1.0 / static_cast<double>(x.rows());
  return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw DimensionError("max_abs_diff: shape mismatch " + a.shape() + " vs " + b.shape());
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

inline std::string to_string(const Matrix& m) {
  std::ostringstream os;
  os.precision(6);
  os << "[";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    os << (i ? "; " : "");
    for (std::size_t j = 0; j < m.cols(); ++j) os << (j ? ", " : "") << m(i, j);
  }
  os << "]";
  return os.str();
}

}  // namespace bjda
