#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Keeps a function as one shared instantiation. The optimizer may otherwise
// clone an inlined body per call site with different floating-point
// contraction, and bit-level reproducibility across call sites is part of
// the training contract.
#if defined(__GNUC__) || defined(__clang__)
#define MLAYER_NOINLINE __attribute__((noinline))
#else
#define MLAYER_NOINLINE
#endif

namespace mlayer {

/// Shape or size mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside the mathematical domain of an operation (non-finite
/// entries, singular matrix where an inverse is required, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// An iterative method ran out of iterations. Carries the last estimate so
/// callers can decide whether it is still usable.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_estimate)
      : std::runtime_error(what), last_estimate_(last_estimate) {}
  double last_estimate() const { return last_estimate_; }

 private:
  double last_estimate_;
};

/// Dense real matrix, row-major, 64-bit floats.
class Matrix {
 public:
  Matrix() = default;

  /// Zero matrix of the given shape.
  Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 1 || cols < 1) throw DimensionError("Matrix: non-positive shape");
    data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  }

  /// From row-major data; length must equal rows*cols and all entries must
  /// be finite.
  Matrix(int rows, int cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows < 1 || cols < 1) throw DimensionError("Matrix: non-positive shape");
    if (data_.size() != static_cast<std::size_t>(rows) * cols)
      throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows) + "x" + std::to_string(cols));
    if (!all_finite()) throw DomainError("Matrix: non-finite entry");
  }

  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  friend Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols_ != b.rows_) throw DimensionError("matmul: inner dimensions differ");
    Matrix c(a.rows_, b.cols_);
    // i-k-j order: the inner loop runs over contiguous rows of b and c.
    for (int i = 0; i < a.rows_; ++i) {
      double* ci = &c.data_[static_cast<std::size_t>(i) * c.cols_];
      for (int k = 0; k < a.cols_; ++k) {
        const double aik = a(i, k);
        const double* bk = &b.data_[static_cast<std::size_t>(k) * b.cols_];
        for (int j = 0; j < b.cols_; ++j) ci[j] += aik * bk[j];
      }
    }
    return c;
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  /// Max absolute column sum (the induced 1-norm).
  double l1_norm() const {
    double best = 0.0;
    for (int j = 0; j < cols_; ++j) {
      double s = 0.0;
      for (int i = 0; i < rows_; ++i) s += std::abs((*this)(i, j));
      if (s > best) best = s;
    }
    return best;
  }

  double max_abs() const {
    double best = 0.0;
    for (double v : data_) best = std::max(best, std::abs(v));
    return best;
  }

 private:
  void require_same_shape(const Matrix& o, const char* op) const {
    if (rows_ != o.rows_ || cols_ != o.cols_)
      throw DimensionError(std::string("Matrix ") + op + ": shape mismatch");
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

inline double frobenius_norm(const Matrix& a) { return a.frobenius_norm(); }

/// y = A x.
inline std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
  if (a.cols() != static_cast<int>(x.size()))
    throw DimensionError("matvec: size mismatch");
  std::vector<double> y(a.rows(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

/// y = A^T x.
inline std::vector<double> matvec_transposed(const Matrix& a, const std::vector<double>& x) {
  if (a.rows() != static_cast<int>(x.size()))
    throw DimensionError("matvec_transposed: size mismatch");
  std::vector<double> y(a.cols(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    for (int j = 0; j < a.cols(); ++j) y[j] += a(i, j) * xi;
  }
  return y;
}

/// LU factorization with partial pivoting. Factors once, solves many.
class LuDecomposition {
 public:
  explicit LuDecomposition(Matrix a) : lu_(std::move(a)), piv_(lu_.rows()) {
    if (!lu_.square()) throw DimensionError("LU: matrix not square");
    const int n = lu_.rows();
    double scale = lu_.max_abs();
    // Relative pivot floor; declares the matrix singular instead of
    // dividing by a value at roundoff level.
    pivot_floor_ = (scale > 0.0 ? scale : 1.0) * 1e-300;
    sign_ = 1.0;
    for (int k = 0; k < n; ++k) {
      int p = k;
      double best = std::abs(lu_(k, k));
      for (int i = k + 1; i < n; ++i) {
        double v = std::abs(lu_(i, k));
        if (v > best) {
          best = v;
          p = i;
        }
      }
      piv_[k] = p;
      if (p != k) {
        for (int j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(p, j));
        sign_ = -sign_;
      }
      const double pivot = lu_(k, k);
      if (std::abs(pivot) < pivot_floor_) {
        singular_ = true;
        continue;
      }
      for (int i = k + 1; i < n; ++i) {
        const double f = lu_(i, k) / pivot;
        lu_(i, k) = f;
        for (int j = k + 1; j < n; ++j) lu_(i, j) -= f * lu_(k, j);
      }
    }
  }

  bool singular() const { return singular_; }

  double determinant() const {
    if (singular_) return 0.0;
    double d = sign_;
    for (int i = 0; i < lu_.rows(); ++i) d *= lu_(i, i);
    return d;
  }

  /// Solve A X = B.
  Matrix solve(const Matrix& b) const {
    if (singular_) throw DomainError("LU solve: singular matrix");
    if (b.rows() != lu_.rows()) throw DimensionError("LU solve: row mismatch");
    const int n = lu_.rows();
    Matrix x = b;
    for (int k = 0; k < n; ++k)
      if (piv_[k] != k)
        for (int j = 0; j < x.cols(); ++j) std::swap(x(k, j), x(piv_[k], j));
    for (int k = 0; k < n; ++k)      // forward, unit lower
      for (int i = k + 1; i < n; ++i) {
        const double f = lu_(i, k);
        if (f != 0.0)
          for (int j = 0; j < x.cols(); ++j) x(i, j) -= f * x(k, j);
      }
    for (int k = n - 1; k >= 0; --k) {  // backward, upper
      const double d = lu_(k, k);
      for (int j = 0; j < x.cols(); ++j) x(k, j) /= d;
      for (int i = 0; i < k; ++i) {
        const double f = lu_(i, k);
        if (f != 0.0)
          for (int j = 0; j < x.cols(); ++j) x(i, j) -= f * x(k, j);
      }
    }
    return x;
  }

  Matrix inverse() const { return solve(Matrix::identity(lu_.rows())); }

 private:
  Matrix lu_;
  std::vector<int> piv_;
  double pivot_floor_ = 0.0;
  double sign_ = 1.0;
  bool singular_ = false;
};

inline Matrix lu_solve(const Matrix& a, const Matrix& b) {
  return LuDecomposition(a).solve(b);
}

inline double determinant(const Matrix& a) {
  return LuDecomposition(a).determinant();
}

inline Matrix inverse(const Matrix& a) { return LuDecomposition(a).inverse(); }

}  // namespace mlayer
