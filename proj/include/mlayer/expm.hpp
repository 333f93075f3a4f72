#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "mlayer/matrix.hpp"

namespace mlayer {

namespace detail {

// (q,q) Pade numerator/denominator pieces. On return the approximant of
// exp(A) is (V+U) / (V-U).
inline void expm_pade3(const Matrix& a, Matrix& u, Matrix& v) {
  static const double b[] = {120.0, 60.0, 12.0, 1.0};
  const Matrix a2 = a * a;
  const Matrix id = Matrix::identity(a.rows());
  u = a * (b[3] * a2 + b[1] * id);
  v = b[2] * a2 + b[0] * id;
}

inline void expm_pade5(const Matrix& a, Matrix& u, Matrix& v) {
  static const double b[] = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix id = Matrix::identity(a.rows());
  u = a * (b[5] * a4 + b[3] * a2 + b[1] * id);
  v = b[4] * a4 + b[2] * a2 + b[0] * id;
}

inline void expm_pade7(const Matrix& a, Matrix& u, Matrix& v) {
  static const double b[] = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                             25200.0,    1512.0,    56.0,      1.0};
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix id = Matrix::identity(a.rows());
  u = a * (b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
  v = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
}

inline void expm_pade9(const Matrix& a, Matrix& u, Matrix& v) {
  static const double b[] = {17643225600.0, 8821612800.0, 2075673600.0,
                             302702400.0,   30270240.0,   2162160.0,
                             110880.0,      3960.0,       90.0,
                             1.0};
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix a8 = a6 * a2;
  const Matrix id = Matrix::identity(a.rows());
  u = a * (b[9] * a8 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
  v = b[8] * a8 + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
}

inline void expm_pade13(const Matrix& a, Matrix& u, Matrix& v) {
  static const double b[] = {64764752532480000.0, 32382376266240000.0,
                             7771770303897600.0,  1187353796428800.0,
                             129060195264000.0,   10559470521600.0,
                             670442572800.0,      33522128640.0,
                             1323241920.0,        40840800.0,
                             960960.0,            16380.0,
                             182.0,               1.0};
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix id = Matrix::identity(a.rows());
  u = a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
           b[3] * a2 + b[1] * id);
  v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 +
      b[2] * a2 + b[0] * id;
}

}  // namespace detail

/// Matrix exponential by scaling and squaring with a graded (3..13) Pade
/// approximant; degree and scaling are picked from the 1-norm using the
/// standard theta thresholds, so no squaring happens at all for the small
/// matrices that dominate this code base.
inline Matrix expm(const Matrix& m) {
  if (!m.square()) throw DimensionError("expm: matrix not square");
  if (!m.all_finite()) throw DomainError("expm: non-finite entry");
  if (m.rows() == 1) {
    Matrix r(1, 1);
    r(0, 0) = std::exp(m(0, 0));
    return r;
  }

  const double l1 = m.l1_norm();
  Matrix u, v;
  int squarings = 0;
  if (l1 < 1.495585217958292e-2) {
    detail::expm_pade3(m, u, v);
  } else if (l1 < 2.539398330063230e-1) {
    detail::expm_pade5(m, u, v);
  } else if (l1 < 9.504178996162932e-1) {
    detail::expm_pade7(m, u, v);
  } else if (l1 < 2.097847961257068e0) {
    detail::expm_pade9(m, u, v);
  } else {
    const double theta13 = 5.371920351148152;
    std::frexp(l1 / theta13, &squarings);
    if (squarings < 0) squarings = 0;
    Matrix scaled = m * std::ldexp(1.0, -squarings);
    detail::expm_pade13(scaled, u, v);
  }

  Matrix result = LuDecomposition(v - u).solve(v + u);
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

/// Truncated-series reference implementation: scale M by 2^-s until the
/// Frobenius norm is at most 0.5, sum terms until the next term's norm
/// drops below tol, then square s times. Shares no code with the Pade
/// path above (even the multiplications are local), so the two can check
/// each other.
inline Matrix expm_taylor(const Matrix& m, double tol = 1e-20) {
  if (!m.square()) throw DimensionError("expm_taylor: matrix not square");
  if (tol <= 0.0) throw DomainError("expm_taylor: tol must be positive");
  const int n = m.rows();

  auto mul = [n](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> c(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) {
        const double aik = a[static_cast<std::size_t>(i) * n + k];
        for (int j = 0; j < n; ++j)
          c[static_cast<std::size_t>(i) * n + j] +=
              aik * b[static_cast<std::size_t>(k) * n + j];
      }
    return c;
  };
  auto fnorm = [](const std::vector<double>& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
  };

  std::vector<double> scaled = m.data();
  int s = 0;
  while (fnorm(scaled) > 0.5) {
    for (double& v : scaled) v *= 0.5;
    ++s;
  }

  std::vector<double> sum(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) sum[static_cast<std::size_t>(i) * n + i] = 1.0;
  std::vector<double> term = sum;  // k = 0 term
  for (int k = 1;; ++k) {
    term = mul(term, scaled);
    for (double& v : term) v /= k;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += term[i];
    if (fnorm(term) < tol) break;
  }

  for (int i = 0; i < s; ++i) sum = mul(sum, sum);
  return Matrix(n, n, std::move(sum));
}

/// exp(M) together with the directional (Frechet) derivative
/// L(M, E) = lim_{t->0} (exp(M + tE) - exp(M)) / t, computed by
/// exponentiating the 2n x 2n block matrix [[M, E], [0, M]]; the top-right
/// block of the result is L(M, E) and the diagonal blocks are exp(M).
inline std::pair<Matrix, Matrix> expm_frechet(const Matrix& m, const Matrix& e) {
  if (!m.square()) throw DimensionError("expm_frechet: matrix not square");
  if (m.rows() != e.rows() || m.cols() != e.cols())
    throw DimensionError("expm_frechet: direction shape mismatch");
  const int n = m.rows();
  Matrix block(2 * n, 2 * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      block(i, j) = m(i, j);
      block(n + i, n + j) = m(i, j);
      block(i, n + j) = e(i, j);
    }
  Matrix big = expm(block);
  Matrix value(n, n), derivative(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      value(i, j) = big(i, j);
      derivative(i, j) = big(i, n + j);
    }
  return {std::move(value), std::move(derivative)};
}

/// Adjoint of the Frechet derivative: returns d<G, exp(M)>/dM = L(M^T, G),
/// the matrix satisfying <G, L(M, E)> = <expm_vjp(M, G), E> for every E.
inline Matrix expm_vjp(const Matrix& m, const Matrix& g) {
  if (m.rows() != g.rows() || m.cols() != g.cols())
    throw DimensionError("expm_vjp: shape mismatch");
  return expm_frechet(m.transpose(), g).second;
}

/// Largest singular value by power iteration on A^T A. Works for
/// rectangular A. The start vector is a fixed pseudo-random unit vector, so
/// repeated calls give bit-identical results.
inline double spectral_norm(const Matrix& a, double rtol = 1e-9,
                            int max_iterations = 10000) {
  if (!a.all_finite()) throw DomainError("spectral_norm: non-finite entry");
  const int cols = a.cols();

  std::vector<double> v(cols);
  std::uint64_t state = 0x9e3779b97f4a7c15ull;  // fixed seed
  for (int i = 0; i < cols; ++i) {
    state = state * 6364136223846793005ull + 1442695040888963407ull;
    v[i] = static_cast<double>(state >> 11) * 0x1.0p-53 - 0.5;
  }
  double vn = 0.0;
  for (double x : v) vn += x * x;
  vn = std::sqrt(vn);
  for (double& x : v) x /= vn;

  double sigma = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    std::vector<double> w = matvec(a, v);
    double wn = 0.0;
    for (double x : w) wn += x * x;
    wn = std::sqrt(wn);
    if (wn == 0.0) return 0.0;  // v is in the null space; treat as zero map
    std::vector<double> u = matvec_transposed(a, w);
    double un = 0.0;
    for (double x : u) un += x * x;
    un = std::sqrt(un);
    if (un == 0.0) return 0.0;
    for (int i = 0; i < cols; ++i) v[i] = u[i] / un;
    const double prev = sigma;
    sigma = wn;
    if (it > 0 && std::abs(sigma - prev) <= rtol * sigma) return sigma;
  }
  throw ConvergenceError("spectral_norm: power iteration did not converge",
                         sigma);
}

}  // namespace mlayer
