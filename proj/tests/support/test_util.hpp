#pragma once

#include <vector>

#include "mlayer/matrix.hpp"
#include "mlayer/model.hpp"
#include "mlayer/rng.hpp"

namespace mlayer::testing {

inline Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal(0.0, scale);
  return m;
}

/// Random matrix rescaled to a target Frobenius norm.
inline Matrix random_matrix_with_norm(Rng& rng, int n, double fro_norm) {
  Matrix m = random_matrix(rng, n, n);
  const double f = m.frobenius_norm();
  if (f > 0.0) m *= fro_norm / f;
  return m;
}

inline double max_rel_error(const Matrix& got, const Matrix& want) {
  const double denom = want.frobenius_norm();
  Matrix diff = got;
  diff -= want;
  return diff.frobenius_norm() / (denom > 0.0 ? denom : 1.0);
}

inline double inner(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

/// Central finite difference of a scalar function along one coordinate of a
/// parameter array.
template <typename F>
double central_difference(std::vector<double>& theta, std::size_t index, double step, F&& f) {
  const double saved = theta[index];
  theta[index] = saved + step;
  const double up = f();
  theta[index] = saved - step;
  const double down = f();
  theta[index] = saved;
  return (up - down) / (2.0 * step);
}

}  // namespace mlayer::testing
