#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlayer/expm.hpp"
#include "mlayer/matrix.hpp"
#include "mlayer/rng.hpp"

namespace mlayer {

/// Model dimensions: p input features, d embedding size, n matrix size,
/// h outputs.
struct Dims {
  int p = 1;
  int d = 1;
  int n = 1;
  int h = 1;

  void validate() const {
    if (p < 1 || d < 1 || n < 1 || h < 1)
      throw DimensionError("Dims: all of p, d, n, h must be >= 1");
  }
  bool operator==(const Dims&) const = default;
};

/// Total trainable parameter count: the embedding contributes d*p + d, the
/// nonlinearity d*n^2 + n^2 + n^2*h + h.
inline long long param_count(const Dims& dims) {
  dims.validate();
  const long long p = dims.p, d = dims.d, n = dims.n, h = dims.h;
  return d * p + d + d * n * n + n * n + n * n * h + h;
}

/// The five trainable tensors of the model. The input x (length p) is
/// embedded as phi = U x + u0; the matrix M = B + sum_a phi_a T[a] is
/// exponentiated; the output is o_m = V_m + <S[m], exp(M)>.
struct MLayerParams {
  Dims dims;
  Matrix u;                 // d x p embedding weights
  std::vector<double> u0;   // d embedding bias
  std::vector<Matrix> t;    // d generator matrices, each n x n
  Matrix b;                 // n x n bias matrix
  std::vector<Matrix> s;    // h readout matrices, each n x n
  std::vector<double> v;    // h output bias

  static MLayerParams zeros(const Dims& dims) {
    dims.validate();
    MLayerParams p;
    p.dims = dims;
    p.u = Matrix(dims.d, dims.p);
    p.u0.assign(dims.d, 0.0);
    p.t.assign(dims.d, Matrix(dims.n, dims.n));
    p.b = Matrix(dims.n, dims.n);
    p.s.assign(dims.h, Matrix(dims.n, dims.n));
    p.v.assign(dims.h, 0.0);
    return p;
  }

  /// Applies f to every underlying parameter array, in a fixed order.
  template <typename F>
  void for_each_array(F&& f) {
    f(u.data());
    f(u0);
    for (auto& m : t) f(m.data());
    f(b.data());
    for (auto& m : s) f(m.data());
    f(v);
  }
  template <typename F>
  void for_each_array(F&& f) const {
    f(u.data());
    f(u0);
    for (const auto& m : t) f(m.data());
    f(b.data());
    for (const auto& m : s) f(m.data());
    f(v);
  }

  bool all_finite() const {
    bool ok = true;
    for_each_array([&ok](const std::vector<double>& a) {
      for (double x : a)
        if (!std::isfinite(x)) ok = false;
    });
    return ok;
  }

  /// Number of scalar parameters actually allocated.
  long long allocated_count() const {
    long long total = 0;
    for_each_array([&total](const std::vector<double>& a) {
      total += static_cast<long long>(a.size());
    });
    return total;
  }
};

/// Per-parameter gradients; shape-identical to the parameters.
using Gradients = MLayerParams;

inline void check_input_size(const MLayerParams& params, std::span<const double> x) {
  if (static_cast<int>(x.size()) != params.dims.p)
    throw DimensionError("input length " + std::to_string(x.size()) +
                         " != p = " + std::to_string(params.dims.p));
}

/// phi = U x + u0.
inline std::vector<double> embed(const MLayerParams& params, std::span<const double> x) {
  check_input_size(params, x);
  std::vector<double> phi(params.u0);
  for (int a = 0; a < params.dims.d; ++a) {
    double s = 0.0;
    for (int q = 0; q < params.dims.p; ++q) s += params.u(a, q) * x[q];
    phi[a] += s;
  }
  return phi;
}

inline Matrix matrix_from_embedding(const MLayerParams& params,
                                    const std::vector<double>& phi) {
  Matrix m = params.b;
  const std::size_t nn = m.data().size();
  for (int a = 0; a < params.dims.d; ++a) {
    const double w = phi[a];
    if (w == 0.0) continue;
    const std::vector<double>& ta = params.t[a].data();
    for (std::size_t i = 0; i < nn; ++i) m.data()[i] += w * ta[i];
  }
  return m;
}

/// M = B + sum_a phi_a T[a], an affine function of x.
inline Matrix build_matrix(const MLayerParams& params, std::span<const double> x) {
  return matrix_from_embedding(params, embed(params, x));
}

/// Everything the forward pass produces; backward and the robustness
/// bounds reuse these instead of recomputing the exponential.
struct Forward {
  std::vector<double> phi;
  Matrix m;
  Matrix exp_m;
  std::vector<double> out;
};

inline Forward forward(const MLayerParams& params, std::span<const double> x) {
  Forward f;
  f.phi = embed(params, x);
  f.m = matrix_from_embedding(params, f.phi);
  f.exp_m = expm(f.m);
  f.out.assign(params.dims.h, 0.0);
  for (int m = 0; m < params.dims.h; ++m) {
    double s = params.v[m];
    const std::vector<double>& sm = params.s[m].data();
    const std::vector<double>& em = f.exp_m.data();
    for (std::size_t i = 0; i < em.size(); ++i) s += sm[i] * em[i];
    f.out[m] = s;
  }
  return f;
}

inline std::vector<double> forward_out(const MLayerParams& params,
                                       std::span<const double> x) {
  return forward(params, x).out;
}

/// Gradients of <g_out, forward(params, x)> plus, when activity_lambda is
/// nonzero, of the activity term lambda * ||exp(M)||_F^2. The extra term
/// enters as an additional upstream matrix gradient 2*lambda*exp(M).
inline Gradients backward(const MLayerParams& params, const Forward& cache,
                          std::span<const double> x, std::span<const double> g_out,
                          double activity_lambda = 0.0) {
  check_input_size(params, x);
  if (static_cast<int>(g_out.size()) != params.dims.h)
    throw DimensionError("backward: upstream gradient length != h");
  const Dims& dims = params.dims;
  Gradients g = MLayerParams::zeros(dims);

  g.v.assign(g_out.begin(), g_out.end());

  // dS[m] = g_m * exp(M); G = sum_m g_m S[m] (+ activity term).
  Matrix upstream(dims.n, dims.n);
  const std::vector<double>& em = cache.exp_m.data();
  for (int m = 0; m < dims.h; ++m) {
    const double gm = g_out[m];
    std::vector<double>& dsm = g.s[m].data();
    const std::vector<double>& sm = params.s[m].data();
    for (std::size_t i = 0; i < em.size(); ++i) {
      dsm[i] = gm * em[i];
      upstream.data()[i] += gm * sm[i];
    }
  }
  if (activity_lambda != 0.0)
    for (std::size_t i = 0; i < em.size(); ++i)
      upstream.data()[i] += 2.0 * activity_lambda * em[i];

  // Pull the matrix gradient back through the exponential.
  Matrix ghat = expm_vjp(cache.m, upstream);

  g.b = ghat;
  std::vector<double> dphi(dims.d, 0.0);
  for (int a = 0; a < dims.d; ++a) {
    const double phi_a = cache.phi[a];
    std::vector<double>& dta = g.t[a].data();
    const std::vector<double>& ta = params.t[a].data();
    double inner = 0.0;
    for (std::size_t i = 0; i < dta.size(); ++i) {
      dta[i] = phi_a * ghat.data()[i];
      inner += ta[i] * ghat.data()[i];
    }
    dphi[a] = inner;
  }

  g.u0 = dphi;
  for (int a = 0; a < dims.d; ++a) {
    const double da = dphi[a];
    if (da == 0.0) continue;
    for (int q = 0; q < dims.p; ++q) g.u(a, q) = da * x[q];
  }
  return g;
}

inline Gradients backward(const MLayerParams& params, std::span<const double> x,
                          std::span<const double> g_out,
                          double activity_lambda = 0.0) {
  return backward(params, forward(params, x), x, g_out, activity_lambda);
}

/// All tensors i.i.d. Normal(0, 0.05^2).
inline MLayerParams init_standard(const Dims& dims, std::uint64_t seed) {
  MLayerParams p = MLayerParams::zeros(dims);
  Rng rng(seed);
  p.for_each_array([&rng](std::vector<double>& a) {
    for (double& x : a) x = rng.normal(0.0, 0.05);
  });
  return p;
}

/// Initialization for periodic extrapolation: B and every T[a] get
/// Normal(-10, 0.01^2) on the diagonal and Normal(0, 0.01^2) off it, which
/// pushes the initial matrix's eigenvalues into the negative half-plane;
/// the embedding gets Normal(0.1, 0.05^2); S and V as in init_standard.
inline MLayerParams init_periodic(const Dims& dims, std::uint64_t seed) {
  MLayerParams p = MLayerParams::zeros(dims);
  Rng rng(seed);
  auto fill_generator = [&](Matrix& m) {
    for (int i = 0; i < dims.n; ++i)
      for (int j = 0; j < dims.n; ++j)
        m(i, j) = (i == j) ? rng.normal(-10.0, 0.01) : rng.normal(0.0, 0.01);
  };
  for (auto& v : p.u.data()) v = rng.normal(0.1, 0.05);
  for (auto& v : p.u0) v = rng.normal(0.1, 0.05);
  for (auto& m : p.t) fill_generator(m);
  fill_generator(p.b);
  for (auto& m : p.s)
    for (auto& v : m.data()) v = rng.normal(0.0, 0.05);
  for (auto& v : p.v) v = rng.normal(0.0, 0.05);
  return p;
}

/// Re-expresses the same function under the gauge freedom of the
/// architecture: any invertible P (d x d) and Q (n x n) give
///   U' = P U, u0' = P u0, T'_a = sum_b inv(P)_{ba} Q T_b inv(Q),
///   B' = Q B inv(Q), S'_m = inv(Q)^T S_m Q^T, V' = V,
/// and forward outputs are unchanged.
inline MLayerParams reparameterize(const MLayerParams& params, const Matrix& p_mat,
                                   const Matrix& q_mat) {
  const Dims& dims = params.dims;
  if (p_mat.rows() != dims.d || p_mat.cols() != dims.d)
    throw DimensionError("reparameterize: P must be d x d");
  if (q_mat.rows() != dims.n || q_mat.cols() != dims.n)
    throw DimensionError("reparameterize: Q must be n x n");

  LuDecomposition p_lu(p_mat);
  LuDecomposition q_lu(q_mat);
  if (p_lu.singular()) throw DomainError("reparameterize: P is singular");
  if (q_lu.singular()) throw DomainError("reparameterize: Q is singular");
  const Matrix p_inv = p_lu.inverse();
  const Matrix q_inv = q_lu.inverse();
  const Matrix q_inv_t = q_inv.transpose();
  const Matrix q_t = q_mat.transpose();

  MLayerParams out = MLayerParams::zeros(dims);
  out.dims = dims;
  out.u = p_mat * params.u;
  {
    Matrix u0_col(dims.d, 1);
    for (int a = 0; a < dims.d; ++a) u0_col(a, 0) = params.u0[a];
    Matrix r = p_mat * u0_col;
    for (int a = 0; a < dims.d; ++a) out.u0[a] = r(a, 0);
  }
  std::vector<Matrix> conjugated;
  conjugated.reserve(dims.d);
  for (int b = 0; b < dims.d; ++b) conjugated.push_back(q_mat * params.t[b] * q_inv);
  for (int a = 0; a < dims.d; ++a) {
    Matrix acc(dims.n, dims.n);
    for (int b = 0; b < dims.d; ++b) {
      const double w = p_inv(b, a);
      if (w == 0.0) continue;
      for (std::size_t i = 0; i < acc.data().size(); ++i)
        acc.data()[i] += w * conjugated[b].data()[i];
    }
    out.t[a] = std::move(acc);
  }
  out.b = q_mat * params.b * q_inv;
  for (int m = 0; m < dims.h; ++m) out.s[m] = q_inv_t * params.s[m] * q_t;
  out.v = params.v;
  return out;
}

}  // namespace mlayer
