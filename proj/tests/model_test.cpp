#include "mlayer/model.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "mlayer/expm.hpp"
#include "support/test_util.hpp"

namespace mlayer {
namespace {

using testing::random_matrix;

MLayerParams random_params(const Dims& dims, std::uint64_t seed, double scale = 0.3) {
  MLayerParams p = MLayerParams::zeros(dims);
  Rng rng(seed);
  p.for_each_array([&](std::vector<double>& a) {
    for (double& v : a) v = rng.normal(0.0, scale);
  });
  return p;
}

/// Straight-line reimplementation of the forward pass on top of the
/// series-based exponential; shares no code with forward().
std::vector<double> forward_reference(const MLayerParams& params,
                                      const std::vector<double>& x) {
  const Dims& d = params.dims;
  std::vector<double> phi(d.d);
  for (int a = 0; a < d.d; ++a) {
    double s = params.u0[a];
    for (int q = 0; q < d.p; ++q) s += params.u(a, q) * x[q];
    phi[a] = s;
  }
  Matrix m(d.n, d.n);
  for (int i = 0; i < d.n; ++i)
    for (int j = 0; j < d.n; ++j) {
      double s = params.b(i, j);
      for (int a = 0; a < d.d; ++a) s += phi[a] * params.t[a](i, j);
      m(i, j) = s;
    }
  const Matrix e = expm_taylor(m);
  std::vector<double> out(d.h);
  for (int k = 0; k < d.h; ++k) {
    double s = params.v[k];
    for (int i = 0; i < d.n; ++i)
      for (int j = 0; j < d.n; ++j) s += params.s[k](i, j) * e(i, j);
    out[k] = s;
  }
  return out;
}

/// The worked 7x7 feature-cross construction.
MLayerParams feature_cross_params() {
  MLayerParams p = MLayerParams::zeros(Dims{3, 3, 7, 2});
  p.u = Matrix::identity(3);
  p.t[0](0, 1) = 1.0;
  p.t[1](0, 2) = 1.0;
  p.t[2](0, 3) = 1.0;
  p.t[0](2, 4) = 2.0;
  p.t[2](2, 5) = 2.0;
  p.t[2](5, 6) = 3.0;
  p.s[0](0, 4) = 1.0;
  p.s[1](0, 6) = 1.0;
  return p;
}

TEST(ParamCount, ReproducesKnownTotals) {
  EXPECT_EQ(param_count(Dims{784, 35, 30, 10}), 68885);
  EXPECT_EQ(param_count(Dims{3072, 35, 30, 10}), 148965);
  EXPECT_EQ(param_count(Dims{1, 1, 1, 1}), 6);
}

TEST(ParamCount, MatchesAllocatedStorage) {
  for (const Dims& dims : {Dims{3, 2, 4, 2}, Dims{5, 4, 6, 3}, Dims{784, 35, 30, 10}}) {
    const MLayerParams p = MLayerParams::zeros(dims);
    EXPECT_EQ(p.allocated_count(), param_count(dims));
  }
}

TEST(Embed, IdentityAndBias) {
  MLayerParams p = MLayerParams::zeros(Dims{2, 2, 1, 1});
  p.u = Matrix::identity(2);
  const std::vector<double> phi = embed(p, std::vector<double>{1.0, 2.0});
  EXPECT_EQ(phi[0], 1.0);
  EXPECT_EQ(phi[1], 2.0);

  MLayerParams q = MLayerParams::zeros(Dims{3, 1, 1, 1});
  q.u0[0] = 0.5;
  EXPECT_EQ(embed(q, std::vector<double>{7.0, 8.0, 9.0})[0], 0.5);
  EXPECT_THROW(embed(q, std::vector<double>{1.0}), DimensionError);
}

TEST(BuildMatrix, ReducesToBiasWithoutGenerators) {
  Dims dims{2, 2, 3, 1};
  MLayerParams p = random_params(dims, 1);
  for (auto& t : p.t)
    for (auto& v : t.data()) v = 0.0;
  const Matrix m1 = build_matrix(p, std::vector<double>{0.3, -0.7});
  const Matrix m2 = build_matrix(p, std::vector<double>{5.0, 5.0});
  EXPECT_LT(testing::max_rel_error(m1, p.b), 1e-15);
  EXPECT_LT(testing::max_rel_error(m2, p.b), 1e-15);
}

TEST(BuildMatrix, FeatureCrossLayout) {
  const MLayerParams p = feature_cross_params();
  const std::vector<double> x = {2.0, 3.0, 5.0};  // phi = x
  const Matrix m = build_matrix(p, x);
  Matrix want(7, 7);
  want(0, 1) = x[0];
  want(0, 2) = x[1];
  want(0, 3) = x[2];
  want(2, 4) = 2.0 * x[0];
  want(2, 5) = 2.0 * x[2];
  want(5, 6) = 3.0 * x[2];
  EXPECT_LT(testing::max_rel_error(m, want), 1e-15);
  // Nilpotency: M^4 = 0.
  const Matrix m4 = m * m * m * m;
  EXPECT_EQ(m4.frobenius_norm(), 0.0);
}

TEST(BuildMatrix, AffineInInput) {
  Dims dims{4, 3, 5, 2};
  const MLayerParams p = random_params(dims, 2);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x1(4), x2(4), sum(4);
    const std::vector<double> zero(4, 0.0);
    for (int i = 0; i < 4; ++i) {
      x1[i] = rng.normal();
      x2[i] = rng.normal();
      sum[i] = x1[i] + x2[i];
    }
    const Matrix lhs = build_matrix(p, sum) - build_matrix(p, x2);
    const Matrix rhs = build_matrix(p, x1) - build_matrix(p, zero);
    EXPECT_LT((lhs - rhs).frobenius_norm(), 1e-12);
  }
}

TEST(ForwardPass, BiasOnlyWhenReadoutIsZero) {
  Dims dims{2, 2, 3, 2};
  MLayerParams p = random_params(dims, 4);
  for (auto& s : p.s)
    for (auto& v : s.data()) v = 0.0;
  const std::vector<double> out = forward_out(p, std::vector<double>{1.0, -1.0});
  EXPECT_EQ(out[0], p.v[0]);
  EXPECT_EQ(out[1], p.v[1]);
}

TEST(ForwardPass, FeatureCrossSelectsProducts) {
  const MLayerParams p = feature_cross_params();
  const std::vector<double> x = {2.0, 3.0, 5.0};
  const std::vector<double> out = forward_out(p, x);
  EXPECT_NEAR(out[0], 6.0, 1e-12);   // phi0 * phi1
  EXPECT_NEAR(out[1], 75.0, 1e-12);  // phi1 * phi2^2
}

TEST(ForwardPass, MatchesStraightLineReference) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Dims dims{3, 2, 4, 2};
    const MLayerParams p = random_params(dims, 100 + trial);
    std::vector<double> x(dims.p);
    for (double& v : x) v = rng.normal();
    const std::vector<double> got = forward_out(p, x);
    const std::vector<double> want = forward_reference(p, x);
    for (int k = 0; k < dims.h; ++k)
      EXPECT_NEAR(got[k], want[k], 1e-10 * std::max(1.0, std::abs(want[k])));
  }
}

TEST(Backward, OutputBiasGradientIsUpstream) {
  Dims dims{3, 2, 4, 2};
  const MLayerParams p = random_params(dims, 6);
  const std::vector<double> x = {0.1, -0.2, 0.3};
  const std::vector<double> g_out = {1.5, -2.5};
  const Gradients g = backward(p, x, g_out);
  EXPECT_EQ(g.v[0], 1.5);
  EXPECT_EQ(g.v[1], -2.5);
}

TEST(Backward, ZeroGeneratorsMakeEmbeddingGradientVanish) {
  Dims dims{3, 2, 4, 2};
  MLayerParams p = random_params(dims, 7);
  for (auto& t : p.t)
    for (auto& v : t.data()) v = 0.0;
  const Gradients g = backward(p, std::vector<double>{1.0, 2.0, 3.0},
                               std::vector<double>{1.0, 1.0});
  EXPECT_EQ(g.u.frobenius_norm(), 0.0);
  for (double v : g.u0) EXPECT_EQ(v, 0.0);
}

void check_gradients(const Dims& dims, std::uint64_t seed, double activity_lambda) {
  MLayerParams p = random_params(dims, seed);
  Rng rng(seed + 1);
  std::vector<double> x(dims.p), g_out(dims.h);
  for (double& v : x) v = rng.normal();
  for (double& v : g_out) v = rng.normal();

  const Gradients grad = backward(p, x, g_out, activity_lambda);

  auto objective = [&] {
    const Forward f = forward(p, x);
    double s = 0.0;
    for (int m = 0; m < dims.h; ++m) s += g_out[m] * f.out[m];
    if (activity_lambda != 0.0) {
      const double fn = f.exp_m.frobenius_norm();
      s += activity_lambda * fn * fn;
    }
    return s;
  };

  const double h = 1e-5;
  double worst = 0.0;
  std::vector<std::vector<double>*> param_arrays, grad_arrays;
  p.for_each_array([&](std::vector<double>& a) { param_arrays.push_back(&a); });
  Gradients grad_copy = grad;
  grad_copy.for_each_array([&](std::vector<double>& a) { grad_arrays.push_back(&a); });
  for (std::size_t t = 0; t < param_arrays.size(); ++t) {
    for (std::size_t i = 0; i < param_arrays[t]->size(); ++i) {
      const double fd = testing::central_difference(*param_arrays[t], i, h, objective);
      const double an = (*grad_arrays[t])[i];
      const double rel = std::abs(an - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  EXPECT_LT(worst, 1e-5) << "dims p=" << dims.p << " seed=" << seed;
}

TEST(Backward, MatchesFiniteDifferences) {
  check_gradients(Dims{3, 2, 4, 2}, 11, 0.0);
  check_gradients(Dims{5, 4, 6, 3}, 12, 0.0);
}

TEST(Backward, ActivityRegularizerGradient) {
  check_gradients(Dims{3, 2, 4, 2}, 13, 1e-2);
  check_gradients(Dims{2, 3, 3, 1}, 14, 0.5);
}

TEST(InitStandard, DeterministicPerSeed) {
  Dims dims{4, 3, 5, 2};
  const MLayerParams a = init_standard(dims, 99);
  const MLayerParams b = init_standard(dims, 99);
  const MLayerParams c = init_standard(dims, 100);
  EXPECT_EQ(a.u.data(), b.u.data());
  EXPECT_EQ(a.t[1].data(), b.t[1].data());
  EXPECT_NE(a.u.data(), c.u.data());
}

TEST(InitStandard, SampleMoments) {
  // Over ~1.1e6 draws the sample mean must sit within 1e-3 of zero and the
  // sample sigma within 5e-4 of 0.05.
  Dims dims{997, 1000, 10, 5};
  const MLayerParams p = init_standard(dims, 7);
  double sum = 0.0, sum_sq = 0.0;
  long long count = 0;
  p.for_each_array([&](const std::vector<double>& a) {
    for (double v : a) {
      sum += v;
      sum_sq += v * v;
      ++count;
    }
  });
  const double mean = sum / count;
  const double sigma = std::sqrt(sum_sq / count - mean * mean);
  EXPECT_GT(count, 1000000);
  EXPECT_NEAR(mean, 0.0, 1e-3);
  EXPECT_NEAR(sigma, 0.05, 5e-4);
}

TEST(InitPeriodic, GeneratorMoments) {
  Dims dims{1, 3, 6, 1};
  double diag_sum = 0.0, off_sum = 0.0;
  long long diag_count = 0, off_count = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const MLayerParams p = init_periodic(dims, seed);
    auto scan = [&](const Matrix& m) {
      for (int i = 0; i < dims.n; ++i)
        for (int j = 0; j < dims.n; ++j) {
          if (i == j) {
            diag_sum += m(i, j);
            ++diag_count;
          } else {
            off_sum += m(i, j);
            ++off_count;
          }
        }
    };
    for (const auto& t : p.t) scan(t);
    scan(p.b);
  }
  EXPECT_NEAR(diag_sum / diag_count, -10.0, 0.01);
  EXPECT_NEAR(off_sum / off_count, 0.0, 0.01);
}

TEST(InitPeriodic, InitialMatrixHasNegativeEigenvalueBounds) {
  // Gershgorin upper bound on real parts: diag + off-diagonal row sum < 0
  // for the matrix at x = 0, across 100 seeds.
  Dims dims{1, 1, 6, 1};
  const std::vector<double> x = {0.0};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const MLayerParams p = init_periodic(dims, seed);
    const Matrix m = build_matrix(p, x);
    for (int i = 0; i < dims.n; ++i) {
      double off = 0.0;
      for (int j = 0; j < dims.n; ++j)
        if (j != i) off += std::abs(m(i, j));
      EXPECT_LT(m(i, i) + off, 0.0) << "seed " << seed << " row " << i;
    }
  }
}

Matrix random_orthogonal(Rng& rng, int n) {
  // Gram-Schmidt on a random Gaussian matrix.
  Matrix a = random_matrix(rng, n, n);
  for (int c = 0; c < n; ++c) {
    for (int prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (int r = 0; r < n; ++r) dot += a(r, c) * a(r, prev);
      for (int r = 0; r < n; ++r) a(r, c) -= dot * a(r, prev);
    }
    double norm = 0.0;
    for (int r = 0; r < n; ++r) norm += a(r, c) * a(r, c);
    norm = std::sqrt(norm);
    for (int r = 0; r < n; ++r) a(r, c) /= norm;
  }
  return a;
}

TEST(Reparameterize, IdentityIsANoOp) {
  Dims dims{3, 2, 4, 2};
  const MLayerParams p = random_params(dims, 21);
  const MLayerParams q = reparameterize(p, Matrix::identity(2), Matrix::identity(4));
  EXPECT_EQ(p.u.data(), q.u.data());
  EXPECT_EQ(p.b.data(), q.b.data());
  EXPECT_EQ(p.s[0].data(), q.s[0].data());
}

TEST(Reparameterize, OrthogonalQPreservesForward) {
  Dims dims{3, 2, 4, 2};
  const MLayerParams p = random_params(dims, 22);
  Rng rng(23);
  const Matrix q = random_orthogonal(rng, 4);
  const MLayerParams rp = reparameterize(p, Matrix::identity(2), q);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(3);
    for (double& v : x) v = rng.normal();
    const std::vector<double> a = forward_out(p, x);
    const std::vector<double> b = forward_out(rp, x);
    for (int m = 0; m < 2; ++m)
      EXPECT_NEAR(a[m], b[m], 1e-9 * std::max(1.0, std::abs(a[m])));
  }
}

TEST(Reparameterize, GeneralInvertiblePPreservesForward) {
  Dims dims{3, 4, 3, 2};
  const MLayerParams params = random_params(dims, 24);
  Rng rng(25);
  Matrix p(1, 1);
  // Resample until reasonably conditioned (condition < 100).
  while (true) {
    p = random_matrix(rng, 4, 4);
    LuDecomposition lu(p);
    if (lu.singular()) continue;
    if (spectral_norm(p) * spectral_norm(lu.inverse()) < 100.0) break;
  }
  const MLayerParams rp = reparameterize(params, p, Matrix::identity(3));
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(3);
    for (double& v : x) v = rng.normal();
    const std::vector<double> a = forward_out(params, x);
    const std::vector<double> b = forward_out(rp, x);
    for (int m = 0; m < 2; ++m)
      EXPECT_NEAR(a[m], b[m], 1e-8 * std::max(1.0, std::abs(a[m])));
  }
}

TEST(Reparameterize, SingularTransformsRejected) {
  Dims dims{2, 2, 2, 1};
  const MLayerParams p = random_params(dims, 26);
  EXPECT_THROW(reparameterize(p, Matrix(2, 2), Matrix::identity(2)), DomainError);
  EXPECT_THROW(reparameterize(p, Matrix::identity(2), Matrix(2, 2)), DomainError);
}

}  // namespace
}  // namespace mlayer
