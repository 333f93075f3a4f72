#include "mlayer/matrix.hpp"

#include <gtest/gtest.h>

#include "mlayer/rng.hpp"
#include "support/test_util.hpp"

namespace mlayer {
namespace {

TEST(Matrix, ConstructionValidatesShapeAndData) {
  EXPECT_THROW(Matrix(0, 3), DimensionError);
  EXPECT_THROW(Matrix(2, 2, {1.0, 2.0, 3.0}), DimensionError);
  EXPECT_THROW(Matrix(1, 2, {1.0, std::numeric_limits<double>::infinity()}), DomainError);
  const Matrix m(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.rows(), 2);
  EXPECT_EQ(m.cols(), 3);
  EXPECT_EQ(m(1, 2), 6.0);
}

TEST(Matrix, MultiplyKnownProduct) {
  const Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
  const Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
  const Matrix c = a * b;
  EXPECT_EQ(c(0, 0), 58.0);
  EXPECT_EQ(c(0, 1), 64.0);
  EXPECT_EQ(c(1, 0), 139.0);
  EXPECT_EQ(c(1, 1), 154.0);
  EXPECT_THROW(b * Matrix(3, 3), DimensionError);
}

TEST(Matrix, TransposeAndNorms) {
  const Matrix a(2, 3, {1, -2, 3, -4, 5, -6});
  const Matrix t = a.transpose();
  EXPECT_EQ(t.rows(), 3);
  EXPECT_EQ(t(2, 1), -6.0);
  EXPECT_DOUBLE_EQ(a.frobenius_norm(), std::sqrt(91.0));
  EXPECT_DOUBLE_EQ(a.l1_norm(), 9.0);  // column (3, -6)
  EXPECT_DOUBLE_EQ(a.max_abs(), 6.0);
}

TEST(Lu, SolveRecoversKnownSolution) {
  const Matrix a(3, 3, {2, 1, 1, 1, 3, 2, 1, 0, 0});
  const Matrix x_true(3, 1, {1, 2, 3});
  const Matrix b = a * x_true;
  const Matrix x = lu_solve(a, b);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(x(i, 0), x_true(i, 0), 1e-12);
}

TEST(Lu, DeterminantAndInverse) {
  const Matrix a(2, 2, {4, 7, 2, 6});
  EXPECT_NEAR(determinant(a), 10.0, 1e-12);
  const Matrix inv = inverse(a);
  const Matrix prod = a * inv;
  EXPECT_LT(testing::max_rel_error(prod, Matrix::identity(2)), 1e-13);
}

TEST(Lu, SingularMatrixDetectedAndRejected) {
  const Matrix a(2, 2, {1, 2, 2, 4});
  LuDecomposition lu(a);
  EXPECT_TRUE(lu.singular());
  EXPECT_EQ(lu.determinant(), 0.0);
  EXPECT_THROW(lu.solve(Matrix::identity(2)), DomainError);
}

TEST(Lu, RandomRoundTrip) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_below(7));
    const Matrix a = testing::random_matrix(rng, n, n);
    const Matrix b = testing::random_matrix(rng, n, 2);
    const Matrix x = lu_solve(a, b);
    EXPECT_LT(testing::max_rel_error(a * x, b), 1e-10);
  }
}

TEST(MatVec, PlainAndTransposed) {
  const Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
  const std::vector<double> x = {1, 1, 1};
  const std::vector<double> y = matvec(a, x);
  EXPECT_EQ(y[0], 6.0);
  EXPECT_EQ(y[1], 15.0);
  const std::vector<double> z = matvec_transposed(a, {1, 1});
  EXPECT_EQ(z[0], 5.0);
  EXPECT_EQ(z[2], 9.0);
}

}  // namespace
}  // namespace mlayer
