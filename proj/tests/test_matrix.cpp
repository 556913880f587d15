// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsp/matrix.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lsp/common.hpp"
#include "lsp/rng.hpp"

namespace lsp {
namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

// Reference matmul with the naive i-j-k loop, used as an independent oracle.
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (int k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

TEST(Matrix, ConstructorsAndAccess) {
  Matrix m(2, 3);
  EXPECT_EQ(m.rows(), 2);
  EXPECT_EQ(m.cols(), 3);
  EXPECT_EQ(m.size(), 6u);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(m(r, c), 0.0);
  m(1, 2) = 5.0;
  EXPECT_EQ(m(1, 2), 5.0);
  Matrix f(2, 2, 3.5);
  EXPECT_EQ(f(0, 0), 3.5);
  EXPECT_EQ(f(1, 1), 3.5);
  Matrix d(2, 2, {1.0, 2.0, 3.0, 4.0});
  EXPECT_EQ(d(0, 1), 2.0);
  EXPECT_EQ(d(1, 0), 3.0);
  EXPECT_THROW(Matrix(2, 2, {1.0, 2.0}), std::invalid_argument);
}

TEST(Matrix, IdentityAndTranspose) {
  Matrix id = Matrix::identity(3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(id(r, c), r == c ? 1.0 : 0.0);
  Matrix m(2, 3, {1, 2, 3, 4, 5, 6});
  Matrix t = m.transposed();
  EXPECT_EQ(t.rows(), 3);
  EXPECT_EQ(t.cols(), 2);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(t(c, r), m(r, c));
}

TEST(Matrix, Arithmetic) {
  Matrix a(2, 2, {1, 2, 3, 4});
  Matrix b(2, 2, {5, 6, 7, 8});
  Matrix s = a + b;
  EXPECT_EQ(s(0, 0), 6.0);
  EXPECT_EQ(s(1, 1), 12.0);
  Matrix d = b - a;
  EXPECT_EQ(d(0, 1), 4.0);
  Matrix sc = a * 2.0;
  EXPECT_EQ(sc(1, 0), 6.0);
  Matrix bad(3, 2);
  EXPECT_THROW(a + bad, std::invalid_argument);
}

TEST(Matrix, AllFinite) {
  Matrix m(2, 2, {1, 2, 3, 4});
  EXPECT_TRUE(m.all_finite());
  m(0, 1) = std::nan("");
  EXPECT_FALSE(m.all_finite());
  m(0, 1) = INFINITY;
  EXPECT_FALSE(m.all_finite());
}

TEST(Matmul, MatchesNaiveOracle) {
  Rng rng(101);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix a = random_matrix(7, 11, rng);
    Matrix b = random_matrix(11, 5, rng);
    Matrix got = matmul(a, b);
    Matrix want = matmul_oracle(a, b);
    EXPECT_LE(frobenius_distance(got, want), 1e-12);
  }
}

TEST(Matmul, KnownSmallProduct) {
  Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
  Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
  Matrix c = matmul(a, b);
  EXPECT_EQ(c(0, 0), 58.0);
  EXPECT_EQ(c(0, 1), 64.0);
  EXPECT_EQ(c(1, 0), 139.0);
  EXPECT_EQ(c(1, 1), 154.0);
}

TEST(Matmul, ShapeGuardAndIdentity) {
  Matrix a(2, 3);
  Matrix b(2, 3);
  EXPECT_THROW(matmul(a, b), std::invalid_argument);
  Rng rng(7);
  Matrix m = random_matrix(4, 4, rng);
  EXPECT_LE(frobenius_distance(matmul(m, Matrix::identity(4)), m), 0.0);
  EXPECT_LE(frobenius_distance(matmul(Matrix::identity(4), m), m), 0.0);
}

TEST(Matmul, Associativity) {
  Rng rng(55);
  Matrix a = random_matrix(6, 8, rng);
  Matrix b = random_matrix(8, 7, rng);
  Matrix c = random_matrix(7, 9, rng);
  Matrix left = matmul(matmul(a, b), c);
  Matrix right = matmul(a, matmul(b, c));
  EXPECT_LE(frobenius_distance(left, right), 1e-9 * frobenius_norm(left));
}

TEST(FrobeniusNorm, KnownValuesAndInvariance) {
  Matrix m(2, 2, {3, 0, 0, 4});
  EXPECT_DOUBLE_EQ(frobenius_norm(m), 5.0);
  Rng rng(3);
  Matrix a = random_matrix(10, 6, rng);
  EXPECT_NEAR(frobenius_norm(a), frobenius_norm(a.transposed()), 1e-12);
  // Permuting entries leaves the norm unchanged.
  Matrix p(6, 10);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 6; ++c) p(c, 9 - r) = a(r, c);
  EXPECT_NEAR(frobenius_norm(a), frobenius_norm(p), 1e-12);
}

TEST(FrobeniusDistance, TriangleInequality) {
  Rng rng(17);
  Matrix a = random_matrix(5, 5, rng);
  Matrix b = random_matrix(5, 5, rng);
  Matrix c = random_matrix(5, 5, rng);
  EXPECT_LE(frobenius_distance(a, c),
            frobenius_distance(a, b) + frobenius_distance(b, c) + 1e-12);
  EXPECT_EQ(frobenius_distance(a, a), 0.0);
}

TEST(SpectralNorm, DiagonalAndZero) {
  Matrix d(3, 3);
  d(0, 0) = 2.0;
  d(1, 1) = -7.0;
  d(2, 2) = 0.5;
  SpectralResult r = spectral_norm(d);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.value, 7.0, 1e-9);
  Matrix z(4, 3);
  SpectralResult rz = spectral_norm(z);
  EXPECT_TRUE(rz.converged);
  EXPECT_EQ(rz.value, 0.0);
}

TEST(SpectralNorm, MatchesSvdLargestSingularValue) {
  Rng rng(23);
  for (int trial = 0; trial < 4; ++trial) {
    Matrix a = random_matrix(12, 9, rng);
    SpectralResult r = spectral_norm(a);
    SvdResult svd = svd_thin(a);
    ASSERT_TRUE(r.converged);
    EXPECT_NEAR(r.value, svd.s[0], 1e-8 * svd.s[0]);
  }
}

TEST(SpectralNorm, BoundedByFrobenius) {
  Rng rng(29);
  Matrix a = random_matrix(8, 8, rng);
  SpectralResult r = spectral_norm(a);
  EXPECT_LE(r.value, frobenius_norm(a) + 1e-12);
  EXPECT_GE(r.value, frobenius_norm(a) / std::sqrt(8.0) - 1e-12);
}

void check_svd(const Matrix& a, double tol) {
  SvdResult svd = svd_thin(a);
  const int k = static_cast<int>(svd.s.size());
  ASSERT_EQ(k, std::min(a.rows(), a.cols()));
  ASSERT_EQ(svd.u.rows(), a.rows());
  ASSERT_EQ(svd.u.cols(), k);
  ASSERT_EQ(svd.v.rows(), a.cols());
  ASSERT_EQ(svd.v.cols(), k);
  for (int i = 1; i < k; ++i) EXPECT_LE(svd.s[i], svd.s[i - 1]);
  for (double s : svd.s) EXPECT_GE(s, 0.0);
  // Reconstruction: u diag(s) v^T == a.
  Matrix us = svd.u;
  for (int r = 0; r < us.rows(); ++r)
    for (int c = 0; c < k; ++c) us(r, c) *= svd.s[c];
  Matrix rec = matmul(us, svd.v.transposed());
  EXPECT_LE(frobenius_distance(rec, a), tol * std::max(1.0, frobenius_norm(a)));
  // Orthonormal columns on both factors.
  Matrix utu = matmul(svd.u.transposed(), svd.u);
  Matrix vtv = matmul(svd.v.transposed(), svd.v);
  EXPECT_LE(frobenius_distance(utu, Matrix::identity(k)), tol);
  EXPECT_LE(frobenius_distance(vtv, Matrix::identity(k)), tol);
}

TEST(SvdThin, ReconstructsRandomMatrices) {
  Rng rng(31);
  check_svd(random_matrix(10, 10, rng), 1e-8);
  check_svd(random_matrix(16, 6, rng), 1e-8);
  check_svd(random_matrix(6, 16, rng), 1e-8);
  check_svd(random_matrix(1, 5, rng), 1e-8);
  check_svd(random_matrix(5, 1, rng), 1e-8);
}

TEST(SvdThin, RankDeficientAndKnownSpectrum) {
  // Outer product has rank one; remaining singular values vanish.
  Matrix u(4, 1, {1, 0, 0, 0});
  Matrix v(1, 3, {0, 2, 0});
  Matrix a = matmul(u, v);
  check_svd(a, 1e-8);
  SvdResult svd = svd_thin(a);
  EXPECT_NEAR(svd.s[0], 2.0, 1e-10);
  EXPECT_NEAR(svd.s[1], 0.0, 1e-10);
  EXPECT_NEAR(svd.s[2], 0.0, 1e-10);

  Matrix d(3, 3);
  d(0, 0) = 1.0;
  d(1, 1) = 3.0;
  d(2, 2) = 2.0;
  SvdResult sd = svd_thin(d);
  EXPECT_NEAR(sd.s[0], 3.0, 1e-10);
  EXPECT_NEAR(sd.s[1], 2.0, 1e-10);
  EXPECT_NEAR(sd.s[2], 1.0, 1e-10);
}

TEST(SvdThin, SingularValuesMatchNormIdentities) {
  Rng rng(37);
  Matrix a = random_matrix(9, 7, rng);
  SvdResult svd = svd_thin(a);
  double ssq = 0.0;
  for (double s : svd.s) ssq += s * s;
  EXPECT_NEAR(std::sqrt(ssq), frobenius_norm(a), 1e-9);
}

TEST(SvdThin, SizeGuard) {
  EXPECT_THROW(svd_thin(Matrix(513, 513)), std::invalid_argument);
  EXPECT_THROW(svd_thin(Matrix(0, 3)), std::invalid_argument);
  EXPECT_NO_THROW(svd_thin(Matrix(1000, 4)));
}

TEST(Csv, RoundTripIsExact) {
  Rng rng(41);
  Matrix a = random_matrix(7, 5, rng);
  a(0, 0) = 0.1;
  a(0, 1) = -1e-17;
  a(0, 2) = 12345678901234.5;
  a(0, 3) = 1.0 / 3.0;
  std::ostringstream out;
  save_csv(a, out);
  std::istringstream in(out.str());
  Matrix b = load_csv(in);
  ASSERT_TRUE(a.same_shape(b));
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) EXPECT_EQ(a(r, c), b(r, c));
}

TEST(Csv, WriteIsByteStable) {
  Matrix a(1, 3, {0.1, -2.5, 100.0});
  std::ostringstream o1, o2;
  save_csv(a, o1);
  save_csv(a, o2);
  EXPECT_EQ(o1.str(), o2.str());
  EXPECT_EQ(o1.str(), "0.1,-2.5,100\n");
}

TEST(Csv, RejectsMalformedInput) {
  std::istringstream ragged("1,2\n3\n");
  EXPECT_THROW(load_csv(ragged), IoError);
  std::istringstream junk("1,x\n");
  EXPECT_THROW(load_csv(junk), IoError);
  std::istringstream empty("");
  EXPECT_THROW(load_csv(empty), IoError);
}

TEST(Rng, DeterministicAndWellDistributed) {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(99), d(100);
  EXPECT_NE(c.next_u64(), d.next_u64());
  Rng r(7);
  double sum = 0.0, sumsq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    sum += x;
    sumsq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sumsq / n, 1.0, 0.05);
}

TEST(Rng, UniformIntAndSampling) {
  Rng r(13);
  for (int i = 0; i < 1000; ++i) {
    std::uint64_t v = r.uniform_int(10);
    EXPECT_LT(v, 10u);
  }
  std::vector<int> s = r.sample_without_replacement(20, 5);
  ASSERT_EQ(s.size(), 5u);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i - 1], s[i]);
  for (int v : s) {
    EXPECT_GE(v, 0);
    EXPECT_LT(v, 20);
  }
  std::vector<int> all = r.sample_without_replacement(6, 6);
  ASSERT_EQ(all.size(), 6u);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(all[i], i);
}

}  // namespace
}  // namespace lsp
