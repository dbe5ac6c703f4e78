#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace bjda;
using testing_support::gaussian_matrix;
using testing_support::random_matrix;

TEST(Centering, SymmetricIdempotentZeroRowSums) {
  const Matrix h = CenteringMatrix(5).dense();
  EXPECT_LT(max_abs_diff(h, h.transpose()), 1e-15);
  EXPECT_LT(max_abs_diff(matmul(h, h), h), 1e-12);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (double v : h.row(i)) s += v;
    EXPECT_NEAR(s, 0.0, 1e-12);
  }
}

TEST(Bandwidth, HandValues) {
  EXPECT_DOUBLE_EQ(gaussian_bandwidth({{0, 0}, {2, 0}}, {{0, 0}, {2, 0}}), 2.0);
  EXPECT_DOUBLE_EQ(gaussian_bandwidth({{1, 1}, {1, 1}}, {{1, 1}}), 1.0);
  EXPECT_DOUBLE_EQ(gaussian_bandwidth({{0}}, {{3}}), 9.0);
  EXPECT_THROW(gaussian_bandwidth(Matrix(2, 2), Matrix(2, 3)), DimensionError);
}

TEST(KernelMatrix, Examples) {
  Tape t;
  Rng rng(1);
  const Value x = t.constant(random_matrix(rng, 4, 3));
  const Matrix k = kernel_matrix(x, x, KernelSpec{}).value();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(k(i, i), 1.0);
  for (double v : k.data()) EXPECT_TRUE(v > 0.0 && v <= 1.0);

  KernelSpec lin{KernelKind::linear, std::nullopt};
  EXPECT_EQ(kernel_matrix(t.constant({{1, 0}}), t.constant({{0, 1}}), lin).item(), 0.0);

  KernelSpec fixed{KernelKind::gaussian, 2.0};
  EXPECT_NEAR(kernel_matrix(t.constant({{0}}), t.constant({{2}}), fixed).item(), std::exp(-2.0), 1e-15);
  EXPECT_THROW(kernel_matrix(x, x, KernelSpec{KernelKind::gaussian, -1.0}), ConfigError);
}

TEST(KbwSq, SelfDistanceSymmetryNonnegativity) {
  Rng rng(21);
  for (int k = 0; k < 30; ++k) {
    const Matrix a = random_matrix(rng, 6 + k % 5, 3), b = random_matrix(rng, 5 + k % 3, 3, -2.0, 1.0);
    for (const KernelSpec& s : {KernelSpec{}, KernelSpec{KernelKind::linear, std::nullopt}}) {
      EXPECT_LE(kbw_sq(a, a, s), 1e-8);
      EXPECT_NEAR(kbw_sq(a, b, s), kbw_sq(b, a, s), 1e-10);
      EXPECT_GE(kbw_sq(a, b, s), 0.0);
    }
    EXPECT_NEAR(kbw_sq(a, b, KernelSpec{}, true), kbw_sq(b, a, KernelSpec{}, true), 1e-10);
  }
}

TEST(KbwSq, LinearKernelMatchesClosedFormBures) {
  Rng rng(33);
  for (int k = 0; k < 20; ++k) {
    const std::size_t d = 1 + k % 5, n = 10 + 2 * k;
    const Matrix a = center_rows(gaussian_matrix(rng, n, d));
    Matrix b = gaussian_matrix(rng, n, d);
    for (double& v : b.data()) v *= 1.5;
    b = center_rows(b);
    const double ref = std::pow(closed_form_bures(empirical_covariance(a), empirical_covariance(b)), 2);
    const double got = kbw_sq(a, b, KernelSpec{KernelKind::linear, std::nullopt});
    EXPECT_LE(std::abs(got - ref), 1e-6 * std::max(ref, 1e-12)) << "instance " << k;
  }
}

TEST(KbwSq, NeedsTwoRows) {
  EXPECT_THROW(kbw_sq(Matrix(1, 2), Matrix(3, 2), KernelSpec{}), InputError);
  EXPECT_THROW(kbw_sq(Matrix(3, 2), Matrix(3, 3), KernelSpec{}), DimensionError);
}

TEST(ClosedFormBures, HandValues) {
  EXPECT_NEAR(closed_form_bures(Matrix::identity(2), Matrix::identity(2)), 0.0, 1e-12);
  EXPECT_NEAR(closed_form_bures({{4, 0}, {0, 1}}, {{1, 0}, {0, 4}}), std::sqrt(2.0), 1e-12);
  const Matrix s{{2, 0.5}, {0.5, 1}};
  EXPECT_NEAR(closed_form_bures(s, Matrix(2, 2)), std::sqrt(3.0), 1e-12);
  EXPECT_THROW(closed_form_bures(Matrix(2, 2), Matrix(3, 3)), DimensionError);
}

TEST(ClosedFormBures, IdentityOfIndiscerniblesAndSymmetry) {
  Rng rng(9);
  for (int k = 0; k < 100; ++k) {
    const Matrix x = random_matrix(rng, 8, 3), y = random_matrix(rng, 6, 3);
    const Matrix s1 = empirical_covariance(x), s2 = empirical_covariance(y);
    EXPECT_LE(closed_form_bures(s1, s1), 1e-10);
    EXPECT_NEAR(closed_form_bures(s1, s2), closed_form_bures(s2, s1), 1e-10);
  }
}

TEST(ExactWasserstein, Examples) {
  EXPECT_DOUBLE_EQ(exact_wasserstein_sq({{0}, {1}}, {{1}, {2}}), 1.0);
  Rng rng(4);
  const Matrix a = random_matrix(rng, 5, 2);
  EXPECT_EQ(exact_wasserstein_sq(a, a), 0.0);
  EXPECT_THROW(exact_wasserstein_sq(Matrix(2, 1), Matrix(3, 1)), InputError);
}

TEST(ExactWasserstein, MatchesPermutationBruteForce) {
  Rng rng(77);
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 1 + k % 6;
    const Matrix a = random_matrix(rng, n, 2), b = random_matrix(rng, n, 2);
    EXPECT_EQ(exact_wasserstein_sq(a, b), testing_support::brute_force_ot(a, b)) << "instance " << k;
  }
}
