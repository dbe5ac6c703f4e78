#include <gtest/gtest.h>

#include "support.hpp"

using namespace bjda;
using testing_support::random_matrix;

TEST(Autodiff, MatmulIdentityExamples) {
  Tape t;
  const Value a = t.constant({{1, 2}, {3, 4}});
  EXPECT_EQ(ad::matmul(a, t.constant(Matrix::identity(2))).value(), (Matrix{{1, 2}, {3, 4}}));
  EXPECT_EQ(ad::matmul(t.constant(Matrix::identity(2)), t.constant({{5}, {7}})).value(), (Matrix{{5}, {7}}));
  EXPECT_THROW(ad::matmul(a, t.constant(Matrix(3, 1))), DimensionError);
}

TEST(Autodiff, ElementwiseExamples) {
  Tape t;
  EXPECT_EQ(ad::softmax_rows(t.constant({{0, 0}})).value(), (Matrix{{0.5, 0.5}}));
  EXPECT_DOUBLE_EQ(ad::leaky_relu(t.constant({{-1.0}}), 0.01).item(), -0.01);
  EXPECT_DOUBLE_EQ(ad::trace(t.constant(Matrix::identity(3))).item(), 3.0);
  EXPECT_THROW(ad::log(t.constant({{1.0, 0.0}})), DomainError);
  EXPECT_THROW(ad::add(t.constant(Matrix(2, 2)), t.constant(Matrix(2, 3))), DimensionError);
}

TEST(Autodiff, PairwiseSqdistExamples) {
  Tape t;
  const Value a = t.constant({{0, 0}, {2, 0}});
  EXPECT_EQ(ad::pairwise_sqdist(a, a).value(), (Matrix{{0, 4}, {4, 0}}));
  EXPECT_EQ(ad::pairwise_sqdist(t.constant({{1.5, -2}}), t.constant({{1.5, -2}})).value(), Matrix(1, 1));
  EXPECT_THROW(ad::pairwise_sqdist(a, t.constant(Matrix(1, 3))), DimensionError);
}

TEST(Autodiff, NuclearNormExamples) {
  Tape t;
  EXPECT_NEAR(ad::nuclear_norm(t.constant({{3, 0}, {0, -4}})).item(), 7.0, 1e-14);
  EXPECT_EQ(ad::nuclear_norm(t.constant(Matrix(3, 2))).item(), 0.0);
}

TEST(Autodiff, NuclearNormTransposeInvariant) {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    const Matrix a = random_matrix(rng, 3 + k % 4, 2 + k % 5);
    Tape t;
    EXPECT_NEAR(ad::nuclear_norm(t.constant(a)).item(), ad::nuclear_norm(t.constant(a.transpose())).item(), 1e-10);
  }
}

TEST(Autodiff, RootGradientIsOnes) {
  Tape t;
  const Value x = t.variable(Matrix(2, 3, 0.5));
  const Value y = ad::scale(x, 2.0);
  t.backward(y);
  EXPECT_EQ(y.grad(), Matrix(2, 3, 1.0));
  EXPECT_EQ(x.grad(), Matrix(2, 3, 2.0));
}

TEST(Autodiff, BackwardOfSumEqualsSumOfBackwards) {
  Rng rng(4);
  const Matrix a = random_matrix(rng, 4, 3), b = random_matrix(rng, 3, 2);
  auto f1 = [](Value x, Value y) { return ad::sum(ad::exp(ad::matmul(x, y))); };
  auto f2 = [](Value x, Value y) { return ad::nuclear_norm(ad::matmul(x, y)); };

  Tape t1, t2;
  const Value p1 = t1.variable(a), q1 = t1.variable(b), p2 = t2.variable(a), q2 = t2.variable(b);
  t1.backward(f1(p1, q1));
  t2.backward(f2(p2, q2));

  Tape joint;
  const Value ya = joint.variable(a), yb = joint.variable(b);
  joint.backward(ad::add(f1(ya, yb), f2(ya, yb)));

  EXPECT_LT(max_abs_diff(p1.grad() + p2.grad(), ya.grad()), 1e-12);
  EXPECT_LT(max_abs_diff(q1.grad() + q2.grad(), yb.grad()), 1e-12);
}

TEST(Autodiff, ForwardIsDeterministic) {
  Rng rng(6);
  const Matrix a = random_matrix(rng, 5, 4);
  auto run = [&] {
    Tape t;
    const Value x = t.constant(a);
    return ad::nuclear_norm(ad::softmax_rows(ad::pairwise_sqdist(x, x))).item();
  };
  EXPECT_EQ(run(), run());
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tape t;
  const Value c = t.constant({{1, 2}});
  const Value v = t.variable({{3, 4}});
  t.backward(ad::sum(ad::hadamard(c, v)));
  EXPECT_EQ(c.grad(), Matrix(1, 2));
  EXPECT_EQ(v.grad(), (Matrix{{1, 2}}));
}

TEST(Autodiff, ForeignValueRejected) {
  Tape a, b;
  const Value x = a.variable(Matrix(1, 1, 1.0));
  EXPECT_THROW(b.backward(x), std::logic_error);
}

TEST(Gradcheck, StandardSuitePassesAndCoversNuclearNorm) {
  const auto rows = gradcheck::run(gradcheck::standard_cases(1));
  bool saw_nuclear = false;
  for (const auto& r : rows) {
    EXPECT_TRUE(r.passed) << r.name << " err " << r.max_rel_error << " " << r.error;
    saw_nuclear = saw_nuclear || r.name == "nuclear_norm";
  }
  EXPECT_TRUE(saw_nuclear);
}

TEST(Gradcheck, MatmulAndPairwiseMeetTighterBounds) {
  for (const auto& r : gradcheck::run(gradcheck::standard_cases(3))) {
    if (r.name == "matmul") {
      EXPECT_LE(r.max_rel_error, 1e-6);
    }
    if (r.name == "pairwise_sqdist") {
      EXPECT_LE(r.max_rel_error, 1e-5);
    }
  }
}

TEST(Gradcheck, FlagsCorruptedBackward) {
  const auto row = gradcheck::check(gradcheck::corrupted_case());
  EXPECT_FALSE(row.passed);
  EXPECT_GT(row.max_rel_error, 0.1);
}
