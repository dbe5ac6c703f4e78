#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"

using namespace bjda;
using testing_support::random_matrix;

namespace {

Prototypes two_protos(std::vector<double> p0, std::vector<double> p1) {
  Prototypes p(2, p0.size());
  p.set(0, p0);
  p.set(1, p1);
  return p;
}

}  // namespace

TEST(Cls, HandValues) {
  Tape t;
  EXPECT_EQ(l_cls(t.constant({{1, 0}, {0, 1}}), {{1, 0}, {0, 1}}).item(), 0.0);
  EXPECT_NEAR(l_cls(t.constant({{0.5, 0.5}}), {{1, 0}}).item(), std::numbers::ln2, 1e-15);
  for (std::size_t C : {2, 3, 7}) {
    Matrix u(4, C, 1.0 / static_cast<double>(C));
    EXPECT_NEAR(l_cls(t.constant(u), one_hot(std::vector<int>{0, 1, 1, 0}, C)).item(),
                std::log(static_cast<double>(C)), 1e-14);
  }
  EXPECT_THROW(l_cls(t.constant({{0.5, 0.5}}), Matrix(1, 3)), DimensionError);
}

TEST(Dmc, WorkedExampleEqualsLn2MinusHalf) {
  Tape t;
  const std::vector<int> y{0};
  const double v = l_dmc(t.constant({{0, 0}}), y, {{0.5, 0.5}}, two_protos({0, 0}, {0.5, 0})).item();
  EXPECT_NEAR(v, std::numbers::ln2 - 0.5, 1e-9);
  EXPECT_NEAR(v, 0.1931, 1e-4);
}

TEST(Dmc, ConfidentRowAtOwnPrototypeContributesZero) {
  Tape t;
  const std::vector<int> y{0};
  EXPECT_EQ(l_dmc(t.constant({{0, 0}}), y, {{1, 0}}, two_protos({0, 0}, {1, 0})).item(), 0.0);
}

TEST(Dmc, NearestNegativeIsTheMinimum) {
  Prototypes p(3, 2);
  p.set(0, std::vector<double>{0, 0});
  p.set(1, std::vector<double>{2, 0});
  p.set(2, std::vector<double>{0, 0.5});
  Tape t;
  const std::vector<int> y{0};
  // alpha = ln 2, d_pos = 0, nearest negative 0.5.
  EXPECT_NEAR(l_dmc(t.constant({{0, 0}}), y, {{0.5, 0.5, 0.0}}, p).item(), std::numbers::ln2 - 0.5, 1e-9);
}

TEST(Dmc, SumsOverRowsAndSkipsMissingPrototypes) {
  Prototypes p(3, 2);
  p.set(0, std::vector<double>{0, 0});
  p.set(1, std::vector<double>{0.5, 0});
  Tape t;
  const std::vector<int> y{0, 0, 2};
  DmcStats st;
  const double v = l_dmc(t.constant({{0, 0}, {0, 0}, {1, 1}}), y,
                         {{0.5, 0.5, 0}, {0.5, 0.5, 0}, {0, 0, 1}}, p, &st).item();
  EXPECT_NEAR(v, 2.0 * (std::numbers::ln2 - 0.5), 1e-9);
  EXPECT_EQ(st.rows_used, 2u);
  EXPECT_EQ(st.rows_skipped, 1u);
}

TEST(Dmc, GradientReachesFeaturesOnly) {
  Tape t;
  const Value g = t.variable({{0.1, 0.2}});
  const std::vector<int> y{0};
  t.backward(l_dmc(g, y, {{0.5, 0.5}}, two_protos({0, 0}, {0.5, 0})));
  EXPECT_GT(g.grad().max_abs(), 0.0);
}

TEST(Prototypes, BatchAndEmaUpdates) {
  const std::vector<int> y{0, 0, 1};
  const Matrix f{{1, 0}, {3, 0}, {0, 4}};
  Prototypes b(3, 2);
  b.update(f, y);
  EXPECT_EQ(b.prototype(0)[0], 2.0);
  EXPECT_FALSE(b.present(2));
  b.update(Matrix{{1, 1}}, std::vector<int>{2});
  EXPECT_FALSE(b.present(0));

  Prototypes e(3, 2, PrototypeMode::ema, 0.5);
  e.update(f, y);
  e.update(Matrix{{4, 0}}, std::vector<int>{0});
  EXPECT_DOUBLE_EQ(e.prototype(0)[0], 3.0);
  EXPECT_TRUE(e.present(1));
  EXPECT_THROW(Prototypes(2, 2, PrototypeMode::ema, 1.0), ConfigError);
}

TEST(Triplet, HandValues) {
  // Anchor (0,0), positive (1,0), negative (2,0): d_pos 1, d_neg 2.
  const std::vector<int> y{0, 0, 1};
  const Matrix g{{0, 0}, {1, 0}, {2, 0}};
  Tape t;
  const double small = l_trip(t.constant(g), y, 0.5).item();
  const double large = l_trip(t.constant(g), y, 1.5).item();
  // Anchor 1 with positive 0 and negative 2 has d_pos 1, d_neg 1.
  EXPECT_NEAR(small, 0.5, 1e-15);
  EXPECT_NEAR(large, 0.5 + 1.5, 1e-15);
  EXPECT_EQ(l_trip(t.constant(Matrix(4, 2)), std::vector<int>{0, 0, 1, 1}, 0.0).item(), 0.0);
  TripletStats st;
  EXPECT_EQ(l_trip(t.constant(g), std::vector<int>{1, 1, 1}, 1.0, &st).item(), 0.0);
  EXPECT_EQ(st.single_class_batches, 1u);
}

TEST(Total, HandValuesAndReduction) {
  Tape t;
  LossBreakdown b;
  const Value v = total_objective(t.constant({{1}}), t.constant({{2}}), t.constant({{3}}), 0.5, 0.3, &b);
  EXPECT_NEAR(v.item(), 2.9, 1e-15);
  EXPECT_EQ(b.l_da, 2.0);
  const Value c = t.constant({{1.25}});
  EXPECT_EQ(total_objective(c, t.constant({{2}}), t.constant({{3}}), 0.0, 0.0).id(), c.id());
  EXPECT_THROW(total_objective(c, std::nullopt, std::nullopt, -0.1, 0.0), ConfigError);
}

TEST(Da, SelfAlignmentVanishes) {
  Rng rng(12);
  const Matrix g = random_matrix(rng, 6, 4);
  const Matrix y = one_hot(std::vector<int>{0, 1, 2, 0, 1, 2}, 3);
  Tape t;
  EXPECT_LE(l_da(t.constant(g), y, t.constant(g), t.constant(y), KernelSpec{}).item(), 1e-8);
}

TEST(Da, IdenticalLabelsLeaveFeatureTermAlone) {
  Rng rng(13);
  const Matrix gs = random_matrix(rng, 6, 4), gt = random_matrix(rng, 6, 4, -2, 2);
  const Matrix y = one_hot(std::vector<int>{0, 1, 2, 0, 1, 2}, 3);
  Tape t;
  const AlignmentTerms a = l_da_terms(t.constant(gs), y, t.constant(gt), t.constant(y), KernelSpec{});
  ASSERT_TRUE(a.label);
  EXPECT_LE(a.label->item(), 1e-8);
  EXPECT_NEAR(a.total.item(), a.feature.item(), 1e-8);
  EXPECT_EQ(a.total.item(), a.feature.item() + a.label->item());
}

TEST(Da, PermutationInvariant) {
  Rng rng(14);
  const Matrix gs = random_matrix(rng, 5, 3), gt = random_matrix(rng, 7, 3);
  const Matrix ys = one_hot(std::vector<int>{0, 1, 0, 1, 1}, 2);
  Matrix yt(7, 2);
  for (std::size_t i = 0; i < 7; ++i) {
    yt(i, 0) = rng.uniform();
    yt(i, 1) = 1.0 - yt(i, 0);
  }
  const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  Matrix gtp(7, 3), ytp(7, 2);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t k = 0; k < 3; ++k) gtp(i, k) = gt(perm[i], k);
    for (std::size_t k = 0; k < 2; ++k) ytp(i, k) = yt(perm[i], k);
  }
  Tape t;
  EXPECT_NEAR(l_da(t.constant(gs), ys, t.constant(gt), t.constant(yt), KernelSpec{}).item(),
              l_da(t.constant(gs), ys, t.constant(gtp), t.constant(ytp), KernelSpec{}).item(), 1e-10);
}

TEST(Da, RejectsNonProbabilityRows) {
  Tape t;
  const Matrix g(3, 2);
  EXPECT_THROW(l_da(t.constant(g), one_hot(std::vector<int>{0, 1, 0}, 2), t.constant(g),
                    t.constant({{0.5, 0.6}, {1, 0}, {0, 1}}), KernelSpec{}),
               InputError);
}

TEST(Entropy, Bounds) {
  EXPECT_NEAR(entropy(std::vector<double>{1.0, 0.0, 0.0}), 0.0, 1e-10);
  EXPECT_NEAR(entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}), std::log(4.0), 1e-15);
}

TEST(Wd, ExactAssignmentCost) {
  Tape t;
  EXPECT_DOUBLE_EQ(ot_assignment_cost(t.constant({{0}, {1}}), t.constant({{1}, {2}})).item(), 1.0);
  EXPECT_THROW(ot_assignment_cost(t.constant(Matrix(2, 1)), t.constant(Matrix(3, 1))), InputError);
}
