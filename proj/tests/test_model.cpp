#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace bjda;

namespace {
const ModelDims kDims{5, 7, 4, 3};
}

TEST(Xavier, BoundsZeroBiasesDeterminism) {
  const ModelParams a = init_xavier(kDims, 42), b = init_xavier(kDims, 42), c = init_xavier(kDims, 43);
  for (std::size_t k = 0; k < ModelParams::kCount; ++k) {
    EXPECT_EQ(a.params[k], b.params[k]);
    const Matrix& m = a.params[k];
    if (k % 2 == 1) {
      EXPECT_EQ(m.max_abs(), 0.0);
    } else {
      EXPECT_LE(m.max_abs(), std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols())));
      EXPECT_NE(m, c.params[k]);
    }
  }
  EXPECT_THROW(init_xavier({0, 1, 1, 1}, 0), ConfigError);
}

TEST(Forward, ZeroWeightsGiveZeroFeaturesAndUniformPredictions) {
  const ModelParams p = zero_params(kDims);
  Tape t;
  const BoundParams b = bind(t, p);
  const Value g = forward_G(b, t.constant(Matrix(2, 5, 3.0)));
  EXPECT_EQ(g.value(), Matrix(2, 4));
  EXPECT_EQ(forward_F(b, g).value(), Matrix(2, 3, 1.0 / 3.0));
  EXPECT_EQ(forward_G(b, t.constant(Matrix(0, 5))).value().shape(), Matrix(0, 4).shape());
  EXPECT_THROW(forward_G(b, t.constant(Matrix(1, 4))), DimensionError);
  EXPECT_THROW(forward_F(b, t.constant(Matrix(1, 5))), DimensionError);
}

TEST(Forward, SoftmaxRowsSumToOneAndIgnoreShift) {
  Rng rng(1);
  const Matrix x = testing_support::random_matrix(rng, 6, 5, -3, 3);
  const Matrix p = predict_proba(init_xavier(kDims, 1), x);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
  Tape t;
  const Matrix z{{1, 2, 3}};
  const Matrix shifted{{101, 102, 103}};
  EXPECT_LT(max_abs_diff(ad::softmax_rows(t.constant(z)).value(), ad::softmax_rows(t.constant(shifted)).value()),
            1e-15);
}

TEST(PseudoLabels, ArgmaxTiesAndOneHot) {
  const auto pl = hard_pseudo_labels({{0.1, 0.7, 0.2}, {0.5, 0.5, 0.0}, {0, 0, 1}});
  EXPECT_EQ(pl[0].label, 1);
  EXPECT_DOUBLE_EQ(pl[0].confidence, 0.7);
  EXPECT_EQ(pl[1].label, 0);
  EXPECT_EQ(pl[2].label, 2);
  EXPECT_EQ(pl[2].confidence, 1.0);
}

TEST(Checkpoint, RoundTripIsExact) {
  const ModelParams p = init_xavier(kDims, 9);
  const std::string bytes = encode_checkpoint(p);
  EXPECT_EQ(bytes.substr(0, 4), "BJDA");
  const ModelParams q = decode_checkpoint(bytes);
  EXPECT_EQ(q.dims, p.dims);
  EXPECT_EQ(q.params, p.params);

  const auto path = std::filesystem::temp_directory_path() / "bjda_model_roundtrip.bin";
  save_checkpoint(p, path);
  EXPECT_EQ(load_checkpoint(path).params, p.params);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::string bytes = encode_checkpoint(init_xavier(kDims, 9));
  EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), ParseError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.bin"), IoError);
}
