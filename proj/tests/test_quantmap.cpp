#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "xbt/error.hpp"
#include "xbt/harness.hpp"
#include "xbt/quantmap.hpp"
#include "xbt/rng.hpp"

using namespace xbt;

namespace {

QuantizedTensor single(int level, double scale = 1.0) {
  return {{1}, {static_cast<std::int8_t>(level)}, scale};
}

QuantizedTensor all_levels() {
  QuantizedTensor q{{255}, {}, 0.01};
  for (int l = -127; l <= 127; ++l) q.levels.push_back(static_cast<std::int8_t>(l));
  return q;
}

}  // namespace

TEST(Quantize, HalfRoundsAwayFromZero) {
  auto q = quantize_int8(Tensor::vector({-1.0, 0.5, 1.0}));
  EXPECT_DOUBLE_EQ(q.scale, 1.0 / 127);
  EXPECT_EQ(q.levels, (std::vector<std::int8_t>{-127, 64, 127}));
  auto n = quantize_int8(Tensor::vector({1.0, -0.5}));
  EXPECT_EQ(n.levels, (std::vector<std::int8_t>{127, -64}));
}

TEST(Quantize, AllZeroTensor) {
  auto q = quantize_int8(Tensor({2}));
  EXPECT_EQ(q.scale, 1.0);
  EXPECT_EQ(q.levels, (std::vector<std::int8_t>{0, 0}));
}

TEST(Quantize, NonFiniteRejected) {
  EXPECT_THROW(quantize_int8(Tensor::vector({1.0, NAN})), ValueError);
  EXPECT_THROW(quantize_int8(Tensor::vector({INFINITY})), ValueError);
}

TEST(Quantize, ErrorBoundedByHalfStep) {
  RngStream rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor W({1 + rng.below(300)});
    const double sd = std::exp(4.0 * rng.normal());
    for (auto& v : W.data()) v = sd * rng.normal();
    auto q = quantize_int8(W);
    Tensor back = dequantize(q);
    for (std::size_t i = 0; i < W.size(); ++i) {
      EXPECT_GE(q.levels[i], -127);
      EXPECT_LE(q.levels[i], 127);
      EXPECT_LE(std::abs(back[i] - W[i]), q.scale / 2 * (1 + 1e-12)) << i;
    }
  }
}

TEST(Quantize, ScaleInvariantLevels) {
  RngStream rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor W({50});
    for (auto& v : W.data()) v = rng.normal();
    // Powers of two scale exactly, so no value can slide across a rounding boundary.
    const double a = std::ldexp(1.0, static_cast<int>(rng.below(21)) - 10);
    Tensor aW = W;
    for (auto& v : aW.data()) v *= a;
    auto q = quantize_int8(W), qa = quantize_int8(aW);
    EXPECT_EQ(qa.levels, q.levels);
    EXPECT_DOUBLE_EQ(qa.scale, q.scale * a);
  }
}

TEST(Dequantize, Examples) {
  EXPECT_EQ(dequantize(single(127, 1.0 / 127)), Tensor::vector({1.0}));
  EXPECT_EQ(dequantize(QuantizedTensor{{3}, {0, 0, 0}, 0.5}), Tensor({3}));
}

TEST(Dequantize, RequantizeIsIdentityOnLevels) {
  // Includes +-127 so the scale is reproduced.
  auto q = all_levels();
  EXPECT_EQ(quantize_int8(dequantize(q)).levels, q.levels);
}

TEST(Bitwise, PlusAndMinusFive) {
  EXPECT_EQ(encode_bitwise(single(5)).cells, (std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1, 0, 1}));
  EXPECT_EQ(encode_bitwise(single(-5)).cells, (std::vector<std::uint8_t>{1, 0, 0, 0, 0, 1, 0, 1}));
}

TEST(Bitwise, SignedZeroCollapses) {
  EXPECT_EQ(encode_bitwise(single(0)).cells, std::vector<std::uint8_t>(8, 0));
  CrossbarImage neg_zero{CellEncoding::bitwise, {1}, {1, 0, 0, 0, 0, 0, 0, 0}, 1.0};
  EXPECT_EQ(decode_bitwise(neg_zero).levels, (std::vector<std::int8_t>{0}));
}

TEST(Bitwise, RejectsNonBinaryCells) {
  CrossbarImage img{CellEncoding::bitwise, {1}, {0, 0, 2, 0, 0, 0, 0, 0}, 1.0};
  EXPECT_THROW(decode_bitwise(img), ValueError);
  img.cells.pop_back();
  EXPECT_THROW(decode_bitwise(img), ShapeError);
}

TEST(Bitwise, ExhaustiveRoundTrip) {
  auto q = all_levels();
  auto img = encode_bitwise(q);
  EXPECT_EQ(img.cells.size(), 255u * kCellsPerWeight);
  for (auto c : img.cells) EXPECT_LE(c, 1);
  EXPECT_EQ(decode_bitwise(img), q);
  EXPECT_EQ(decode(encode(q, CellEncoding::bitwise)), q);
}

TEST(Levelwise, Examples) {
  EXPECT_EQ(encode_levelwise(single(-37)).cells, (std::vector<std::uint8_t>{1, 37}));
  EXPECT_EQ(encode_levelwise(single(0)).cells, (std::vector<std::uint8_t>{0, 0}));
}

TEST(Levelwise, ExhaustiveRoundTrip) {
  auto q = all_levels();
  EXPECT_EQ(decode_levelwise(encode_levelwise(q)), q);
  EXPECT_EQ(decode(encode(q, CellEncoding::levelwise)), q);
}

TEST(Levelwise, RejectsOutOfRangeCells) {
  EXPECT_THROW(decode_levelwise({CellEncoding::levelwise, {1}, {2, 5}, 1.0}), ValueError);
  EXPECT_THROW(decode_levelwise({CellEncoding::levelwise, {1}, {0, 128}, 1.0}), ValueError);
  EXPECT_THROW(decode_levelwise({CellEncoding::bitwise, {1}, {0, 1}, 1.0}), ValueError);
}

TEST(QuantizedModel, OnlyWeightsAreQuantized) {
  auto m = make_toy_model(ToyArch::cnn, 6, 2, {.image_size = 8});
  auto qm = quantize_model(m.spec, m.params);
  auto ref = quantized_reference(m.spec, m.params);
  ASSERT_EQ(qm.weights.size(), m.spec.layers.size());
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    const auto kind = m.spec.layers[i].kind;
    EXPECT_EQ(qm.weights[i].has_value(), is_weight_layer(kind));
    EXPECT_EQ(ref.layers[i].bias, m.params.layers[i].bias);
    EXPECT_EQ(ref.layers[i].mean, m.params.layers[i].mean);
    EXPECT_EQ(ref.layers[i].var, m.params.layers[i].var);
    EXPECT_EQ(ref.layers[i].scale, m.params.layers[i].scale);
    EXPECT_EQ(ref.layers[i].shift, m.params.layers[i].shift);
    if (qm.weights[i]) EXPECT_EQ(ref.layers[i].weight, dequantize(*qm.weights[i]));
  }
  EXPECT_EQ(dequantize_model(m.params, qm), ref);
}
