#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "xbt/error.hpp"
#include "xbt/faultlab.hpp"
#include "xbt/harness.hpp"
#include "xbt/quantmap.hpp"

using namespace xbt;

namespace {

ParameterStore single_weight_store(std::size_t n, double value) {
  ParameterStore p;
  p.layers.resize(1);
  p.layers[0].weight = Tensor({n}, value);
  p.layers[0].bias = Tensor::vector({0.5});
  return p;
}

const ToyModel& cnn() {
  static const ToyModel m = make_toy_model(ToyArch::cnn, 24, 5, {.image_size = 8});
  return m;
}

}  // namespace

TEST(FaultConfig, ParseAndValidate) {
  auto c = parse_fault_config(R"({"kind":"bit-flip","severity":0.1,"seed":9})");
  EXPECT_EQ(c, (FaultConfig{FaultKind::bit_flip, 0.1, 9}));
  EXPECT_EQ(parse_fault_config(fault_config_to_json(c)), c);
  EXPECT_EQ(parse_fault_config(R"({"kind":"level-flip","severity":1})").seed, 0u);
  EXPECT_THROW(parse_fault_config(R"({"kind":"stuck","severity":1})"), ValueError);
  EXPECT_THROW(parse_fault_config(R"({"kind":"bit-flip","severity":101})"), ValueError);
  EXPECT_THROW(parse_fault_config(R"({"kind":"additive-variation","severity":-1})"), ValueError);
  EXPECT_THROW(parse_fault_config("{"), FormatError);
  EXPECT_NO_THROW((FaultConfig{FaultKind::multiplicative_variation, 150.0, 0}.validate()));
}

TEST(FaultConfig, KindNames) {
  for (auto k : {FaultKind::multiplicative_variation, FaultKind::additive_variation, FaultKind::bit_flip,
                 FaultKind::level_flip})
    EXPECT_EQ(fault_kind_from_string(to_string(k)), k);
  EXPECT_TRUE(is_variation(FaultKind::additive_variation));
  EXPECT_FALSE(is_variation(FaultKind::level_flip));
}

TEST(Sampling, DistinctSortedAndComplete) {
  RngStream rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t pop = 1 + rng.below(500), k = rng.below(pop + 1);
    auto s = sample_without_replacement(pop, k, rng);
    ASSERT_EQ(s.size(), k);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), k);
    if (k) EXPECT_LT(s.back(), pop);
  }
  EXPECT_THROW(sample_without_replacement(3, 4, rng), ValueError);
}

TEST(Sampling, RoughlyUniform) {
  RngStream rng(2);
  std::vector<int> hits(10, 0);
  for (int i = 0; i < 20000; ++i)
    for (auto v : sample_without_replacement(10, 3, rng)) ++hits[v];
  for (int h : hits) EXPECT_NEAR(h, 6000, 300);
}

TEST(FlipCount, Rounds) {
  EXPECT_EQ(flip_count(0.1, 8000), 8u);
  EXPECT_EQ(flip_count(0.02, 1000), 0u);
  EXPECT_EQ(flip_count(0.05, 1000), 1u);  // 0.5 rounds away from zero
  EXPECT_EQ(flip_count(100, 37), 37u);
  EXPECT_THROW(flip_count(100.5, 10), ValueError);
}

TEST(Variation, ZeroEtaIsIdentity) {
  RngStream rng(3);
  const auto& m = cnn();
  EXPECT_EQ(inject_variation(m.params, FaultKind::multiplicative_variation, 0.0, rng), m.params);
  EXPECT_EQ(inject_variation(m.params, FaultKind::additive_variation, 0.0, rng), m.params);
}

TEST(Variation, Deterministic) {
  RngStream a(4), b(4);
  const auto& m = cnn();
  EXPECT_EQ(inject_variation(m.params, FaultKind::multiplicative_variation, 0.04, a),
            inject_variation(m.params, FaultKind::multiplicative_variation, 0.04, b));
}

TEST(Variation, MultiplicativeLawOfLargeNumbers) {
  const std::size_t n = 1000000;
  const double eta = 0.04;
  RngStream rng(5);
  auto p = single_weight_store(n, 0.75);
  auto q = inject_variation(p, FaultKind::multiplicative_variation, eta, rng);
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = (q.layers[0].weight[i] - 0.75) / 0.75;
    s += r;
    s2 += r * r;
  }
  const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_LE(std::abs(mean), 3e-3 * eta);
  EXPECT_NEAR(sd, eta, 0.01 * eta);
  EXPECT_EQ(q.layers[0].bias, p.layers[0].bias);
}

TEST(Variation, AdditiveUnbiased) {
  const std::size_t n = 1000000;
  const double eta = 1e-4;
  RngStream rng(6);
  auto p = single_weight_store(n, -0.2);
  auto q = inject_variation(p, FaultKind::additive_variation, eta, rng);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += q.layers[0].weight[i] + 0.2;
  EXPECT_LE(std::abs(s / n), 3 * eta / std::sqrt(static_cast<double>(n)));
}

TEST(Variation, RejectsFlipKind) {
  RngStream rng(7);
  EXPECT_THROW(inject_variation(cnn().params, FaultKind::bit_flip, 0.1, rng), ValueError);
}

TEST(BitFlip, ZeroProbabilityUnchanged) {
  RngStream rng(8);
  auto img = encode_bitwise(quantize_int8(Tensor::vector({0.3, -1, 0.8})));
  EXPECT_EQ(inject_bitflip(img, 0.0, rng), img);
}

TEST(BitFlip, LastCellOfFive) {
  QuantizedTensor q{{1}, {5}, 1.0};
  auto flipped = flip_cells(encode_bitwise(q), {7});
  EXPECT_EQ(flipped.cells, (std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1, 0, 0}));
  EXPECT_EQ(decode_bitwise(flipped).levels, (std::vector<std::int8_t>{4}));
}

TEST(BitFlip, SignCellNegatesEveryNonzeroLevel) {
  for (int l = -127; l <= 127; ++l) {
    if (l == 0) continue;
    QuantizedTensor q{{1}, {static_cast<std::int8_t>(l)}, 1.0};
    EXPECT_EQ(decode_bitwise(flip_cells(encode_bitwise(q), {0})).levels[0], -l);
  }
}

TEST(BitFlip, ExactCount) {
  RngStream rng(9);
  Tensor W({1000});
  for (auto& v : W.data()) v = rng.normal();
  auto img = encode_bitwise(quantize_int8(W));
  for (double p : {0.02, 0.1, 1.0, 5.0, 100.0}) {
    auto out = inject_bitflip(img, p, rng);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < img.cells.size(); ++i) changed += out.cells[i] != img.cells[i];
    EXPECT_EQ(changed, flip_count(p, img.cells.size())) << p;
  }
  EXPECT_THROW(inject_bitflip(img, 120, rng), ValueError);
  EXPECT_THROW(inject_bitflip(encode_levelwise(quantize_int8(W)), 1, rng), ValueError);
}

TEST(LevelFlip, ZeroProbabilityUnchanged) {
  RngStream rng(10);
  auto img = encode_levelwise(quantize_int8(Tensor::vector({0.3, -1, 0.8})));
  EXPECT_EQ(inject_levelflip(img, 0.0, rng), img);
}

TEST(LevelFlip, FullRedrawIsUniform) {
  RngStream rng(11);
  auto img = encode_levelwise(QuantizedTensor{{1000}, std::vector<std::int8_t>(1000, 100), 1.0});
  auto q = decode_levelwise(inject_levelflip(img, 100, rng));
  double sum = 0;
  std::size_t still_100 = 0;
  for (auto l : q.levels) {
    EXPECT_GE(l, -127);
    EXPECT_LE(l, 127);
    sum += l;
    still_100 += l == 100;
  }
  EXPECT_NEAR(sum / 1000, 0.0, 7.0);
  EXPECT_LT(still_100, 10u);
}

TEST(LevelFlip, Deterministic) {
  auto img = encode_levelwise(QuantizedTensor{{500}, std::vector<std::int8_t>(500, -3), 1.0});
  RngStream a(12), b(12);
  EXPECT_EQ(inject_levelflip(img, 5, a), inject_levelflip(img, 5, b));
}

TEST(Realize, ZeroSeverityEqualsReference) {
  const auto& m = cnn();
  const auto ref = quantized_reference(m.spec, m.params);
  for (auto k : {FaultKind::multiplicative_variation, FaultKind::additive_variation, FaultKind::bit_flip,
                 FaultKind::level_flip})
    EXPECT_EQ(realize_faulty_model(m.spec, m.params, {k, 0.0, 77}), ref) << to_string(k);
}

TEST(Realize, ReproducibleAndSeedSensitive) {
  const auto& m = cnn();
  for (auto k : {FaultKind::bit_flip, FaultKind::level_flip, FaultKind::multiplicative_variation}) {
    const double sev = is_variation(k) ? 0.04 : 0.1;
    auto a = realize_faulty_model(m.spec, m.params, {k, sev, 1});
    EXPECT_EQ(a, realize_faulty_model(m.spec, m.params, {k, sev, 1}));
    EXPECT_NE(a, realize_faulty_model(m.spec, m.params, {k, sev, 2}));
  }
}

TEST(Realize, ContainmentAndCount) {
  const auto& m = cnn();
  const auto qm = quantize_model(m.spec, m.params);
  const FaultConfig fc{FaultKind::bit_flip, 1.0, 3};
  auto faulty = realize_faulty_model(m.params, qm, fc);
  EXPECT_NO_THROW(validate_params(m.spec, faulty));
  // Replay the per-layer pipeline with the same stream to count altered cells.
  RngStream rng(fc.seed);
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    EXPECT_EQ(faulty.layers[i].bias, m.params.layers[i].bias);
    EXPECT_EQ(faulty.layers[i].mean, m.params.layers[i].mean);
    EXPECT_EQ(faulty.layers[i].var, m.params.layers[i].var);
    EXPECT_EQ(faulty.layers[i].scale, m.params.layers[i].scale);
    EXPECT_EQ(faulty.layers[i].shift, m.params.layers[i].shift);
    if (!qm.weights[i]) {
      EXPECT_EQ(faulty.layers[i].weight, m.params.layers[i].weight);
      continue;
    }
    const auto clean = encode_bitwise(*qm.weights[i]);
    const auto hit = inject_bitflip(clean, fc.severity, rng);
    std::size_t diff = 0;
    for (std::size_t c = 0; c < clean.cells.size(); ++c) diff += clean.cells[c] != hit.cells[c];
    EXPECT_EQ(diff, flip_count(fc.severity, clean.cells.size())) << "layer " << i;
    EXPECT_EQ(faulty.layers[i].weight, dequantize(decode_bitwise(hit))) << "layer " << i;
  }
}
