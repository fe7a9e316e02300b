#include <gtest/gtest.h>

#include <json.hpp>

#include <cstring>

#include "test_util.hpp"
#include "xbt/error.hpp"
#include "xbt/harness.hpp"
#include "xbt/netgraph.hpp"

using namespace xbt;
using namespace xbt::testing;
using json = nlohmann::json;

namespace {

ParameterStore f32_rounded(ParameterStore p) {
  for (auto& l : p.layers)
    for (auto name : {"weight", "bias", "mean", "var", "scale", "shift"})
      for (auto& v : l.get(name).data()) v = static_cast<double>(static_cast<float>(v));
  return p;
}

ModelSpec two_linear() {
  ModelSpec s;
  s.input_shape = {2};
  s.num_classes = 2;
  s.layers = {LayerSpec::linear(2, 2), LayerSpec::of(LayerKind::relu), LayerSpec::linear(2, 2)};
  return s;
}

ParameterStore two_linear_params() {
  ParameterStore p;
  p.layers.resize(3);
  p.layers[0].weight = Tensor({2, 2}, std::vector<double>{1, 2, 3, 4});
  p.layers[0].bias = Tensor::vector({0.1, 0.2});
  p.layers[2].weight = Tensor({2, 2}, std::vector<double>{-1, 0.5, 0.25, 2});
  p.layers[2].bias = Tensor::vector({-0.3, 0.7});
  return p;
}

}  // namespace

TEST(ModelIo, RoundTripEveryArch) {
  const auto dir = scratch_dir();
  for (auto arch : {ToyArch::mlp, ToyArch::cnn, ToyArch::resnet_mini}) {
    auto m = make_toy_model(arch, 20, 7);
    const auto spec_path = dir / (to_string(arch) + ".json");
    const auto w_path = dir / (to_string(arch) + ".bin");
    save_model(m.spec, m.params, spec_path, w_path);
    auto loaded = load_model(spec_path, w_path);
    EXPECT_EQ(loaded.spec, m.spec);
    EXPECT_EQ(loaded.params, f32_rounded(m.params));
  }
}

TEST(ModelIo, RefusesOverwriteUnlessAsked) {
  const auto dir = scratch_dir();
  const auto s = two_linear();
  const auto p = two_linear_params();
  save_model(s, p, dir / "m.json", dir / "m.bin");
  EXPECT_THROW(save_model(s, p, dir / "m.json", dir / "m.bin"), FormatError);
  EXPECT_NO_THROW(save_model(s, p, dir / "m.json", dir / "m.bin", true));
}

TEST(ModelIo, EmptyLayerListRejected) {
  const auto dir = scratch_dir();
  ModelSpec s;
  s.input_shape = {2};
  s.num_classes = 2;
  EXPECT_THROW(save_model(s, {}, dir / "m.json", dir / "m.bin"), ValueError);
}

TEST(ModelIo, ZeroParameterModelWritesChecksumOnly) {
  const auto dir = scratch_dir();
  ModelSpec s;
  s.input_shape = {3};
  s.num_classes = 3;
  s.layers = {LayerSpec::of(LayerKind::relu), LayerSpec::of(LayerKind::relu)};
  ParameterStore p;
  p.layers.resize(2);
  save_model(s, p, dir / "m.json", dir / "m.bin");
  EXPECT_EQ(read_bytes(dir / "m.bin").size(), 4u);
  auto loaded = load_model(dir / "m.json", dir / "m.bin");
  EXPECT_EQ(loaded.spec, s);
  EXPECT_EQ(forward_network(loaded.spec, loaded.params, Tensor::vector({-1, 0, 2})).output,
            Tensor::vector({0, 0, 2}));
}

TEST(ModelIo, BlobIsLittleEndianFloat32WithCrc) {
  const auto dir = scratch_dir();
  save_model(two_linear(), two_linear_params(), dir / "m.json", dir / "m.bin");
  const auto bytes = read_bytes(dir / "m.bin");
  ASSERT_EQ(bytes.size(), 12u * 4 + 4);
  float first;
  std::memcpy(&first, bytes.data(), 4);  // host is little-endian here
  EXPECT_EQ(first, 1.0f);
}

TEST(ModelIo, TruncatedBlob) {
  const auto dir = scratch_dir();
  save_model(two_linear(), two_linear_params(), dir / "m.json", dir / "m.bin");
  auto bytes = read_bytes(dir / "m.bin");
  bytes.resize(bytes.size() - 3);
  write_bytes(dir / "m.bin", bytes);
  EXPECT_THROW(load_model(dir / "m.json", dir / "m.bin"), FormatError);
}

TEST(ModelIo, ChecksumFailure) {
  const auto dir = scratch_dir();
  save_model(two_linear(), two_linear_params(), dir / "m.json", dir / "m.bin");
  auto bytes = read_bytes(dir / "m.bin");
  bytes[5] ^= 0x10;
  write_bytes(dir / "m.bin", bytes);
  EXPECT_THROW(load_model(dir / "m.json", dir / "m.bin"), FormatError);
}

TEST(ModelIo, LayerCountDisagreesWithBlob) {
  const auto dir = scratch_dir();
  save_model(two_linear(), two_linear_params(), dir / "big.json", dir / "big.bin");
  ModelSpec small;
  small.input_shape = {2};
  small.num_classes = 2;
  small.layers = {LayerSpec::linear(2, 2)};
  ParameterStore sp;
  sp.layers.resize(1);
  sp.layers[0].weight = Tensor({2, 2});
  sp.layers[0].bias = Tensor({2});
  save_model(small, sp, dir / "small.json", dir / "small.bin");
  EXPECT_THROW(load_model(dir / "small.json", dir / "big.bin"), FormatError);
  EXPECT_THROW(load_model(dir / "big.json", dir / "small.bin"), FormatError);
}

TEST(ModelIo, UnknownLayerKind) {
  const auto dir = scratch_dir();
  save_model(two_linear(), two_linear_params(), dir / "m.json", dir / "m.bin");
  auto j = json::parse(read_text(dir / "m.json"));
  j["layers"][1]["kind"] = "gelu";
  write_text(dir / "m.json", j.dump());
  EXPECT_THROW(load_model(dir / "m.json", dir / "m.bin"), FormatError);
}

TEST(ModelIo, MalformedManifest) {
  const auto dir = scratch_dir();
  save_model(two_linear(), two_linear_params(), dir / "m.json", dir / "m.bin");
  write_text(dir / "bad.json", "{\"format_version\": 1, \"layers\": [");
  EXPECT_THROW(load_model(dir / "bad.json", dir / "m.bin"), FormatError);
  auto j = json::parse(read_text(dir / "m.json"));
  j["format_version"] = 9;
  write_text(dir / "v9.json", j.dump());
  EXPECT_THROW(load_model(dir / "v9.json", dir / "m.bin"), FormatError);
  EXPECT_THROW(load_model(dir / "missing.json", dir / "m.bin"), FormatError);
}

TEST(ModelIo, SaveWeightsOnlyMatchesModelBlob) {
  const auto dir = scratch_dir();
  save_model(two_linear(), two_linear_params(), dir / "m.json", dir / "m.bin");
  save_weights(two_linear(), two_linear_params(), dir / "w.bin");
  EXPECT_EQ(read_bytes(dir / "m.bin"), read_bytes(dir / "w.bin"));
}
