#include <gtest/gtest.h>

#include "test_util.hpp"
#include "xbt/error.hpp"
#include "xbt/gradcheck.hpp"
#include "xbt/harness.hpp"
#include "xbt/netgraph.hpp"

using namespace xbt;
using xbt::testing::expect_tensor_near;

namespace {

ModelSpec linear_spec(std::size_t in, std::size_t out) {
  ModelSpec s;
  s.input_shape = {in};
  s.num_classes = out;
  s.layers = {LayerSpec::linear(in, out)};
  return s;
}

ParameterStore linear_params(Tensor W, Tensor b) {
  ParameterStore p;
  p.layers.resize(1);
  p.layers[0].weight = std::move(W);
  p.layers[0].bias = std::move(b);
  return p;
}

}  // namespace

TEST(Forward, IdentityLinear) {
  auto spec = linear_spec(2, 2);
  auto params = linear_params(Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}), Tensor({2}));
  expect_tensor_near(forward_network(spec, params, Tensor::vector({1, 2})).output, {2}, {1, 2});
}

TEST(Forward, LinearThenRelu) {
  ModelSpec spec = linear_spec(2, 1);
  spec.layers.push_back(LayerSpec::of(LayerKind::relu));
  auto params = linear_params(Tensor({1, 2}, std::vector<double>{1, 2}), Tensor::vector({1}));
  params.layers.emplace_back();
  expect_tensor_near(forward_network(spec, params, Tensor::vector({3, 4})).output, {1}, {12});
}

TEST(Forward, DeterministicAndCounted) {
  auto m = make_toy_model(ToyArch::resnet_mini, 8, 3);
  Tensor x(m.spec.input_shape, 0.25);
  const auto before = forward_pass_count();
  auto a = forward_network(m.spec, m.params, x).output;
  auto b = forward_network(m.spec, m.params, x).output;
  EXPECT_EQ(forward_pass_count() - before, 2u);
  EXPECT_EQ(a, b);
}

TEST(Forward, SoftmaxSkippedForLogits) {
  auto spec = linear_spec(3, 3);
  auto params = linear_params(Tensor({3, 3}, std::vector<double>{1, 2, 0, -1, 0, 3, 0.5, 0.5, 0.5}),
                              Tensor::vector({0.1, 0.2, 0.3}));
  Tensor x = Tensor::vector({0.3, -0.7, 1.1});
  const Tensor plain = forward_network(spec, params, x).output;
  spec.layers.push_back(LayerSpec::of(LayerKind::softmax));
  params.layers.emplace_back();
  EXPECT_EQ(forward_network(spec, params, x).output, plain);
  const Tensor probs = forward_network(spec, params, x, {.stop_before_softmax = false}).output;
  double total = 0;
  for (double v : probs.data()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Forward, InputShapeMismatchThrows) {
  auto spec = linear_spec(2, 2);
  auto params = linear_params(Tensor({2, 2}), Tensor({2}));
  EXPECT_THROW(forward_network(spec, params, Tensor::vector({1, 2, 3})), ShapeError);
}

TEST(Forward, NonFiniteActivationThrows) {
  auto spec = linear_spec(1, 1);
  auto params = linear_params(Tensor({1, 1}, 1e308), Tensor({1}));
  EXPECT_THROW(forward_network(spec, params, Tensor::vector({1e308})), ValueError);
}

TEST(Forward, TapeInputGradientOnToyModels) {
  for (auto arch : {ToyArch::mlp, ToyArch::cnn, ToyArch::resnet_mini}) {
    auto m = make_toy_model(arch, 4, 1, {.image_size = 8});
    GradCheckCase c{m.spec, m.params, Tensor(m.spec.input_shape), Tensor({4}), false};
    RngStream rng(5);
    for (auto& v : c.input.data()) v = rng.normal();
    for (auto& v : c.upstream.data()) v = rng.normal();
    if (kink_margin(c) < 1e-6) continue;  // a kink within the stencil would be noise, not a bug
    EXPECT_LE(check_input_gradient(c, 1e-6).rel_error, 1e-4) << to_string(arch);
  }
}

TEST(Shapes, PropagatesEveryLayer) {
  auto spec = toy_model_spec(ToyArch::cnn, 10, 16);
  const auto shapes = propagate_shapes(spec);
  ASSERT_EQ(shapes.size(), spec.layers.size());
  EXPECT_EQ(shapes.front(), (Shape{16, 16, 16}));
  EXPECT_EQ(shapes.back(), (Shape{10}));
}

TEST(Shapes, StructuralErrors) {
  ModelSpec empty;
  empty.input_shape = {2};
  empty.num_classes = 2;
  EXPECT_THROW(propagate_shapes(empty), ValueError);

  auto wrong_n = linear_spec(2, 3);
  wrong_n.num_classes = 4;
  EXPECT_THROW(propagate_shapes(wrong_n), ShapeError);

  auto softmax_mid = linear_spec(2, 2);
  softmax_mid.layers = {LayerSpec::of(LayerKind::softmax), LayerSpec::linear(2, 2)};
  EXPECT_THROW(propagate_shapes(softmax_mid), ValueError);

  auto unbalanced = linear_spec(2, 2);
  unbalanced.layers.push_back(LayerSpec::of(LayerKind::residual_begin));
  EXPECT_THROW(propagate_shapes(unbalanced), ValueError);

  auto orphan_add = linear_spec(2, 2);
  orphan_add.layers.push_back(LayerSpec::of(LayerKind::residual_add));
  EXPECT_THROW(propagate_shapes(orphan_add), ValueError);

  auto nested = linear_spec(2, 2);
  nested.layers = {LayerSpec::of(LayerKind::residual_begin), LayerSpec::of(LayerKind::residual_begin),
                   LayerSpec::linear(2, 2), LayerSpec::of(LayerKind::residual_add),
                   LayerSpec::of(LayerKind::residual_add)};
  EXPECT_THROW(propagate_shapes(nested), ValueError);

  auto skip_shape = linear_spec(2, 3);
  skip_shape.layers = {LayerSpec::of(LayerKind::residual_begin), LayerSpec::linear(2, 3),
                       LayerSpec::of(LayerKind::residual_add)};
  EXPECT_THROW(propagate_shapes(skip_shape), ShapeError);

  auto bad_in = linear_spec(2, 2);
  bad_in.input_shape = {3};
  EXPECT_THROW(propagate_shapes(bad_in), ShapeError);
}

TEST(Shapes, ValidateParams) {
  auto spec = linear_spec(2, 2);
  EXPECT_NO_THROW(validate_params(spec, linear_params(Tensor({2, 2}), Tensor({2}))));
  EXPECT_THROW(validate_params(spec, linear_params(Tensor({2, 3}), Tensor({2}))), ShapeError);
  EXPECT_THROW(validate_params(spec, ParameterStore{}), ShapeError);
}

TEST(LayerKinds, NamesRoundTrip) {
  for (auto k : {LayerKind::linear, LayerKind::conv2d, LayerKind::relu, LayerKind::batchnorm,
                 LayerKind::maxpool, LayerKind::avgpool, LayerKind::flatten, LayerKind::residual_begin,
                 LayerKind::residual_add, LayerKind::softmax})
    EXPECT_EQ(layer_kind_from_string(to_string(k)), k);
  EXPECT_EQ(to_string(LayerKind::residual_begin), "residual-begin");
  EXPECT_THROW(layer_kind_from_string("lstm"), FormatError);
}
