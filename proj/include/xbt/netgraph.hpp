#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xbt/tape.hpp"
#include "xbt/tensor.hpp"

namespace xbt {

enum class LayerKind {
  linear,
  conv2d,
  relu,
  batchnorm,
  maxpool,
  avgpool,
  flatten,
  residual_begin,
  residual_add,
  softmax,
};

std::string_view to_string(LayerKind kind);
/// Throws FormatError for unknown names.
LayerKind layer_kind_from_string(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // linear
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  // conv2d; pools use kernel and stride
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  // batchnorm
  std::size_t channels = 0;
  double eps = 1e-5;

  static LayerSpec linear(std::size_t in, std::size_t out);
  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                          std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec batchnorm(std::size_t channels, double eps = 1e-5);
  static LayerSpec maxpool(std::size_t kernel, std::size_t stride);
  static LayerSpec avgpool(std::size_t kernel, std::size_t stride);
  static LayerSpec of(LayerKind kind);

  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  Shape input_shape;
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;

  bool operator==(const ModelSpec&) const = default;
};

/// Tensors of one layer. Linear and conv2d use weight/bias; batchnorm uses
/// mean/var/scale/shift. Unused members stay empty.
struct LayerParams {
  Tensor weight, bias;
  Tensor mean, var, scale, shift;

  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  bool operator==(const LayerParams&) const = default;
};

/// One LayerParams per layer of the owning ModelSpec, in layer order.
struct ParameterStore {
  std::vector<LayerParams> layers;

  bool operator==(const ParameterStore&) const = default;
};

/// Parameter names of a layer kind in serialization order.
std::vector<std::string_view> param_names(LayerKind kind);
bool is_weight_layer(LayerKind kind);

/// Expected shape of each named parameter of `layer`.
std::vector<std::pair<std::string_view, Shape>> param_shapes(const LayerSpec& layer);

/// Validates structure and returns the shape after every layer (index i holds
/// the output of layer i). Throws ShapeError / ValueError on any violation.
std::vector<Shape> propagate_shapes(const ModelSpec& spec);

/// Checks that `params` has one conforming entry per layer.
void validate_params(const ModelSpec& spec, const ParameterStore& params);

struct ForwardOptions {
  bool with_tape = false;
  bool stop_before_softmax = true;
};

struct ParamNode {
  std::size_t layer;
  std::string_view name;
  GradTape::NodeId node;
};

struct ForwardResult {
  Tensor output;
  std::optional<GradTape> tape;
  /// Populated with the tape; parameters are borrowed leaves of it.
  std::vector<ParamNode> param_nodes;
};

/// Runs the network. With stop_before_softmax, a final softmax layer is skipped
/// and the pre-softmax logits are returned. The tape, when requested, borrows
/// `params`, which must outlive it.
ForwardResult forward_network(const ModelSpec& spec, const ParameterStore& params,
                              const Tensor& x, ForwardOptions options = {});

/// Total forward passes run by forward_network in this process.
std::uint64_t forward_pass_count() noexcept;

// Model files: a JSON manifest plus a little-endian float32 weight blob that
// ends with the CRC32 of its payload.

struct LoadedModel {
  ModelSpec spec;
  ParameterStore params;
};

LoadedModel load_model(const std::filesystem::path& spec_path,
                       const std::filesystem::path& weights_path);

/// Refuses to replace existing files unless `overwrite` is set.
void save_model(const ModelSpec& spec, const ParameterStore& params,
                const std::filesystem::path& spec_path, const std::filesystem::path& weights_path,
                bool overwrite = false);

/// Writes only a weight blob laid out for `spec` (for faulty parameter sets).
void save_weights(const ModelSpec& spec, const ParameterStore& params,
                  const std::filesystem::path& weights_path, bool overwrite = false);

}  // namespace xbt
