#include "xbt/netgraph.hpp"

#include <array>
#include <utility>

#include "xbt/error.hpp"
#include "xbt/ops.hpp"

namespace xbt {
namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 10> kKindNames{{
    {LayerKind::linear, "linear"},
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::relu, "relu"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::avgpool, "avgpool"},
    {LayerKind::flatten, "flatten"},
    {LayerKind::residual_begin, "residual-begin"},
    {LayerKind::residual_add, "residual-add"},
    {LayerKind::softmax, "softmax"},
}};

std::atomic<std::uint64_t> g_forward_passes{0};

std::string where(std::size_t i, const LayerSpec& l) {
  return "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) {
  LayerSpec l;
  l.kind = LayerKind::linear;
  l.in_features = in;
  l.out_features = out;
  return l;
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride, std::size_t padding) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::batchnorm(std::size_t channels, double eps) {
  LayerSpec l;
  l.kind = LayerKind::batchnorm;
  l.channels = channels;
  l.eps = eps;
  return l;
}

LayerSpec LayerSpec::maxpool(std::size_t kernel, std::size_t stride) {
  LayerSpec l;
  l.kind = LayerKind::maxpool;
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::avgpool(std::size_t kernel, std::size_t stride) {
  LayerSpec l = maxpool(kernel, stride);
  l.kind = LayerKind::avgpool;
  return l;
}

LayerSpec LayerSpec::of(LayerKind kind) {
  LayerSpec l;
  l.kind = kind;
  return l;
}

const Tensor& LayerParams::get(std::string_view name) const {
  return const_cast<LayerParams*>(this)->get(name);
}

Tensor& LayerParams::get(std::string_view name) {
  if (name == "weight") return weight;
  if (name == "bias") return bias;
  if (name == "mean") return mean;
  if (name == "var") return var;
  if (name == "scale") return scale;
  if (name == "shift") return shift;
  throw ValueError("unknown parameter name '" + std::string(name) + "'");
}

std::vector<std::string_view> param_names(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear:
    case LayerKind::conv2d:
      return {"weight", "bias"};
    case LayerKind::batchnorm:
      return {"mean", "var", "scale", "shift"};
    default:
      return {};
  }
}

bool is_weight_layer(LayerKind kind) {
  return kind == LayerKind::linear || kind == LayerKind::conv2d;
}

std::vector<std::pair<std::string_view, Shape>> param_shapes(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::linear:
      return {{"weight", {l.out_features, l.in_features}}, {"bias", {l.out_features}}};
    case LayerKind::conv2d:
      return {{"weight", {l.out_channels, l.in_channels, l.kernel, l.kernel}},
              {"bias", {l.out_channels}}};
    case LayerKind::batchnorm:
      return {{"mean", {l.channels}},
              {"var", {l.channels}},
              {"scale", {l.channels}},
              {"shift", {l.channels}}};
    default:
      return {};
  }
}

std::vector<Shape> propagate_shapes(const ModelSpec& spec) {
  if (spec.layers.empty()) throw ValueError("model has no layers");
  if (spec.input_shape.empty() || shape_numel(spec.input_shape) == 0)
    throw ShapeError("model input shape must be non-empty with positive dimensions");
  for (auto d : spec.input_shape)
    if (d == 0) throw ShapeError("model input shape has a zero dimension");

  std::vector<Shape> shapes;
  shapes.reserve(spec.layers.size());
  Shape cur = spec.input_shape;
  std::optional<Shape> skip;

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::linear:
        if (l.in_features == 0 || l.out_features == 0)
          throw ShapeError(where(i, l) + ": feature counts must be positive");
        if (cur.size() != 1 || cur[0] != l.in_features)
          throw ShapeError(where(i, l) + ": expects [" + std::to_string(l.in_features) +
                           "], got " + shape_str(cur));
        cur = {l.out_features};
        break;
      case LayerKind::conv2d: {
        if (l.in_channels == 0 || l.out_channels == 0 || l.kernel == 0)
          throw ShapeError(where(i, l) + ": channel counts and kernel must be positive");
        if (l.stride == 0) throw ValueError(where(i, l) + ": stride must be positive");
        if (cur.size() != 3 || cur[0] != l.in_channels)
          throw ShapeError(where(i, l) + ": expects [" + std::to_string(l.in_channels) +
                           ",H,W], got " + shape_str(cur));
        cur = {l.out_channels, window_out_extent(cur[1], l.kernel, l.stride, l.padding),
               window_out_extent(cur[2], l.kernel, l.stride, l.padding)};
        break;
      }
      case LayerKind::batchnorm:
        if (!(l.eps > 0.0)) throw ValueError(where(i, l) + ": eps must be positive");
        if (cur[0] != l.channels)
          throw ShapeError(where(i, l) + ": expects " + std::to_string(l.channels) +
                           " channels, got " + shape_str(cur));
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        if (l.stride == 0) throw ValueError(where(i, l) + ": stride must be positive");
        if (cur.size() != 3) throw ShapeError(where(i, l) + ": expects [C,H,W], got " + shape_str(cur));
        cur = {cur[0], window_out_extent(cur[1], l.kernel, l.stride, 0),
               window_out_extent(cur[2], l.kernel, l.stride, 0)};
        break;
      case LayerKind::flatten:
        cur = {shape_numel(cur)};
        break;
      case LayerKind::relu:
        break;
      case LayerKind::residual_begin:
        if (skip) throw ValueError(where(i, l) + ": nested residual blocks are not supported");
        skip = cur;
        break;
      case LayerKind::residual_add:
        if (!skip) throw ValueError(where(i, l) + ": residual-add without residual-begin");
        if (*skip != cur)
          throw ShapeError(where(i, l) + ": skip shape " + shape_str(*skip) +
                           " differs from branch shape " + shape_str(cur));
        skip.reset();
        break;
      case LayerKind::softmax:
        if (i + 1 != spec.layers.size())
          throw ValueError(where(i, l) + ": softmax may only be the final layer");
        break;
    }
    shapes.push_back(cur);
  }
  if (skip) throw ValueError("residual-begin without matching residual-add");

  const Shape& logits = spec.layers.back().kind == LayerKind::softmax && shapes.size() >= 2
                            ? shapes[shapes.size() - 2]
                            : shapes.back();
  if (logits.size() != 1)
    throw ShapeError("network output must be a vector, got " + shape_str(logits));
  if (spec.num_classes == 0 || logits[0] != spec.num_classes)
    throw ShapeError("network produces " + std::to_string(logits[0]) +
                     " outputs but num_classes is " + std::to_string(spec.num_classes));
  return shapes;
}

void validate_params(const ModelSpec& spec, const ParameterStore& params) {
  if (params.layers.size() != spec.layers.size())
    throw ShapeError("parameter store has " + std::to_string(params.layers.size()) +
                     " entries for " + std::to_string(spec.layers.size()) + " layers");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    for (const auto& [name, shape] : param_shapes(spec.layers[i])) {
      const Tensor& t = params.layers[i].get(name);
      if (t.shape() != shape)
        throw ShapeError(where(i, spec.layers[i]) + ": parameter " + std::string(name) +
                         " has shape " + shape_str(t.shape()) + ", expected " + shape_str(shape));
    }
  }
}

namespace {

using Inputs = GradTape::Inputs;

// Applies one layer either directly or through the tape. `node` tracks the
// current activation's tape node when taping.
class Runner {
 public:
  Runner(const ModelSpec& spec, const ParameterStore& params, bool taping)
      : spec_(spec), params_(params) {
    if (taping) tape_.emplace();
  }

  Tensor run(const Tensor& x, std::size_t layer_count, std::vector<ParamNode>& param_nodes) {
    Tensor cur = x;
    GradTape::NodeId node = 0;
    if (tape_) node = tape_->leaf(x);
    std::optional<Tensor> skip;
    GradTape::NodeId skip_node = 0;

    for (std::size_t i = 0; i < layer_count; ++i) {
      const LayerSpec& l = spec_.layers[i];
      const LayerParams& p = params_.layers[i];
      if (l.kind == LayerKind::residual_begin) {
        skip = cur;
        skip_node = node;
        continue;
      }
      if (!tape_) {
        cur = apply_direct(l, p, cur, skip);
      } else {
        std::vector<GradTape::NodeId> inputs{node};
        if (l.kind == LayerKind::residual_add) inputs.push_back(skip_node);
        for (auto name : param_names(l.kind)) {
          auto id = tape_->borrowed_leaf(p.get(name));
          param_nodes.push_back({i, name, id});
          inputs.push_back(id);
        }
        node = tape_->record(std::string(to_string(l.kind)), std::move(inputs), forward_fn(l),
                             backward_fn(l));
        cur = tape_->value(node);
      }
      if (!cur.all_finite())
        throw ValueError("non-finite activation after " + where(i, l));
    }
    if (tape_) tape_->finalize(node);
    return cur;
  }

  std::optional<GradTape>& tape() { return tape_; }

 private:
  static Tensor apply_direct(const LayerSpec& l, const LayerParams& p, const Tensor& x,
                             const std::optional<Tensor>& skip) {
    switch (l.kind) {
      case LayerKind::linear:
        return linear_forward(x, p.weight, p.bias);
      case LayerKind::conv2d:
        return conv2d_forward(x, p.weight, p.bias, {l.stride, l.padding});
      case LayerKind::relu:
        return relu_forward(x);
      case LayerKind::batchnorm:
        return batchnorm_inference_forward(x, {p.mean, p.var, p.scale, p.shift, l.eps});
      case LayerKind::maxpool:
        return maxpool2d_forward(x, {l.kernel, l.stride});
      case LayerKind::avgpool:
        return avgpool2d_forward(x, {l.kernel, l.stride});
      case LayerKind::flatten:
        return x.reshaped({x.size()});
      case LayerKind::residual_add:
        return residual_add(x, *skip);
      case LayerKind::softmax:
        return softmax(x);
      case LayerKind::residual_begin:
        break;
    }
    return x;
  }

  // Tape closures receive (activation, [skip], params...) as inputs.
  static GradTape::ForwardFn forward_fn(const LayerSpec& l) {
    switch (l.kind) {
      case LayerKind::linear:
        return [](Inputs in) { return linear_forward(*in[0], *in[1], *in[2]); };
      case LayerKind::conv2d:
        return [p = Conv2dParams{l.stride, l.padding}](Inputs in) {
          return conv2d_forward(*in[0], *in[1], *in[2], p);
        };
      case LayerKind::relu:
        return [](Inputs in) { return relu_forward(*in[0]); };
      case LayerKind::batchnorm:
        return [eps = l.eps](Inputs in) {
          return batchnorm_inference_forward(*in[0], {*in[1], *in[2], *in[3], *in[4], eps});
        };
      case LayerKind::maxpool:
        return [p = PoolParams{l.kernel, l.stride}](Inputs in) {
          return maxpool2d_forward(*in[0], p);
        };
      case LayerKind::avgpool:
        return [p = PoolParams{l.kernel, l.stride}](Inputs in) {
          return avgpool2d_forward(*in[0], p);
        };
      case LayerKind::flatten:
        return [](Inputs in) { return in[0]->reshaped({in[0]->size()}); };
      case LayerKind::residual_add:
        return [](Inputs in) { return residual_add(*in[0], *in[1]); };
      case LayerKind::softmax:
        return [](Inputs in) { return softmax(*in[0]); };
      case LayerKind::residual_begin:
        break;
    }
    throw Error("no forward for " + std::string(to_string(l.kind)));
  }

  static GradTape::BackwardFn backward_fn(const LayerSpec& l) {
    using Grads = std::vector<Tensor>;
    switch (l.kind) {
      case LayerKind::linear:
        return [](const Tensor& g, Inputs in, const Tensor&) {
          auto r = linear_backward(*in[0], *in[1], g);
          return Grads{std::move(r.x), std::move(r.W), std::move(r.b)};
        };
      case LayerKind::conv2d:
        return [p = Conv2dParams{l.stride, l.padding}](const Tensor& g, Inputs in, const Tensor&) {
          auto r = conv2d_backward(*in[0], *in[1], g, p);
          return Grads{std::move(r.x), std::move(r.K), std::move(r.b)};
        };
      case LayerKind::relu:
        return [](const Tensor& g, Inputs in, const Tensor&) {
          return Grads{relu_backward(*in[0], g)};
        };
      case LayerKind::batchnorm:
        return [eps = l.eps](const Tensor& g, Inputs in, const Tensor&) {
          auto r = batchnorm_inference_backward(*in[0], {*in[1], *in[2], *in[3], *in[4], eps}, g);
          // Frozen statistics receive no gradient.
          return Grads{std::move(r.x), Tensor(in[1]->shape()), Tensor(in[2]->shape()),
                       std::move(r.scale), std::move(r.shift)};
        };
      case LayerKind::maxpool:
        return [p = PoolParams{l.kernel, l.stride}](const Tensor& g, Inputs in, const Tensor&) {
          return Grads{maxpool2d_backward(*in[0], p, g)};
        };
      case LayerKind::avgpool:
        return [p = PoolParams{l.kernel, l.stride}](const Tensor& g, Inputs in, const Tensor&) {
          return Grads{avgpool2d_backward(*in[0], p, g)};
        };
      case LayerKind::flatten:
        return [](const Tensor& g, Inputs in, const Tensor&) {
          return Grads{g.reshaped(in[0]->shape())};
        };
      case LayerKind::residual_add:
        return [](const Tensor& g, Inputs, const Tensor&) { return Grads{g, g}; };
      case LayerKind::softmax:
        return [](const Tensor& g, Inputs, const Tensor& out) {
          return Grads{softmax_backward(out, g)};
        };
      case LayerKind::residual_begin:
        break;
    }
    throw Error("no backward for " + std::string(to_string(l.kind)));
  }

  const ModelSpec& spec_;
  const ParameterStore& params_;
  std::optional<GradTape> tape_;
};

}  // namespace

ForwardResult forward_network(const ModelSpec& spec, const ParameterStore& params,
                              const Tensor& x, ForwardOptions options) {
  propagate_shapes(spec);
  validate_params(spec, params);
  if (x.shape() != spec.input_shape)
    throw ShapeError("input " + shape_str(x.shape()) + " does not match model input " +
                     shape_str(spec.input_shape));
  g_forward_passes.fetch_add(1, std::memory_order_relaxed);

  std::size_t count = spec.layers.size();
  if (options.stop_before_softmax && spec.layers.back().kind == LayerKind::softmax) --count;

  ForwardResult result;
  Runner runner(spec, params, options.with_tape);
  result.output = runner.run(x, count, result.param_nodes);
  result.tape = std::move(runner.tape());
  return result;
}

std::uint64_t forward_pass_count() noexcept {
  return g_forward_passes.load(std::memory_order_relaxed);
}

}  // namespace xbt
