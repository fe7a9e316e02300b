#include <algorithm>
#include <cmath>

#include "xbt/error.hpp"
#include "xbt/harness.hpp"
#include "xbt/log.hpp"
#include "xbt/oneshot.hpp"
#include "xbt/ops.hpp"

namespace xbt {
namespace {

constexpr double kBlobNoise = 1.5;
constexpr std::size_t kBlobPerClass = 24;
constexpr std::size_t kBatch = 16;
constexpr double kLearningRate = 0.02;
constexpr std::size_t kMlpIn = 256;
constexpr std::size_t kMlpHidden = 256;

void init_params(const ModelSpec& spec, ParameterStore& params, RngStream& rng) {
  params.layers.assign(spec.layers.size(), LayerParams{});
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& layer = spec.layers[li];
    auto& p = params.layers[li];
    const bool last_weight = std::none_of(spec.layers.begin() + static_cast<long>(li) + 1, spec.layers.end(),
                                          [](const LayerSpec& l) { return is_weight_layer(l.kind); });
    for (const auto& [name, shape] : param_shapes(layer)) {
      Tensor& t = p.get(name);
      if (name == "weight") {
        const std::size_t fan_in = shape_numel(shape) / shape[0];
        const double sd = std::sqrt((last_weight ? 1.0 : 2.0) / static_cast<double>(fan_in));
        t = Tensor(shape);
        for (auto& v : t.data()) v = sd * rng.normal();
      } else if (name == "var" || name == "scale") {
        t = Tensor(shape, 1.0);
      } else {
        t = Tensor(shape, 0.0);
      }
    }
  }
}

// Sets each batch-norm layer's running statistics to the per-channel moments
// of its input over the dataset, one layer at a time so later layers see the
// already normalized activations.
void calibrate_batchnorm(const ModelSpec& spec, ParameterStore& params, const BlobDataset& data) {
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    if (spec.layers[li].kind != LayerKind::batchnorm) continue;
    const std::size_t channels = spec.layers[li].channels;
    std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
    std::size_t count = 0;
    std::size_t bn_index = 0;
    for (std::size_t k = 0; k < li; ++k) bn_index += spec.layers[k].kind == LayerKind::batchnorm;
    for (const auto& x : data.inputs) {
      auto fwd = forward_network(spec, params, x, {.with_tape = true});
      const GradTape& tape = *fwd.tape;
      std::size_t hit = 0;
      for (std::size_t node = 0; node < tape.size(); ++node) {
        if (tape.op(node) != "batchnorm") continue;
        if (hit++ != bn_index) continue;
        const Tensor& in = tape.value(tape.inputs(node).at(0));
        const std::size_t per = in.size() / channels;
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t i = 0; i < per; ++i) {
            const double v = in[c * per + i];
            sum[c] += v;
            sumsq[c] += v * v;
          }
        count += per;
        break;
      }
    }
    if (count == 0) throw ValueError("batch-norm calibration found no activations");
    auto& p = params.layers[li];
    for (std::size_t c = 0; c < channels; ++c) {
      const double m = sum[c] / static_cast<double>(count);
      p.mean[c] = m;
      p.var[c] = std::max(sumsq[c] / static_cast<double>(count) - m * m, 1e-6);
    }
  }
}

// Calibrates the final (pre-softmax) weight layer. Softmax ignores a vector
// added to every row, so the common row is free: it is scaled until the input
// gradients of the logit mean and of the logit spread carry equal energy on
// probe inputs. Then the whole layer is scaled so the logit spread on probes
// is `target`. Class probabilities change only through the temperature.
void calibrate_output_layer(const ModelSpec& spec, ParameterStore& params, double target,
                            std::uint64_t seed) {
  std::size_t f = spec.layers.size();
  while (f-- > 0 && !is_weight_layer(spec.layers[f].kind)) {
  }
  Tensor& W = params.layers[f].weight;
  Tensor& b = params.layers[f].bias;
  const std::size_t rows = W.dim(0);
  const std::size_t cols = W.size() / rows;
  std::vector<double> common(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) common[c] += W[r * cols + c] / static_cast<double>(rows);

  constexpr int kProbes = 16;
  auto measure = [&](double& g_mean, double& g_spread, double& spread) {
    RngStream rng(seed);
    g_mean = g_spread = spread = 0.0;
    for (int i = 0; i < kProbes; ++i) {
      Tensor x(spec.input_shape);
      for (auto& v : x.data()) v = rng.normal();
      auto fwd = forward_network(spec, params, x, {.with_tape = true});
      const OutputStats st = output_stats(fwd.output);
      const std::size_t n = fwd.output.size();
      Tensor um(fwd.output.shape(), 1.0 / static_cast<double>(n));
      Tensor us(fwd.output.shape());
      for (std::size_t k = 0; k < n; ++k) us[k] = (fwd.output[k] - st.mean) / (st.stddev * static_cast<double>(n));
      const Tensor gm = backward_to_input(*fwd.tape, um), gs = backward_to_input(*fwd.tape, us);
      for (double v : gm.data()) g_mean += v * v;
      for (double v : gs.data()) g_spread += v * v;
      spread += st.stddev * st.stddev;
    }
    spread = std::sqrt(spread / kProbes);
  };

  double gm = 0.0, gs = 0.0, spread = 0.0;
  measure(gm, gs, spread);
  if (gm > 0.0 && gs > 0.0) {
    const double k = std::sqrt(gs / gm) - 1.0;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) W[r * cols + c] += k * common[c];
  }
  if (spread > 0.0) {
    const double g = target / spread;
    for (auto& v : W.data()) v *= g;
    for (auto& v : b.data()) v *= g;
  }
}

void train_sgd(const ModelSpec& spec, ParameterStore& params, const BlobDataset& data,
               RngStream& rng, const ToyModelOptions& options, ToyModel& out) {
  std::vector<std::size_t> order(data.inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  out.train_accuracy = classification_accuracy(spec, params, data);
  while (out.train_accuracy < options.target_accuracy && out.epochs < options.max_epochs) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += kBatch) {
      const std::size_t end = std::min(order.size(), start + kBatch);
      ParameterStore grad_sum;
      grad_sum.layers.resize(params.layers.size());
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        auto fwd = forward_network(spec, params, data.inputs[idx], {.with_tape = true});
        Tensor upstream = softmax(fwd.output);
        upstream[data.labels[idx]] -= 1.0;
        const auto grads = fwd.tape->backward(upstream);
        for (const auto& pn : fwd.param_nodes) {
          if (pn.name == "mean" || pn.name == "var") continue;
          const auto& g = grads[pn.node];
          if (!g) continue;
          Tensor& acc = grad_sum.layers[pn.layer].get(pn.name);
          if (acc.size() == 0) {
            acc = *g;
          } else {
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += (*g)[k];
          }
        }
      }
      const double step = kLearningRate / static_cast<double>(end - start);
      for (std::size_t li = 0; li < params.layers.size(); ++li)
        for (auto name : param_names(spec.layers[li].kind)) {
          if (name == "mean" || name == "var") continue;
          const Tensor& g = grad_sum.layers[li].get(name);
          if (g.size() == 0) continue;
          Tensor& p = params.layers[li].get(name);
          for (std::size_t k = 0; k < p.size(); ++k) p[k] -= step * g[k];
        }
    }
    ++out.epochs;
    out.train_accuracy = classification_accuracy(spec, params, data);
  }
}

}  // namespace

std::string to_string(ToyArch arch) {
  switch (arch) {
    case ToyArch::mlp:
      return "mlp";
    case ToyArch::cnn:
      return "cnn";
    case ToyArch::resnet_mini:
      return "resnet-mini";
  }
  return "unknown";
}

ToyArch toy_arch_from_string(const std::string& name) {
  for (auto a : {ToyArch::mlp, ToyArch::cnn, ToyArch::resnet_mini})
    if (to_string(a) == name) return a;
  throw ValueError("unknown architecture '" + name + "' (mlp, cnn, resnet-mini)");
}

BlobDataset make_blob_dataset(const Shape& input_shape, std::size_t num_classes,
                              std::size_t per_class, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<Tensor> centres;
  for (std::size_t k = 0; k < num_classes; ++k) {
    Tensor c(input_shape);
    for (auto& v : c.data()) v = rng.normal();
    centres.push_back(std::move(c));
  }
  BlobDataset data;
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t k = 0; k < num_classes; ++k) {
      Tensor x = centres[k];
      for (auto& v : x.data()) v += kBlobNoise * rng.normal();
      data.inputs.push_back(std::move(x));
      data.labels.push_back(k);
    }
  return data;
}

double classification_accuracy(const ModelSpec& spec, const ParameterStore& params,
                               const BlobDataset& data) {
  if (data.inputs.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.inputs.size(); ++i) {
    const Tensor y = forward_network(spec, params, data.inputs[i]).output;
    const auto vals = y.data();
    const auto best = static_cast<std::size_t>(std::max_element(vals.begin(), vals.end()) - vals.begin());
    correct += best == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.inputs.size());
}

ModelSpec toy_model_spec(ToyArch arch, std::size_t num_classes, std::size_t image_size) {
  if (num_classes < 2) throw ValueError("a classifier needs at least 2 classes");
  const std::size_t s = image_size;
  ModelSpec spec;
  spec.num_classes = num_classes;
  auto& L = spec.layers;
  switch (arch) {
    case ToyArch::mlp:
      spec.input_shape = {kMlpIn};
      L = {LayerSpec::linear(kMlpIn, kMlpHidden), LayerSpec::of(LayerKind::relu),
           LayerSpec::linear(kMlpHidden, kMlpHidden), LayerSpec::of(LayerKind::relu),
           LayerSpec::linear(kMlpHidden, num_classes)};
      break;
    case ToyArch::cnn: {
      if (s < 4 || s % 4 != 0) throw ValueError("image size must be a positive multiple of 4");
      constexpr std::size_t C1 = 16, C2 = 32;
      spec.input_shape = {3, s, s};
      L = {LayerSpec::conv2d(3, C1, 3, 1, 1),        LayerSpec::batchnorm(C1),
           LayerSpec::of(LayerKind::relu),          LayerSpec::maxpool(2, 2),
           LayerSpec::conv2d(C1, C2, 3, 1, 1),       LayerSpec::of(LayerKind::relu),
           LayerSpec::avgpool(2, 2),                LayerSpec::of(LayerKind::flatten),
           LayerSpec::linear(C2 * (s / 4) * (s / 4), num_classes)};
      break; }
    case ToyArch::resnet_mini:
      if (s < 2 || s % 2 != 0) throw ValueError("image size must be a positive multiple of 2");
      spec.input_shape = {3, s, s};
      L = {LayerSpec::conv2d(3, 8, 3, 1, 1),
           LayerSpec::of(LayerKind::relu),
           LayerSpec::of(LayerKind::residual_begin),
           LayerSpec::conv2d(8, 8, 3, 1, 1),
           LayerSpec::batchnorm(8),
           LayerSpec::of(LayerKind::relu),
           LayerSpec::conv2d(8, 8, 3, 1, 1),
           LayerSpec::of(LayerKind::residual_add),
           LayerSpec::of(LayerKind::relu),
           LayerSpec::maxpool(2, 2),
           LayerSpec::of(LayerKind::flatten),
           LayerSpec::linear(8 * (s / 2) * (s / 2), num_classes)};
      break;
  }
  L.push_back(LayerSpec::of(LayerKind::softmax));
  propagate_shapes(spec);
  return spec;
}

ToyModel make_toy_model(ToyArch arch, std::size_t num_classes, std::uint64_t seed,
                        const ToyModelOptions& options) {
  ToyModel m;
  m.spec = toy_model_spec(arch, num_classes, options.image_size);
  RngStream rng(seed);
  init_params(m.spec, m.params, rng);
  m.few_classes_warning = num_classes < 20;
  if (m.few_classes_warning)
    warn("model has " + std::to_string(num_classes) + " outputs; fewer than 20 bias the statistics");

  const bool has_bn = std::any_of(m.spec.layers.begin(), m.spec.layers.end(),
                                  [](const LayerSpec& l) { return l.kind == LayerKind::batchnorm; });
  if (options.trained || has_bn) {
    const BlobDataset data =
        make_blob_dataset(m.spec.input_shape, num_classes, kBlobPerClass, splitmix64(seed ^ 0xb10b));
    if (has_bn) calibrate_batchnorm(m.spec, m.params, data);
    if (options.trained) {
      train_sgd(m.spec, m.params, data, rng, options, m);
      m.accuracy_warning = m.train_accuracy < options.target_accuracy;
      if (m.accuracy_warning)
        warn("training stopped at " + std::to_string(m.train_accuracy * 100.0) +
             "% accuracy after " + std::to_string(m.epochs) + " epochs");
    }
  }
  if (options.logit_scale > 0.0) calibrate_output_layer(m.spec, m.params, options.logit_scale, seed ^ 0x5ca1e);
  // Match the on-disk float32 form, so vectors generated in memory survive a save/load.
  for (auto& layer : m.params.layers)
    for (auto name : {"weight", "bias", "mean", "var", "scale", "shift"})
      for (auto& v : layer.get(name).data()) v = static_cast<double>(static_cast<float>(v));
  validate_params(m.spec, m.params);
  return m;
}

}  // namespace xbt
