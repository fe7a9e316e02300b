#include "xbt/oneshot.hpp"

#include <cmath>

#include "xbt/error.hpp"
#include "xbt/log.hpp"

namespace xbt {

OutputStats output_stats(const Tensor& y) {
  const std::size_t n = y.size();
  if (n < 2) throw ValueError("output statistics need at least 2 outputs, got " + std::to_string(n));
  double sum = 0.0;
  for (double v : y.data()) sum += v;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : y.data()) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  return {mean, std::max(sd, kMinStddev), n};
}

double kl_divergence(double mean, double stddev) {
  return -std::log(stddev) + (stddev * stddev + mean * mean) / 2.0 - 0.5;
}

double kl_divergence(const OutputStats& stats) { return kl_divergence(stats.mean, stats.stddev); }

double kl_general(double mean_hat, double sd_hat, double mean, double sd) {
  if (!(sd_hat > 0.0) || !(sd > 0.0)) throw ValueError("standard deviations must be positive");
  const double dm = mean_hat - mean;
  // log(sd) - log(sd_hat) rather than log(sd / sd_hat): bit-identical to kl_divergence at (0, 1)
  return std::log(sd) - std::log(sd_hat) + (sd_hat * sd_hat + dm * dm) / (2.0 * sd * sd) - 0.5;
}

std::string to_string(GroundTruthMode mode) {
  return mode == GroundTruthMode::standardized_self ? "standardized-self" : "gaussian-sample";
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::moment:
      return "moment";
    case LossKind::pointwise_kl:
      return "pointwise-kl";
    case LossKind::mse:
      return "mse";
  }
  return "unknown";
}

GroundTruthMode ground_truth_mode_from_string(const std::string& name) {
  if (name == "standardized-self") return GroundTruthMode::standardized_self;
  if (name == "gaussian-sample") return GroundTruthMode::gaussian_sample;
  throw ValueError("unknown ground-truth mode '" + name + "'");
}

LossKind loss_kind_from_string(const std::string& name) {
  for (auto k : {LossKind::moment, LossKind::pointwise_kl, LossKind::mse})
    if (to_string(k) == name) return k;
  throw ValueError("unknown loss '" + name + "'");
}

Tensor ground_truth(const Tensor& y) {
  const OutputStats s = output_stats(y);
  if (s.stddev <= kMinStddev)
    throw ValueError("cannot standardize an output with zero spread");
  Tensor t(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) t[i] = (y[i] - s.mean) / s.stddev;
  return t;
}

Tensor ground_truth_sample(std::size_t n, RngStream& rng) {
  Tensor t({n});
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

LossValue loss_pointwise_kl(const Tensor& y, const Tensor& target) {
  if (y.size() != target.size()) throw ShapeError("pointwise KL: length mismatch");
  const double n = static_cast<double>(y.size());
  LossValue out{0.0, Tensor(y.shape())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0) || !(target[i] > 0.0))
      throw ValueError("pointwise KL loss needs strictly positive outputs and targets");
    const double log_ratio = std::log(y[i] / target[i]);
    out.value += y[i] * log_ratio;
    out.grad[i] = (log_ratio + 1.0) / n;
  }
  out.value /= n;
  return out;
}

LossValue loss_moment(const Tensor& y) {
  const OutputStats s = output_stats(y);
  const double n = static_cast<double>(y.size());
  LossValue out{s.mean * s.mean + (1.0 - s.stddev) * (1.0 - s.stddev), Tensor(y.shape())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double dmean = 1.0 / n;
    const double dsd = (y[i] - s.mean) / (n * s.stddev);
    out.grad[i] = 2.0 * s.mean * dmean - 2.0 * (1.0 - s.stddev) * dsd;
  }
  return out;
}

LossValue loss_mse(const Tensor& y, const Tensor& target) {
  if (y.size() != target.size()) throw ShapeError("mse: length mismatch");
  const double n = static_cast<double>(y.size());
  LossValue out{0.0, Tensor(y.shape())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - target[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d / n;
  }
  out.value /= n;
  return out;
}

void GenConfig::validate() const {
  if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) throw ValueError("alpha0 must be positive");
  if (iterations < 1) throw ValueError("iterations must be >= 1");
  if (decay_every < 1) throw ValueError("decay interval must be >= 1");
  if (init == InitMode::file && init_file.empty())
    throw ValueError("file initialization needs an init file");
}

double learning_rate(const GenConfig& config, std::size_t t) {
  return config.alpha0 * std::pow(10.0, -static_cast<double>(t / config.decay_every));
}

Baseline measure_baseline(const ModelSpec& spec, const ParameterStore& params,
                          const Tensor& input) {
  const auto fwd = forward_network(spec, params, input, {.with_tape = false});
  const OutputStats s = output_stats(fwd.output);
  return {s.mean, s.stddev, kl_divergence(s)};
}

TestVector generate_test_vector(const ModelSpec& spec, const ParameterStore& reference,
                                const GenConfig& config, std::optional<Tensor> init) {
  config.validate();
  if (spec.num_classes < 20)
    warn("model has " + std::to_string(spec.num_classes) +
         " output classes; mean and deviation estimates are biased below 20");

  RngStream rng(config.seed);
  TestVector tv;
  tv.config = config;
  Tensor x;
  if (init) {
    if (init->shape() != spec.input_shape)
      throw ShapeError("initial input " + shape_str(init->shape()) + " does not match model input " +
                       shape_str(spec.input_shape));
    x = std::move(*init);
    tv.provenance = config.init_file.empty() ? "file-init" : "file-init:" + config.init_file;
  } else if (config.init == InitMode::file) {
    x = load_init_file(config.init_file, spec.input_shape);
    tv.provenance = "file-init:" + config.init_file;
  } else {
    x = Tensor(spec.input_shape);
    for (auto& v : x.data()) v = rng.normal();
    tv.provenance = "gaussian-init";
  }

  std::optional<Tensor> sampled_target;
  if (config.ground_truth == GroundTruthMode::gaussian_sample)
    sampled_target = ground_truth_sample(spec.num_classes, rng);

  tv.loss_history.reserve(config.iterations);
  for (std::size_t t = 1; t <= config.iterations; ++t) {
    auto fwd = forward_network(spec, reference, x, {.with_tape = true});
    const Tensor& y = fwd.output;
    LossValue loss;
    switch (config.loss) {
      case LossKind::moment:
        loss = loss_moment(y);
        break;
      case LossKind::mse:
        loss = loss_mse(y, sampled_target ? *sampled_target : ground_truth(y));
        break;
      case LossKind::pointwise_kl:
        loss = loss_pointwise_kl(y, sampled_target ? *sampled_target : ground_truth(y));
        break;
    }
    if (!std::isfinite(loss.value))
      throw ValueError("non-finite loss at iteration " + std::to_string(t));
    tv.loss_history.push_back(loss.value);

    const Tensor grad = backward_to_input(*fwd.tape, loss.grad);
    const double lr = learning_rate(config, t);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * grad[i];
    if (!x.all_finite()) throw ValueError("test vector diverged at iteration " + std::to_string(t));
  }

  for (auto& v : x.data()) v = static_cast<double>(static_cast<float>(v));
  tv.input = std::move(x);
  tv.baseline = measure_baseline(spec, reference, tv.input);
  tv.converged = tv.baseline.dkl0 < config.target_dkl;
  if (!tv.converged)
    warn("test vector did not reach the target divergence: D0 = " +
         std::to_string(tv.baseline.dkl0));
  return tv;
}

DetectionResult classify(const OutputStats& stats, double threshold) {
  if (!(threshold > 0.0)) throw ValueError("detection threshold must be positive");
  const double d = kl_divergence(stats);
  return {stats, d, threshold, d >= threshold};
}

DetectionResult detect(const ModelSpec& spec, const ParameterStore& params_under_test,
                       const TestVector& tv, double threshold) {
  if (!(threshold > 0.0)) throw ValueError("detection threshold must be positive");
  const auto fwd = forward_network(spec, params_under_test, tv.input, {.with_tape = false});
  return classify(output_stats(fwd.output), threshold);
}

}  // namespace xbt
