#include "xbt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xbt/error.hpp"
#include "xbt/ops.hpp"

namespace xbt {
namespace {

std::size_t pick(RngStream& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

ModelSpec random_spec(std::size_t variant, RngStream& rng) {
  ModelSpec s;
  s.num_classes = pick(rng, 2, 5);
  auto relu = LayerSpec::of(LayerKind::relu);
  auto flat = LayerSpec::of(LayerKind::flatten);
  switch (variant % 4) {
    case 0: {
      const std::size_t d = pick(rng, 3, 8), h = pick(rng, 3, 8);
      s.input_shape = {d};
      s.layers = {LayerSpec::linear(d, h), relu, LayerSpec::linear(h, s.num_classes),
                  LayerSpec::of(LayerKind::softmax)};
      break;
    }
    case 1: {
      const std::size_t c = pick(rng, 1, 3), k = pick(rng, 2, 4), hw = 2 * pick(rng, 2, 3);
      s.input_shape = {c, hw, hw};
      s.layers = {LayerSpec::conv2d(c, k, 3, 1, 1), LayerSpec::batchnorm(k), relu,
                  LayerSpec::maxpool(2, 2), flat,
                  LayerSpec::linear(k * (hw / 2) * (hw / 2), s.num_classes)};
      break;
    }
    case 2: {
      const std::size_t c = pick(rng, 1, 2), k = pick(rng, 2, 3), hw = 4;
      s.input_shape = {c, hw, hw};
      s.layers = {LayerSpec::conv2d(c, k, 3, 1, 1),
                  relu,
                  LayerSpec::of(LayerKind::residual_begin),
                  LayerSpec::conv2d(k, k, 3, 1, 1),
                  LayerSpec::batchnorm(k),
                  relu,
                  LayerSpec::conv2d(k, k, 3, 1, 1),
                  LayerSpec::of(LayerKind::residual_add),
                  relu,
                  LayerSpec::avgpool(2, 2),
                  flat,
                  LayerSpec::linear(k * 4, s.num_classes),
                  LayerSpec::of(LayerKind::softmax)};
      break;
    }
    default: {
      const std::size_t c = pick(rng, 1, 3), k = pick(rng, 2, 3), hw = pick(rng, 5, 7);
      const std::size_t kernel = pick(rng, 1, 3), padding = pick(rng, 0, 1);
      const std::size_t conv_out = window_out_extent(hw, kernel, 2, padding);
      const std::size_t pooled = conv_out >= 2 ? conv_out - 1 : 1;
      s.input_shape = {c, hw, hw};
      s.layers = {LayerSpec::conv2d(c, k, kernel, 2, padding), relu};
      if (conv_out >= 2) s.layers.push_back(LayerSpec::maxpool(2, 1));
      s.layers.push_back(flat);
      s.layers.push_back(LayerSpec::linear(k * pooled * pooled, s.num_classes));
      break;
    }
  }
  propagate_shapes(s);
  return s;
}

ParameterStore random_params(const ModelSpec& spec, RngStream& rng) {
  ParameterStore ps;
  ps.layers.resize(spec.layers.size());
  for (std::size_t li = 0; li < spec.layers.size(); ++li)
    for (const auto& [name, shape] : param_shapes(spec.layers[li])) {
      Tensor t(shape);
      for (auto& v : t.data()) {
        if (name == "weight") v = rng.normal() / std::sqrt(static_cast<double>(shape_numel(shape) / shape[0]));
        else if (name == "var") v = 0.5 + rng.uniform();
        else if (name == "scale") v = 1.0 + 0.2 * rng.normal();
        else if (name == "mean") v = 0.3 * rng.normal();
        else v = 0.2 * rng.normal();
      }
      ps.layers[li].get(name) = std::move(t);
    }
  return ps;
}

double probe(const GradCheckCase& c, const Tensor& x) {
  const Tensor y =
      forward_network(c.spec, c.params, x, {.with_tape = false, .stop_before_softmax = !c.include_softmax})
          .output;
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += c.upstream[i] * y[i];
  return s;
}

}  // namespace

double kink_margin(const GradCheckCase& c) {
  auto fwd = forward_network(c.spec, c.params, c.input, {.with_tape = true, .stop_before_softmax = !c.include_softmax});
  const GradTape& tape = *fwd.tape;
  std::vector<const LayerSpec*> pools;
  for (const auto& l : c.spec.layers)
    if (l.kind == LayerKind::maxpool) pools.push_back(&l);

  double margin = std::numeric_limits<double>::infinity();
  std::size_t pool_index = 0;
  for (std::size_t node = 0; node < tape.size(); ++node) {
    const std::string& op = tape.op(node);
    if (op == "relu") {
      for (double v : tape.value(tape.inputs(node).at(0)).data()) margin = std::min(margin, std::abs(v));
    } else if (op == "maxpool") {
      const LayerSpec& l = *pools.at(pool_index++);
      const GradTape::NodeId src = tape.inputs(node).at(0);
      const Tensor& in = tape.value(src);
      // Ties between rectified zeros carry no gradient on either side.
      const bool after_relu = tape.op(src) == "relu";
      const std::size_t C = in.dim(0), H = in.dim(1), W = in.dim(2);
      const std::size_t oh = window_out_extent(H, l.kernel, l.stride, 0);
      const std::size_t ow = window_out_extent(W, l.kernel, l.stride, 0);
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j) {
            double best = -std::numeric_limits<double>::infinity(), second = best;
            for (std::size_t a = 0; a < l.kernel; ++a)
              for (std::size_t b = 0; b < l.kernel; ++b) {
                const double v = in[(ch * H + i * l.stride + a) * W + j * l.stride + b];
                if (v > best) {
                  second = best;
                  best = v;
                } else if (v > second) {
                  second = v;
                }
              }
            if (after_relu && best == 0.0) continue;
            margin = std::min(margin, best - second);
          }
    }
  }
  return margin;
}

GradCheckCase random_gradcheck_case(std::size_t i, RngStream& rng, double margin) {
  GradCheckCase c;
  c.spec = random_spec(i, rng);
  c.include_softmax = c.spec.layers.back().kind == LayerKind::softmax;
  c.upstream = Tensor({c.spec.num_classes});
  for (auto& v : c.upstream.data()) v = rng.normal();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    // Parameters are redrawn too: padded positions feed bias-only values to a ReLU.
    c.params = random_params(c.spec, rng);
    c.input = Tensor(c.spec.input_shape);
    for (auto& v : c.input.data()) v = rng.normal();
    if (kink_margin(c) >= margin) return c;
  }
  throw ValueError("could not draw a gradient-check input away from kinks");
}

GradCheckResult check_input_gradient(const GradCheckCase& c, double h) {
  auto fwd = forward_network(c.spec, c.params, c.input, {.with_tape = true, .stop_before_softmax = !c.include_softmax});
  const Tensor rev = backward_to_input(*fwd.tape, c.upstream);
  const Tensor fd = finite_difference_gradient([&](const Tensor& x) { return probe(c, x); }, c.input, h);
  double diff = 0.0, na = 0.0, nb = 0.0, elem = 0.0;
  for (std::size_t i = 0; i < rev.size(); ++i) {
    const double d = std::abs(rev[i] - fd[i]);
    elem = std::max(elem, d / std::max({1.0, std::abs(rev[i]), std::abs(fd[i])}));
    diff += d * d;
    na += rev[i] * rev[i];
    nb += fd[i] * fd[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return {std::sqrt(diff) / denom, elem, rev.size()};
}

bool GradCheckSummary::all_kinds_covered() const {
  for (auto k : {LayerKind::linear, LayerKind::conv2d, LayerKind::relu, LayerKind::batchnorm,
                 LayerKind::maxpool, LayerKind::avgpool, LayerKind::flatten, LayerKind::residual_begin,
                 LayerKind::residual_add, LayerKind::softmax}) {
    auto it = kind_counts.find(std::string(to_string(k)));
    if (it == kind_counts.end() || it->second == 0) return false;
  }
  return true;
}

GradCheckSummary run_gradcheck(std::size_t cases, std::uint64_t seed, double tolerance) {
  GradCheckSummary s;
  s.tolerance = tolerance;
  RngStream rng(seed);
  for (std::size_t i = 0; i < cases; ++i) {
    const GradCheckCase c = random_gradcheck_case(i, rng);
    const GradCheckResult r = check_input_gradient(c);
    ++s.cases;
    s.passed += r.worst() <= tolerance;
    s.worst_rel_error = std::max(s.worst_rel_error, r.worst());
    std::vector<std::string> kinds;
    for (const auto& l : c.spec.layers) kinds.emplace_back(to_string(l.kind));
    std::sort(kinds.begin(), kinds.end());
    kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
    for (const auto& k : kinds) ++s.kind_counts[k];
  }
  return s;
}

}  // namespace xbt
