#include "xbt/quantmap.hpp"

#include <algorithm>
#include <cmath>

#include "xbt/error.hpp"

namespace xbt {

QuantizedTensor quantize_int8(const Tensor& W) {
  if (!W.all_finite()) throw ValueError("cannot quantize a tensor with non-finite values");
  double max_abs = 0.0;
  for (double v : W.data()) max_abs = std::max(max_abs, std::abs(v));

  QuantizedTensor q;
  q.shape = W.shape();
  q.levels.resize(W.size());
  if (max_abs == 0.0) {
    q.scale = 1.0;
    return q;
  }
  q.scale = max_abs / kMaxLevel;
  for (std::size_t i = 0; i < W.size(); ++i) {
    // std::round rounds halfway cases away from zero.
    const double r = std::round(W[i] * kMaxLevel / max_abs);
    q.levels[i] = static_cast<std::int8_t>(std::clamp(r, -double(kMaxLevel), double(kMaxLevel)));
  }
  return q;
}

Tensor dequantize(const QuantizedTensor& q) {
  std::vector<double> values(q.levels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = q.levels[i] * q.scale;
  return Tensor(q.shape, std::move(values));
}

CrossbarImage encode_bitwise(const QuantizedTensor& q) {
  CrossbarImage img{CellEncoding::bitwise, q.shape, {}, q.scale};
  img.cells.reserve(q.levels.size() * kCellsPerWeight);
  for (std::int8_t level : q.levels) {
    if (level < -kMaxLevel) throw ValueError("level -128 is not representable");
    const int magnitude = std::abs(int{level});
    img.cells.push_back(level < 0 ? 1 : 0);
    for (int bit = kCellsPerWeight - 2; bit >= 0; --bit)
      img.cells.push_back(static_cast<std::uint8_t>((magnitude >> bit) & 1));
  }
  return img;
}

QuantizedTensor decode_bitwise(const CrossbarImage& img) {
  if (img.encoding != CellEncoding::bitwise) throw ValueError("image is not bit-wise encoded");
  if (img.cells.size() != img.num_weights() * kCellsPerWeight)
    throw ShapeError("bit-wise image needs 8 cells per weight");
  QuantizedTensor q{img.shape, std::vector<std::int8_t>(img.num_weights()), img.scale};
  for (std::size_t w = 0; w < q.levels.size(); ++w) {
    const std::uint8_t* c = img.cells.data() + w * kCellsPerWeight;
    int magnitude = 0;
    for (int k = 0; k < kCellsPerWeight; ++k)
      if (c[k] > 1) throw ValueError("bit-wise cell holds " + std::to_string(c[k]));
    for (int k = 1; k < kCellsPerWeight; ++k) magnitude = (magnitude << 1) | c[k];
    q.levels[w] = static_cast<std::int8_t>(c[0] ? -magnitude : magnitude);
  }
  return q;
}

CrossbarImage encode_levelwise(const QuantizedTensor& q) {
  CrossbarImage img{CellEncoding::levelwise, q.shape, {}, q.scale};
  img.cells.reserve(q.levels.size() * 2);
  for (std::int8_t level : q.levels) {
    if (level < -kMaxLevel) throw ValueError("level -128 is not representable");
    img.cells.push_back(level < 0 ? 1 : 0);
    img.cells.push_back(static_cast<std::uint8_t>(std::abs(int{level})));
  }
  return img;
}

QuantizedTensor decode_levelwise(const CrossbarImage& img) {
  if (img.encoding != CellEncoding::levelwise) throw ValueError("image is not level-wise encoded");
  if (img.cells.size() != img.num_weights() * 2)
    throw ShapeError("level-wise image needs 2 cells per weight");
  QuantizedTensor q{img.shape, std::vector<std::int8_t>(img.num_weights()), img.scale};
  for (std::size_t w = 0; w < q.levels.size(); ++w) {
    const std::uint8_t sign = img.cells[2 * w];
    const std::uint8_t magnitude = img.cells[2 * w + 1];
    if (sign > 1) throw ValueError("level-wise sign cell holds " + std::to_string(sign));
    if (magnitude > kMaxLevel)
      throw ValueError("level-wise magnitude cell holds " + std::to_string(magnitude));
    q.levels[w] = static_cast<std::int8_t>(sign ? -int{magnitude} : int{magnitude});
  }
  return q;
}

CrossbarImage encode(const QuantizedTensor& q, CellEncoding encoding) {
  return encoding == CellEncoding::bitwise ? encode_bitwise(q) : encode_levelwise(q);
}

QuantizedTensor decode(const CrossbarImage& img) {
  return img.encoding == CellEncoding::bitwise ? decode_bitwise(img) : decode_levelwise(img);
}

QuantizedModel quantize_model(const ModelSpec& spec, const ParameterStore& params) {
  validate_params(spec, params);
  QuantizedModel q;
  q.weights.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (is_weight_layer(spec.layers[i].kind)) q.weights[i] = quantize_int8(params.layers[i].weight);
  return q;
}

ParameterStore dequantize_model(const ParameterStore& params, const QuantizedModel& q) {
  if (q.weights.size() != params.layers.size())
    throw ShapeError("quantized model does not match the parameter store");
  ParameterStore out = params;
  for (std::size_t i = 0; i < q.weights.size(); ++i)
    if (q.weights[i]) out.layers[i].weight = dequantize(*q.weights[i]);
  return out;
}

ParameterStore quantized_reference(const ModelSpec& spec, const ParameterStore& params) {
  return dequantize_model(params, quantize_model(spec, params));
}

}  // namespace xbt
