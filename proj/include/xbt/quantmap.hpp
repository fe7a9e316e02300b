#pragma once

#include <cstdint>
#include <vector>

#include "xbt/netgraph.hpp"
#include "xbt/tensor.hpp"

namespace xbt {

inline constexpr int kMaxLevel = 127;
inline constexpr int kCellsPerWeight = 8;

/// Signed 8-bit symmetric quantization of one tensor: value = level * scale.
struct QuantizedTensor {
  Shape shape;
  std::vector<std::int8_t> levels;  // each in [-127, 127]
  double scale = 1.0;

  bool operator==(const QuantizedTensor&) const = default;
};

enum class CellEncoding { bitwise, levelwise };

/// Cell contents of a crossbar holding one weight tensor.
///
/// bitwise: 8 binary cells per weight ordered [sign, m6 .. m0] (sign-magnitude,
/// magnitude MSB first). levelwise: 2 cells per weight, [sign bit, magnitude 0..127].
struct CrossbarImage {
  CellEncoding encoding = CellEncoding::bitwise;
  Shape shape;
  std::vector<std::uint8_t> cells;
  double scale = 1.0;

  std::size_t num_weights() const noexcept { return shape_numel(shape); }
  bool operator==(const CrossbarImage&) const = default;
};

/// scale = max|W| / 127, levels = round-half-away(W / scale) clamped to +-127.
/// An all-zero tensor gets scale 1. Throws ValueError on non-finite input.
QuantizedTensor quantize_int8(const Tensor& W);
Tensor dequantize(const QuantizedTensor& q);

CrossbarImage encode_bitwise(const QuantizedTensor& q);
/// Throws ValueError for a cell outside {0,1}. A set sign bit with zero magnitude is level 0.
QuantizedTensor decode_bitwise(const CrossbarImage& img);

CrossbarImage encode_levelwise(const QuantizedTensor& q);
QuantizedTensor decode_levelwise(const CrossbarImage& img);

CrossbarImage encode(const QuantizedTensor& q, CellEncoding encoding);
QuantizedTensor decode(const CrossbarImage& img);

/// Weight tensors of a model in quantized form; index i belongs to layer i and
/// is empty for layers without a crossbar-mapped weight.
struct QuantizedModel {
  std::vector<std::optional<QuantizedTensor>> weights;
};

QuantizedModel quantize_model(const ModelSpec& spec, const ParameterStore& params);

/// Copy of `params` with every weight replaced by its quantized value.
/// Biases and batch-norm constants are left untouched.
ParameterStore dequantize_model(const ParameterStore& params, const QuantizedModel& q);

/// Shorthand for dequantize_model(params, quantize_model(spec, params)).
ParameterStore quantized_reference(const ModelSpec& spec, const ParameterStore& params);

}  // namespace xbt
