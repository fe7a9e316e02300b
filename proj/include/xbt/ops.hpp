#pragma once

#include <cstddef>
#include <functional>

#include "xbt/tensor.hpp"

// Forward operators for the supported layer set and their vector-Jacobian
// products. Image tensors are [C,H,W]; dense vectors are [D].

namespace xbt {

/// y = W x + b, with W [out,in], x [in], b [out].
Tensor linear_forward(const Tensor& x, const Tensor& W, const Tensor& b);

struct LinearGrads {
  Tensor x, W, b;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& W, const Tensor& grad_out);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation of x [C,H,W] with kernels K [F,C,kh,kw] plus per-filter bias b [F].
Tensor conv2d_forward(const Tensor& x, const Tensor& K, const Tensor& b, Conv2dParams p);

struct Conv2dGrads {
  Tensor x, K, b;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& K, const Tensor& grad_out,
                            Conv2dParams p);

Tensor relu_forward(const Tensor& x);
/// Gradient is zero where x <= 0.
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

/// Frozen-statistics normalization: (x - mean) / sqrt(var + eps) * scale + shift.
/// Statistics are per channel (dim 0) for [C,H,W] inputs and per feature for [D].
struct BatchNormParams {
  const Tensor& mean;
  const Tensor& var;
  const Tensor& scale;
  const Tensor& shift;
  double eps;
};
Tensor batchnorm_inference_forward(const Tensor& x, const BatchNormParams& p);

struct BatchNormGrads {
  Tensor x, scale, shift;
};
BatchNormGrads batchnorm_inference_backward(const Tensor& x, const BatchNormParams& p,
                                            const Tensor& grad_out);

struct PoolParams {
  std::size_t kernel = 2;
  std::size_t stride = 2;
};
Tensor maxpool2d_forward(const Tensor& x, PoolParams p);
/// Ties route the gradient to the first maximal element in row-major window order.
Tensor maxpool2d_backward(const Tensor& x, PoolParams p, const Tensor& grad_out);
Tensor avgpool2d_forward(const Tensor& x, PoolParams p);
Tensor avgpool2d_backward(const Tensor& x, PoolParams p, const Tensor& grad_out);

Tensor residual_add(const Tensor& a, const Tensor& b);

/// Numerically stable softmax over a flat vector.
Tensor softmax(const Tensor& x);
/// Vector-Jacobian product of softmax given its output y.
Tensor softmax_backward(const Tensor& y, const Tensor& grad_out);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double h);

/// Output spatial extent of a sliding window; throws ShapeError when it does not fit.
std::size_t window_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                              std::size_t padding);

}  // namespace xbt
