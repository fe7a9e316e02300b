#include "xbt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xbt/error.hpp"

namespace xbt {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_image(const Tensor& x, const char* what) {
  if (x.rank() != 3)
    throw ShapeError(std::string(what) + ": expected [C,H,W] input, got " + shape_str(x.shape()));
}

// Per-element channel index for the batch-norm broadcast.
std::size_t channel_block(const Tensor& x, std::size_t channels, const char* what) {
  if (x.rank() == 0 || x.dim(0) != channels)
    throw ShapeError(std::string(what) + ": input " + shape_str(x.shape()) + " does not match " +
                     std::to_string(channels) + " channels");
  return x.size() / channels;
}

}  // namespace

std::size_t window_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                              std::size_t padding) {
  if (stride == 0) throw ValueError("stride must be positive");
  if (kernel == 0 || kernel > in + 2 * padding)
    throw ShapeError("window of " + std::to_string(kernel) + " does not fit extent " +
                     std::to_string(in) + " with padding " + std::to_string(padding));
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor linear_forward(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (W.rank() != 2 || x.rank() != 1 || b.rank() != 1 || W.dim(1) != x.dim(0) ||
      W.dim(0) != b.dim(0))
    throw ShapeError("linear: W " + shape_str(W.shape()) + ", x " + shape_str(x.shape()) +
                     ", b " + shape_str(b.shape()) + " do not conform");
  const std::size_t out = W.dim(0), in = W.dim(1);
  Tensor y({out});
  for (std::size_t i = 0; i < out; ++i) {
    double acc = b[i];
    const double* row = W.data().data() + i * in;
    for (std::size_t j = 0; j < in; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& W, const Tensor& grad_out) {
  const std::size_t out = W.dim(0), in = W.dim(1);
  if (grad_out.size() != out || x.size() != in) throw ShapeError("linear_backward: shape mismatch");
  LinearGrads g{Tensor({in}), Tensor(W.shape()), grad_out.reshaped({out})};
  for (std::size_t i = 0; i < out; ++i) {
    const double go = grad_out[i];
    if (go == 0.0) continue;
    const double* row = W.data().data() + i * in;
    double* grow = g.W.data().data() + i * in;
    for (std::size_t j = 0; j < in; ++j) {
      g.x[j] += row[j] * go;
      grow[j] = x[j] * go;
    }
  }
  return g;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& K, const Tensor& b, Conv2dParams p) {
  require_image(x, "conv2d");
  if (K.rank() != 4 || K.dim(1) != x.dim(0) || b.rank() != 1 || b.dim(0) != K.dim(0))
    throw ShapeError("conv2d: x " + shape_str(x.shape()) + ", K " + shape_str(K.shape()) +
                     ", b " + shape_str(b.shape()) + " do not conform");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t F = K.dim(0), kh = K.dim(2), kw = K.dim(3);
  const std::size_t Ho = window_out_extent(H, kh, p.stride, p.padding);
  const std::size_t Wo = window_out_extent(W, kw, p.stride, p.padding);
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);
  Tensor y({F, Ho, Wo});
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double acc = b[f];
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += K[((f * C + c) * kh + ky) * kw + kx] *
                     x[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
            }
          }
        }
        y[(f * Ho + oy) * Wo + ox] = acc;
      }
    }
  }
  return y;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& K, const Tensor& grad_out,
                            Conv2dParams p) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t F = K.dim(0), kh = K.dim(2), kw = K.dim(3);
  const std::size_t Ho = window_out_extent(H, kh, p.stride, p.padding);
  const std::size_t Wo = window_out_extent(W, kw, p.stride, p.padding);
  if (grad_out.size() != F * Ho * Wo) throw ShapeError("conv2d_backward: shape mismatch");
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);
  Conv2dGrads g{Tensor(x.shape()), Tensor(K.shape()), Tensor({F})};
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const double go = grad_out[(f * Ho + oy) * Wo + ox];
        g.b[f] += go;
        if (go == 0.0) continue;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t xi =
                  (c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix);
              const std::size_t ki = ((f * C + c) * kh + ky) * kw + kx;
              g.x[xi] += K[ki] * go;
              g.K[ki] += x[xi] * go;
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  if (x.size() != grad_out.size()) throw ShapeError("relu_backward: shape mismatch");
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

Tensor batchnorm_inference_forward(const Tensor& x, const BatchNormParams& p) {
  const std::size_t C = p.mean.size();
  if (p.var.size() != C || p.scale.size() != C || p.shift.size() != C)
    throw ShapeError("batchnorm: statistics have differing lengths");
  const std::size_t block = channel_block(x, C, "batchnorm");
  Tensor y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(p.var[c] + p.eps);
    for (std::size_t k = 0; k < block; ++k) {
      const std::size_t i = c * block + k;
      y[i] = (x[i] - p.mean[c]) * inv * p.scale[c] + p.shift[c];
    }
  }
  return y;
}

BatchNormGrads batchnorm_inference_backward(const Tensor& x, const BatchNormParams& p,
                                            const Tensor& grad_out) {
  const std::size_t C = p.mean.size();
  const std::size_t block = channel_block(x, C, "batchnorm_backward");
  if (grad_out.size() != x.size()) throw ShapeError("batchnorm_backward: shape mismatch");
  BatchNormGrads g{Tensor(x.shape()), Tensor({C}), Tensor({C})};
  for (std::size_t c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(p.var[c] + p.eps);
    for (std::size_t k = 0; k < block; ++k) {
      const std::size_t i = c * block + k;
      g.x[i] = grad_out[i] * inv * p.scale[c];
      g.scale[c] += grad_out[i] * (x[i] - p.mean[c]) * inv;
      g.shift[c] += grad_out[i];
    }
  }
  return g;
}

Tensor maxpool2d_forward(const Tensor& x, PoolParams p) {
  require_image(x, "maxpool");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Ho = window_out_extent(H, p.kernel, p.stride, 0);
  const std::size_t Wo = window_out_extent(W, p.kernel, p.stride, 0);
  Tensor y({C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t ky = 0; ky < p.kernel; ++ky)
          for (std::size_t kx = 0; kx < p.kernel; ++kx)
            best = std::max(best, x[(c * H + oy * p.stride + ky) * W + ox * p.stride + kx]);
        y[(c * Ho + oy) * Wo + ox] = best;
      }
  return y;
}

Tensor maxpool2d_backward(const Tensor& x, PoolParams p, const Tensor& grad_out) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Ho = window_out_extent(H, p.kernel, p.stride, 0);
  const std::size_t Wo = window_out_extent(W, p.kernel, p.stride, 0);
  if (grad_out.size() != C * Ho * Wo) throw ShapeError("maxpool_backward: shape mismatch");
  Tensor g(x.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t arg = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t ky = 0; ky < p.kernel; ++ky)
          for (std::size_t kx = 0; kx < p.kernel; ++kx) {
            const std::size_t i = (c * H + oy * p.stride + ky) * W + ox * p.stride + kx;
            if (x[i] > best) {
              best = x[i];
              arg = i;
            }
          }
        g[arg] += grad_out[(c * Ho + oy) * Wo + ox];
      }
  return g;
}

Tensor avgpool2d_forward(const Tensor& x, PoolParams p) {
  require_image(x, "avgpool");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Ho = window_out_extent(H, p.kernel, p.stride, 0);
  const std::size_t Wo = window_out_extent(W, p.kernel, p.stride, 0);
  const double norm = 1.0 / static_cast<double>(p.kernel * p.kernel);
  Tensor y({C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < p.kernel; ++ky)
          for (std::size_t kx = 0; kx < p.kernel; ++kx)
            acc += x[(c * H + oy * p.stride + ky) * W + ox * p.stride + kx];
        y[(c * Ho + oy) * Wo + ox] = acc * norm;
      }
  return y;
}

Tensor avgpool2d_backward(const Tensor& x, PoolParams p, const Tensor& grad_out) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Ho = window_out_extent(H, p.kernel, p.stride, 0);
  const std::size_t Wo = window_out_extent(W, p.kernel, p.stride, 0);
  if (grad_out.size() != C * Ho * Wo) throw ShapeError("avgpool_backward: shape mismatch");
  const double norm = 1.0 / static_cast<double>(p.kernel * p.kernel);
  Tensor g(x.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const double go = grad_out[(c * Ho + oy) * Wo + ox] * norm;
        for (std::size_t ky = 0; ky < p.kernel; ++ky)
          for (std::size_t kx = 0; kx < p.kernel; ++kx)
            g[(c * H + oy * p.stride + ky) * W + ox * p.stride + kx] += go;
      }
  return g;
}

Tensor residual_add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "residual_add");
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

Tensor softmax(const Tensor& x) {
  if (x.empty()) throw ShapeError("softmax of an empty tensor");
  const double m = *std::max_element(x.data().begin(), x.data().end());
  Tensor y(x.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - m);
    total += y[i];
  }
  for (auto& v : y.data()) v /= total;
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& grad_out) {
  if (y.size() != grad_out.size()) throw ShapeError("softmax_backward: shape mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * grad_out[i];
  Tensor g(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = y[i] * (grad_out[i] - dot);
  return g;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  if (!(h > 0.0)) throw ValueError("finite difference step must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace xbt
