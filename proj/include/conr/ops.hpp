#pragma once

#include <span>
#include <vector>

#include "conr/tensor.hpp"

/// Differentiable operations over NCHW tensors.
namespace conr::ops {

/// 2-D convolution. `w` is [Cout,Cin,kh,kw] with odd kernel sizes, `b` is
/// [Cout]. Output size must divide exactly: (H + 2*pad - kh) % stride == 0.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad);

/// out[.., i, j] = x[.., i / factor, j / factor].
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor);

/// Mean over non-overlapping 2x2 windows. H and W must be even.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x);

/// Nearest resampling with source index floor(i * H / outH).
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, int out_h, int out_w);

/// Samples `x` at (j + flow_x, i + flow_y) with bilinear interpolation.
/// Coordinates are clamped to the image border; the gradient w.r.t. flow is
/// zero along a clamped axis.
template <typename T>
Tensor<T> grid_sample_bilinear(const Tensor<T>& x, const Tensor<T>& flow);

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs);

template <typename T>
Tensor<T> concat_channels(std::initializer_list<Tensor<T>> xs) {
  return concat_channels<T>(std::span<const Tensor<T>>(xs.begin(), xs.size()));
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// (sum_i ws[i] * xs[i]) / n with ws[i] of shape [N,1,H,W] broadcast over the
/// channels of xs[i] ([N,C,H,W]). Throws EmptySetError for n == 0.
template <typename T>
Tensor<T> weighted_set_mean(std::span<const Tensor<T>> xs, std::span<const Tensor<T>> ws);

/// Elementwise mean of equally shaped tensors.
template <typename T>
Tensor<T> set_mean(std::span<const Tensor<T>> xs);

/// Scalar mean of all elements.
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Weighted sum of scalar tensors; undefined terms are skipped.
template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> terms, std::span<const double> weights);

/// Divides every pixel's channel vector by its L2 norm (plus `eps`).
template <typename T>
Tensor<T> normalize_channels(const Tensor<T>& x, T eps);

/// RGBA [N,4,H,W] composited over a white background -> RGB [N,3,H,W].
template <typename T>
Tensor<T> composite_over_white(const Tensor<T>& rgba);

}  // namespace conr::ops
