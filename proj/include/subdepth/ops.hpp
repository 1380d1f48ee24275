#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "subdepth/tensor.hpp"

// Differentiable primitives. Image-like tensors are row-major H x W x C
// (channels fastest); single-channel maps may be H x W.
namespace subdepth {

using Mask = std::vector<std::uint8_t>;

// Elementwise binary ops accept equal shapes, or a single-element operand
// that is broadcast over the other.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// Elementwise minimum; ties route the gradient to `a`.
Tensor minimum(const Tensor& a, const Tensor& b);
/// Elementwise maximum; ties route the gradient to `a`.
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double c);
Tensor mul(const Tensor& a, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, c); }
inline Tensor operator/(const Tensor& a, double c) { return mul(a, 1.0 / c); }

Tensor neg(const Tensor& x);
inline Tensor operator-(const Tensor& x) { return neg(x); }
/// d|x|/dx is 0 at x = 0.
Tensor abs(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor sigmoid(const Tensor& x);
Tensor elu(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over the elements where `mask` is nonzero; a constant 0 when the mask
/// is empty.
Tensor masked_mean(const Tensor& x, const Mask& mask);

/// Picks `a` where mask is nonzero, else `b`.
Tensor where(const Mask& mask, const Tensor& a, const Tensor& b);

/// Value copy with no gradient path.
Tensor detach(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenates rank-3 tensors along the channel axis.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
/// Channels [begin, end) of an H x W x C tensor.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);
/// H x W -> H x W x C by repetition.
Tensor expand_channels(const Tensor& x, std::size_t channels);
/// H x W x C -> H x W channel average.
Tensor mean_channels(const Tensor& x);
/// H x W x C -> C spatial average.
Tensor spatial_mean(const Tensor& x);

/// 2D convolution of an H x W x Ci input with a KH x KW x Ci x Co kernel and
/// Co bias, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// Nearest-neighbour upsampling by an integer factor.
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
/// Box-filter downsampling by an integer factor (H and W must divide).
Tensor downsample_area(const Tensor& x, std::size_t factor);
/// 3x3 stride-1 box filter with reflection padding.
Tensor avg_pool3x3(const Tensor& x);
/// Forward differences x[:, 1:] - x[:, :-1].
Tensor grad_x(const Tensor& x);
/// Forward differences x[1:, :] - x[:-1, :].
Tensor grad_y(const Tensor& x);

/// Samples `image` (H x W x C) at continuous pixel coordinates (Ho x Wo x 2,
/// (u, v) order). Coordinates outside the image are clamped to the border;
/// clamped coordinates receive no gradient.
Tensor bilinear_sample(const Tensor& image, const Tensor& coords);

}  // namespace subdepth
