#pragma once

#include <vector>

#include "wmmoe/nd/tape.hpp"

// Differentiable primitives. Every op takes Var handles on a single tape and
// records its backward closure there. Binary elementwise ops follow numpy
// broadcasting rules.

namespace wmmoe::nd {

/// Broadcast result shape of two shapes; throws DimensionError naming both.
Shape broadcast_shapes(const Shape& a, const Shape& b);

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> scale(const Var<T>& x, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& x, T value);
template <typename T> Var<T> neg(const Var<T>& x);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);
/// Slope 0.01 unless stated.
template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope = T(0.01));
template <typename T> Var<T> softplus(const Var<T>& x);
template <typename T> Var<T> silu(const Var<T>& x);
/// tanh approximation of GELU.
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> sqrt(const Var<T>& x);
template <typename T> Var<T> square(const Var<T>& x);
template <typename T> Var<T> abs(const Var<T>& x);
template <typename T> Var<T> clamp_min(const Var<T>& x, T lo);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> sum_axis(const Var<T>& x, Index axis, bool keepdim = false);
template <typename T> Var<T> mean_axis(const Var<T>& x, Index axis, bool keepdim = false);

template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> permute(const Var<T>& x, const std::vector<Index>& axes);
template <typename T> Var<T> slice(const Var<T>& x, Index axis, Index start, Index length);
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, Index axis);
template <typename T> Var<T> broadcast_to(const Var<T>& x, const Shape& shape);
/// Same value, no gradient path.
template <typename T> Var<T> detach(const Var<T>& x);

/// a[..., m, k] x b[k, n], or batched a[..., m, k] x b[..., k, n] with equal
/// leading dims. Transpose flags apply to the last two axes.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_a = false, bool transpose_b = false);

/// Max-subtracted softmax along `axis`.
template <typename T> Var<T> softmax(const Var<T>& x, Index axis = -1);
template <typename T> Var<T> log_softmax(const Var<T>& x, Index axis = -1);
/// Softmax over the last axis restricted to entries where `mask` is nonzero.
/// Masked entries get exactly zero weight; rows with no valid entry are all zero.
template <typename T> Var<T> masked_softmax(const Var<T>& x, const Array<T>& mask);

/// Normalizes over the last axis, then applies gain and bias (both shape [d]).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));

/// Inverted dropout; the identity when the tape is not in training mode.
template <typename T> Var<T> dropout(const Var<T>& x, T rate);

/// Zero padding and tap spacing for conv2d. Input is [N, H, W, Cin] and the
/// kernel [kh, kw, Cin, Cout]; output is [N, out_h, out_w, Cout].
struct ConvGeometry {
  Index stride_h = 1, stride_w = 1;
  Index dilation_h = 1, dilation_w = 1;
  Index pad_top = 0, pad_left = 0;
  Index out_h = 0, out_w = 0;

  /// Standard output size: floor((in + 2 pad - dil (k - 1) - 1) / stride) + 1.
  static ConvGeometry strided(Index h, Index w, Index kh, Index kw, Index stride, Index pad);
  /// Length-preserving causal padding along the width axis (height must be 1).
  static ConvGeometry causal_1d(Index length, Index k, Index dilation);
  /// Length-preserving symmetric padding on both axes.
  static ConvGeometry same_2d(Index h, Index w, Index kh, Index kw, Index dil_h, Index dil_w);
};

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const ConvGeometry& geom);

/// Dilated convolution with length-preserving zero padding.
/// rank 1: x [N, L, Cin], kernel [k, Cin, Cout], causal (taps look back).
/// rank 2: x [N, H, W, Cin], kernel [kh, kw, Cin, Cout], centered.
template <typename T>
Var<T> dilated_conv(const Var<T>& x, const Var<T>& kernel, Index dilation, int rank);

/// Diagonal selective state-space scan.
///   h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t
///   y_t = <C_t, h_t> + D * u_t
/// u, delta: [R, L, E]; A: [E, S]; B, C: [R, L, S]; D: [E]. Returns [R, L, E].
template <typename T>
Var<T> selective_scan(const Var<T>& u, const Var<T>& delta, const Var<T>& A, const Var<T>& B,
                      const Var<T>& C, const Var<T>& D);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a) { return neg(a); }
template <typename T> Var<T> operator*(const Var<T>& a, T s) { return scale(a, s); }
template <typename T> Var<T> operator*(T s, const Var<T>& a) { return scale(a, s); }

}  // namespace wmmoe::nd
