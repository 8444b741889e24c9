#pragma once

// Differentiable primitives. Shapes must match exactly: apart from bias_add,
// nothing broadcasts, so callers reshape or repeat_last explicitly.
// Image tensors are NHWC; convolution weights are [3, 3, Cin, Cout].

#include <cstddef>
#include <vector>

#include "nff/autodiff/graph.hpp"

namespace nff::ad {

inline constexpr double kLeakySlope = 0.2;

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> maximum(Var<T> a, Var<T> b);

template <typename T> Var<T> neg(Var<T> x);
template <typename T> Var<T> scale(Var<T> x, T c);
template <typename T> Var<T> add_scalar(Var<T> x, T c);
template <typename T> Var<T> square(Var<T> x);
template <typename T> Var<T> exp(Var<T> x);
template <typename T> Var<T> log(Var<T> x);
template <typename T> Var<T> sin(Var<T> x);
template <typename T> Var<T> cos(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> leaky_relu(Var<T> x, T slope = T(kLeakySlope));
/// log(1 + e^x), evaluated without overflow.
template <typename T> Var<T> softplus(Var<T> x);

/// [M, K] x [K, N] -> [M, N]
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// x [..., C] + b [C]
template <typename T> Var<T> bias_add(Var<T> x, Var<T> b);

template <typename T> Var<T> sum(Var<T> x, std::size_t axis);
template <typename T> Var<T> mean(Var<T> x, std::size_t axis);
template <typename T> Var<T> sum_all(Var<T> x);
template <typename T> Var<T> mean_all(Var<T> x);

/// Running product along `axis`. Exclusive mode shifts by one (first entry 1).
template <typename T> Var<T> cumprod(Var<T> x, std::size_t axis, bool exclusive = false);

template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
/// [..., 1] -> [..., n]
template <typename T> Var<T> repeat_last(Var<T> x, std::size_t n);
/// Rows of a 2-D tensor.
template <typename T> Var<T> gather_rows(Var<T> x, std::vector<std::size_t> rows);
/// Places row r of x at output row rows[r]; other rows are zero.
template <typename T> Var<T> scatter_rows(Var<T> x, std::vector<std::size_t> rows, std::size_t total_rows);

/// 3x3 convolution, padding 1, stride 1 or 2. `bias` may be an invalid Var.
template <typename T> Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride = 1);
/// Adjoint of conv2d (without bias) with respect to its input; out_h/out_w
/// resolve the stride-2 size ambiguity.
template <typename T>
Var<T> conv2d_transpose(Var<T> g, Var<T> weight, std::size_t stride, std::size_t out_h, std::size_t out_w);

template <typename T> Var<T> upsample_nearest2x(Var<T> x);
/// Half-pixel-centred bilinear interpolation with edge clamping.
template <typename T> Var<T> upsample_bilinear2x(Var<T> x);

}  // namespace nff::ad
