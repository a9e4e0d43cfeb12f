#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deml/tensor.hpp"

// Differentiable operations over Tensor. Every op records a backward closure
// when any input requires a gradient.
namespace deml {

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x [n x in] times w [out x in] transposed -> [n x out]. A 1-D x is treated
// as a single row and yields a 1-D result.
Tensor linear(const Tensor& x, const Tensor& w);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor sum_squares(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// log(1 + exp(x)), evaluated without overflow.
Tensor softplus(const Tensor& x);

// 3x3 convolution with zero padding 1. x is [C_in x H x W] or
// [N x C_in x H x W]; kernels are [C_out x C_in x 3 x 3]; stride 1 or 2.
Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride);
// Adds bias[c] to every spatial location of channel c.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
// [C x H x W] -> [C], [N x C x H x W] -> [N x C]
Tensor spatial_avg_pool(const Tensor& x);
// Multiplies channel c of x by gates[c] ([C]) or gates[n, c] ([N x C]).
Tensor channel_scale(const Tensor& x, const Tensor& gates);

Tensor concat(std::span<const Tensor> parts);
Tensor slice(const Tensor& x, std::size_t offset, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);
Tensor row(const Tensor& x, std::size_t r);
Tensor stack_rows(std::span<const Tensor> rows);

// Divides a vector by its Euclidean norm; throws DegenerateVectorError when
// the norm is at most 1e-12.
Tensor l2_normalize(const Tensor& x);
// Row-wise l2_normalize of an [N x v] matrix.
Tensor normalize_rows(const Tensor& x);

// Identity forward; multiplies the incoming gradient by -coefficient.
Tensor grad_reverse(const Tensor& x, double coefficient = 1.0);

}  // namespace deml
