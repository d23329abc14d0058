// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "rme/tensor.hpp"

namespace rme {

// Matrix ops treat a tensor as its rows() x cols() view.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);

/// x W + b with W [in x out] and b [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Numerically stable row-wise softmax (max subtracted before exp).
Tensor softmax_rows(const Tensor& x);

/// Normalises over the last axis using the population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Stride-1 cross-correlation with zero padding (k-1)/2.
/// x [C_in x H x W], kernel [C_out x C_in x k x k], bias [C_out].
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

Tensor concat_last_axis(std::span<const Tensor> parts);
Tensor concat_last_axis(const Tensor& a, const Tensor& b);
Tensor slice_last_axis(const Tensor& x, std::size_t start, std::size_t width);

/// Picks the channel vector of a [C x H x W] map at flat cell indices
/// (row * W + col); result is [N x C].
Tensor gather_cells(const Tensor& features, std::span<const std::size_t> cells);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// (1/Q) * ||pred - truth||^2; truth is treated as a constant.
Tensor mse_loss(const Tensor& pred, const Tensor& truth);

Tensor reshape(const Tensor& x, Shape shape);

}  // namespace rme
