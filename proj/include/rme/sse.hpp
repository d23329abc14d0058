// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Spatial semantic embedding: sinusoidal coordinate encoding, CNN features of
// the building and sampling masks, and the residual MLP producing u_p.

#pragma once

#include <array>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "rme/grid.hpp"
#include "rme/rng.hpp"
#include "rme/scene.hpp"
#include "rme/tensor.hpp"

namespace rme {

enum class Variant { full, no_posenc, no_b, no_s };

/// CLI spelling: full, no-posenc, no-b, no-s.
std::string_view variant_name(Variant v);
/// Ablation table label.
std::string_view variant_label(Variant v);
Variant parse_variant(std::string_view name);

struct SseConfig {
  int frequencies = 16;
  int d_b = 16;
  int d_s = 16;
  int cnn_hidden = 8;
  int mlp_hidden = 64;
  int embed_dim = 32;
  Variant variant = Variant::full;

  bool use_posenc() const { return variant != Variant::no_posenc; }
  bool use_b() const { return variant != Variant::no_b; }
  bool use_s() const { return variant != Variant::no_s; }
  /// 2 (2L + 1) with positional encoding, otherwise the raw pair.
  int coord_dim() const { return use_posenc() ? 2 * (2 * frequencies + 1) : 2; }
  /// |h_p|; the disabled priors still occupy their (zeroed) slots.
  int input_dim() const { return coord_dim() + d_b + d_s; }
  void validate() const;
};

struct LinearLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const;
};

struct ConvLayer {
  Tensor kernel;  // [C_out x C_in x k x k]
  Tensor bias;    // [C_out]
};

using CnnStack = std::array<ConvLayer, 3>;

struct SseParams {
  CnnStack cnn_b;
  CnnStack cnn_s;
  std::array<LinearLayer, 5> mlp;
};

/// Glorot-uniform weights, zero biases.
LinearLayer init_linear(int in, int out, Rng& rng);
ConvLayer init_conv(int in, int out, int k, Rng& rng);
SseParams init_sse_params(const SseConfig& config, Rng& rng);

/// [x, sin(2^k pi x), cos(2^k pi x) for k = 0..L-1].
Eigen::VectorXd sin_encode(double x, int frequencies);

/// Conv5 -> ReLU -> Conv3 -> ReLU -> Conv3 over a single-channel mask.
Tensor cnn_encode(const Mask& mask, const CnnStack& stack);

struct PriorFeatures {
  Tensor e_b;  // [d_b x ny x nx], invalid when the B prior is disabled
  Tensor e_s;  // [d_s x ny x nx], invalid when the S prior is disabled
};

PriorFeatures encode_priors(const Mask& b_mask, const Mask& s_mask, const SseParams& params, const SseConfig& config);

/// Coordinates normalised to [0, 1]^2 against the extent.
Eigen::Vector2d normalize_coord(const Point& p, const Extent& extent);

/// Constant [P x coord_dim] block of E(x) || E(y) (or the raw pair).
Tensor coordinate_features(const PointList& points, const Extent& extent, const SseConfig& config);

/// h_p for every point, [P x input_dim].
Tensor assemble_embedding_input(const PointList& points, const PriorFeatures& priors, const GridSpec& grid,
                                const Extent& extent, const SseConfig& config);

/// Residual MLP: a1 = relu(L1 h), a2 = relu(L2 a1), a3 = relu(L3 a2 + a1),
/// a4 = relu(L4 a3), u = L5 a4.
Tensor residual_mlp(const Tensor& h, const SseParams& params);

/// U = [u_1; ...; u_P], [P x embed_dim].
Tensor embed_batch(const PointList& points, const PriorFeatures& priors, const GridSpec& grid, const Extent& extent,
                   const SseParams& params, const SseConfig& config);

Eigen::VectorXd embed_point(const Point& p, const PriorFeatures& priors, const GridSpec& grid, const Extent& extent,
                            const SseParams& params, const SseConfig& config);

}  // namespace rme
