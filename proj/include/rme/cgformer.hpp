// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Cross-attention grid-free transformer for radio map estimation.
//
// Pipeline for one sample:
//   U_P = SSE(targets), U_M = SSE(measurements)
//   Q0  = lift_q(U_P),  K = lift_k(U_M)
//   V   = G_M = MLP_2([MLP_1(values) || U_M])
//   Q_{l+1} = Q_l' + FFN(LN2(Q_l')),  Q_l' = Q_l + MHA(LN1(Q_l), K, V)
//   prediction = head(Q_L)
// Queries attend only to measurements, never to each other.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rme/adam.hpp"
#include "rme/binary_io.hpp"
#include "rme/scene.hpp"
#include "rme/sse.hpp"

namespace rme {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_blocks = 2;
  int ffn_hidden = 64;
  int fusion_hidden_1 = 64;
  int fusion_hidden_2 = 32;
  /// Also layer-normalise keys before projection (off: keys enter raw).
  bool normalize_keys = false;
  double ln_eps = 1e-5;
  /// Cell size of the grid the mask priors are computed on. 0 uses each
  /// input's own grid; training fixes it to the training cell size so finer
  /// inputs are re-gridded and their queries fall off-grid.
  double semantic_cell = 0.0;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

/// Affine map between dBm and the standardised training scale.
struct ValueNormalization {
  double mean = 0.0;
  double std = 1.0;

  double to_model(double dbm) const { return (dbm - mean) / std; }
  double to_dbm(double v) const { return v * std + mean; }
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct BlockParams {
  LayerNormParams norm1;
  LayerNormParams norm2;
  LayerNormParams key_norm;  // only used with normalize_keys
  Tensor wq;                 // [d_model x d_model], head r owns columns r*d_h .. (r+1)*d_h
  Tensor wk;
  Tensor wv;
  Tensor wo;
  LinearLayer ffn1;
  LinearLayer ffn2;
};

struct CgformerModel {
  ModelConfig config;
  SseConfig sse_config;
  ValueNormalization normalization;
  std::map<std::string, std::string> metadata;

  SseParams sse;
  LinearLayer value_mlp1_a;  // 1 -> fusion_hidden_1
  LinearLayer value_mlp1_b;  // fusion_hidden_1 -> d_model
  LinearLayer value_mlp2_a;  // d_model + embed_dim -> fusion_hidden_2
  LinearLayer value_mlp2_b;  // fusion_hidden_2 -> d_model
  LinearLayer lift_q;
  LinearLayer lift_k;
  std::vector<BlockParams> blocks;
  LinearLayer head;

  std::vector<io::NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
};

CgformerModel init_model(const ModelConfig& config, const SseConfig& sse_config, std::uint64_t seed);

/// Sets every parameter to zero (layer-norm gains included).
void zero_parameters(CgformerModel& model);

/// G_M for N standardised values [N x 1] and their embeddings [N x embed_dim].
Tensor fuse_values(const Tensor& values, const Tensor& u_m, const CgformerModel& model);

/// Per-head attention weights of the last call, for inspection.
struct AttentionTrace {
  std::vector<RowMatrix> weights;
};

Tensor cross_attention_block(const Tensor& q, const Tensor& k, const Tensor& v, const BlockParams& block,
                             const ModelConfig& config, AttentionTrace* trace = nullptr);

/// Everything the estimator sees for one prediction request.
struct QueryInput {
  const MeasurementSet* measurements = nullptr;
  const PointList* queries = nullptr;
  const Mask* b_mask = nullptr;
  const Mask* s_mask = nullptr;
  Extent extent;
};

QueryInput query_input(const Sample& sample);

/// Standardised predictions [Q x 1].
Tensor forward(const QueryInput& input, const CgformerModel& model, AttentionTrace* trace = nullptr);
Tensor forward(const Sample& sample, const CgformerModel& model);

/// Predictions in dBm at the sample's targets (no tape recording).
Eigen::VectorXd predict(const Sample& sample, const CgformerModel& model);
Eigen::VectorXd predict(const QueryInput& input, const CgformerModel& model);

/// (1/Q) || pred - truth ||^2.
Tensor mse_objective(const Tensor& pred, const Eigen::VectorXd& truth);

struct BatchGradients {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};

/// Mean per-sample objective over the batch and its gradient. Per-sample
/// work may run on several threads; contributions are merged in batch order.
BatchGradients batch_gradients(std::span<const Sample* const> batch, const CgformerModel& model,
                               int threads = 1);

/// batch_gradients followed by one Adam step. Returns the mean loss.
double train_step(std::span<const Sample* const> batch, CgformerModel& model, AdamState& state, int threads = 1);

/// Mean standardised objective over samples, without gradients.
double evaluate_loss(std::span<const Sample> samples, const CgformerModel& model, int threads = 1);

void save_model(const std::filesystem::path& path, const CgformerModel& model, const AdamState* optimizer = nullptr);
CgformerModel load_model(const std::filesystem::path& path, AdamState* optimizer = nullptr);

}  // namespace rme
