// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rme/tensor.hpp"

namespace rme {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

/// Zero moments shaped like `params`.
AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config = {});

/// One bias-corrected Adam update, in place on the parameter storage.
void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state);

}  // namespace rme
