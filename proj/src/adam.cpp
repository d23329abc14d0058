// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/adam.hpp"

#include <cmath>
#include <string>

namespace rme {

AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.m.emplace_back(p.size(), 0.0);
    state.v.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw Error(ErrorKind::dimension, "adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = params[i].size();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw Error(ErrorKind::dimension, "adam_step: shape mismatch for parameter " + std::to_string(i) + " " +
                                            shape_string(params[i].shape()));
    }
  }
  const auto& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

}  // namespace rme
