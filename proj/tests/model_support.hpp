// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Model helpers shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "rme/cgformer.hpp"
#include "support.hpp"

namespace rme::test {

/// Redraws every parameter: weights keep their init scale, biases and
/// layer-norm shifts become small random values and gains lie in [0.5, 1.5].
inline void randomize_parameters(CgformerModel& model, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : model.named_parameters()) {
    Tensor p = t;
    const auto ends = [&](const char* s) { return name.size() >= std::strlen(s) && name.ends_with(s); };
    for (double& v : p.mutable_data()) {
      if (ends(".gamma")) {
        v = uniform(rng, 0.5, 1.5);
      } else if (ends(".bias") || ends(".beta")) {
        v = uniform(rng, -0.2, 0.2);
      } else {
        v *= uniform(rng, 0.5, 1.5);
      }
    }
  }
}

inline Eigen::VectorXd standardized_targets(const Sample& s, const ValueNormalization& n) {
  Eigen::VectorXd t(s.query_count());
  for (Index i = 0; i < t.size(); ++i) t(i) = n.to_model(s.target_values(i));
  return t;
}

/// Mean and std of a sample's values, for a toy normalisation.
inline ValueNormalization toy_normalization(const Sample& s) {
  Eigen::VectorXd all(s.measurements.size() + s.query_count());
  all << s.measurements.values, s.target_values;
  const double mu = all.mean();
  const double sd = std::sqrt((all.array() - mu).square().mean());
  return {mu, sd > 0.0 ? sd : 1.0};
}

inline Sample permuted(const Sample& s, Rng& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(s.measurements.size()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<Index>(i);
  std::shuffle(perm.begin(), perm.end(), rng);
  Sample out = s;
  for (Index r = 0; r < s.measurements.size(); ++r) {
    out.measurements.coords.row(r) = s.measurements.coords.row(perm[static_cast<std::size_t>(r)]);
    out.measurements.values(r) = s.measurements.values(perm[static_cast<std::size_t>(r)]);
  }
  return out;
}

inline Sample duplicated(const Sample& s) {
  Sample out = s;
  const Index n = s.measurements.size();
  out.measurements.coords.resize(2 * n, 2);
  out.measurements.values.resize(2 * n);
  out.measurements.coords << s.measurements.coords, s.measurements.coords;
  out.measurements.values << s.measurements.values, s.measurements.values;
  return out;
}

}  // namespace rme::test
