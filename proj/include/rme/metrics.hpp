// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "rme/error.hpp"

namespace rme {

/// sqrt(mean((pred - truth)^2)), accumulated in index order.
inline double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  if (pred.size() != truth.size()) {
    throw Error(ErrorKind::dimension,
                "rmse: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(truth.size()) + " truths");
  }
  if (pred.size() == 0) throw Error(ErrorKind::degenerate, "rmse over zero targets");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double e = pred(i) - truth(i);
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

}  // namespace rme
