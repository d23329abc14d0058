// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Classical grid-free estimators: k-nearest neighbours, inverse distance
// weighting, ordinary kriging and Gaussian-process regression.

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rme/grid.hpp"
#include "rme/scene.hpp"

namespace rme {

enum class BaselineMethod { knn, idw, kriging, gpr };

std::string_view method_name(BaselineMethod m);
BaselineMethod parse_method(std::string_view name);

/// Exponential variogram nugget + (sill - nugget)(1 - exp(-d / range)) for
/// d > 0, and 0 at d = 0.
struct Variogram {
  double nugget = 0.0;
  double sill = 1.0;
  double range = 1.0;

  double operator()(double d) const;
};

/// RBF kernel sigma_f^2 exp(-d^2 / (2 l^2)) plus sigma_n^2 on the diagonal.
struct RbfKernel {
  double lengthscale = 1.0;
  double signal_variance = 1.0;
  double noise_variance = 0.0;

  double operator()(double d) const;
};

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::knn;
  int k = 5;
  double power = 2.0;
  Variogram variogram;
  RbfKernel kernel;
  /// Rescale sill / signal variance to the sample variance of each
  /// measurement set; nugget and noise are then fractions of it.
  bool data_scaled = true;

  void validate() const;
  std::string describe() const;
};

double knn_predict(const MeasurementSet& m, const Point& p, int k);
double idw_predict(const MeasurementSet& m, const Point& p, double power);

struct KrigingResult {
  Eigen::VectorXd values;
  RowMatrix weights;  // [Q x N]
  /// The system was singular and IDW (power 2) was used instead.
  bool fallback = false;
};

KrigingResult kriging_predict(const MeasurementSet& m, const PointList& queries, const Variogram& variogram);

struct GprResult {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // empty unless requested
  int jitter_steps = 0;
};

GprResult gpr_predict(const MeasurementSet& m, const PointList& queries, const RbfKernel& kernel,
                      bool with_variance = false);

Eigen::VectorXd baseline_predict(const BaselineConfig& config, const MeasurementSet& m, const PointList& queries);

/// Search grid used by fit_hyperparams, scales in multiples of `cell_size`.
std::vector<BaselineConfig> candidate_configs(BaselineMethod method, double cell_size);

/// Grid search minimising the mean per-sample RMSE on `validation`; the first
/// candidate wins ties.
BaselineConfig fit_hyperparams(std::span<const Sample> validation, BaselineMethod method, double cell_size);

}  // namespace rme
