// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment engine behind the CLI: training with early stopping, RMSE
// sweeps over sampling factors, ablations, off-grid evaluation and PGM
// export.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rme/baselines.hpp"
#include "rme/cgformer.hpp"
#include "rme/config.hpp"
#include "rme/dataset.hpp"
#include "rme/parallel.hpp"

namespace rme {

struct TrainConfig {
  double lr = 5e-4;
  int batch = 64;
  int epochs = 200;
  int patience = 10;
  /// Use only the first `max_train` training samples (0: all).
  int max_train = 0;
  /// Training coordinates move uniformly by up to jitter/2 of a cell per
  /// axis, staying inside their cell. In [0, 1).
  double jitter = 0.0;
};

/// Copy of `s` with every measurement and target coordinate jittered.
Sample jitter_coordinates(const Sample& s, double jitter, Rng& rng);

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  SseConfig sse;
  TrainConfig train;
  std::vector<double> factors{0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};
  std::vector<double> offgrid_factors{0.1, 0.2, 0.3, 0.4};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  /// Validation samples used to tune each baseline.
  int tune_samples = 200;

  void validate() const;
  std::string canonical() const;
  std::string hash() const;
};

/// Unknown keys are rejected.
ExperimentConfig experiment_config_from(const ConfigMap& config);

struct ResultRecord {
  std::string method;
  double factor = 0.0;
  std::vector<double> map_rmse;
  double mean_rmse = 0.0;
  /// Reported on stderr only; never written to result files.
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

using Predictor = std::function<Eigen::VectorXd(const Sample&)>;

Predictor model_predictor(const CgformerModel& model);
Predictor baseline_predictor(const BaselineConfig& config);

/// The measurement/target split of test map `map_index` at `factor`. The
/// seed depends only on (seed, map index, factor), so every method sees the
/// same split.
Sample evaluation_split(const Sample& full, std::size_t map_index, double factor, std::uint64_t seed,
                        double split_ratio = 0.5);

ResultRecord evaluate(const std::string& method, const Predictor& predictor, std::span<const Sample> maps,
                      double factor, std::uint64_t seed, int threads = configured_threads());

std::vector<ResultRecord> evaluate_sweep(const std::string& method, const Predictor& predictor,
                                         std::span<const Sample> maps, std::span<const double> factors,
                                         std::uint64_t seed, int threads = configured_threads());

double mean_of(std::span<const ResultRecord> records);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double best_val = 0.0;
};

struct TrainOptions {
  /// Best-validation model; a resumable checkpoint goes to `<out>.last`.
  std::filesystem::path out;
  std::filesystem::path log_csv;
  bool resume = false;
  int threads = 1;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  CgformerModel model;  // best validation parameters
  std::vector<EpochLog> log;
  int last_epoch = 0;
  bool stopped_early = false;
};

TrainResult train_model(const TrainConfig& train, const ModelConfig& model_config, const SseConfig& sse_config,
                        std::uint64_t seed, std::span<const Sample> train_set, std::span<const Sample> val_set,
                        const ValueNormalization& normalization, const TrainOptions& options = {});

/// Rows = factor, columns = method mean RMSE.
void write_results_table(const std::filesystem::path& path, std::span<const ResultRecord> records);
/// One row per (method, factor, map) with seed and config hash.
void write_map_records(const std::filesystem::path& path, std::span<const ResultRecord> records);

struct OffgridRow {
  double factor = 0.0;
  ResultRecord coarse;        // training resolution at factor
  ResultRecord fine_dense;    // half cell size at the same factor (4x the measurements)
  ResultRecord fine_matched;  // half cell size at factor / 4 (same measurement count)
  bool all_finite = true;
};

/// Throws a contract error unless the two map lists cover the same extents.
std::vector<OffgridRow> run_offgrid(const CgformerModel& model, std::span<const Sample> coarse,
                                    std::span<const Sample> fine, std::span<const double> factors,
                                    std::uint64_t seed, int threads = configured_threads());

void write_offgrid_table(const std::filesystem::path& path, std::span<const OffgridRow> rows);

/// Values at the targets of a full-map sample laid out on its grid; building
/// cells hold kBuildingPower.
RowMatrix field_from_targets(const Sample& full, const Eigen::VectorXd& values);

/// Binary PGM: non-building cells min-max scaled to 1..255 (a constant field
/// maps to 128), building cells 255.
void write_pgm(const std::filesystem::path& path, const RowMatrix& values, const Mask& buildings);
std::string pgm_bytes(const RowMatrix& values, const Mask& buildings);

/// Writes `rows` to a CSV file verbatim.
void write_csv(const std::filesystem::path& path, const std::vector<std::vector<std::string>>& rows);

/// Fixed-point formatting used in result tables.
std::string fixed(double v, int digits = 6);

}  // namespace rme
