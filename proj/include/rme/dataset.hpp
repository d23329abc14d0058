// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset construction over one synthetic city and the .rmds sample format.
//
// Scenes are single-transmitter deployments of the city, identified by a
// 1-based transmitter id. Each map aggregates two distinct scenes of a pool.
// Training windows are cut into `splits` sub-samples; test maps are stored
// with every open cell as a target and re-split per sampling factor when
// evaluated.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rme/config.hpp"
#include "rme/scene.hpp"

namespace rme {

struct DatasetConfig {
  std::uint64_t seed = 7;
  LayoutConfig layout;
  PropagationConfig propagation;
  std::vector<int> train_pool{1, 2, 3, 4, 5, 6};
  std::vector<int> test_pool{7, 8, 9};
  Index window = 16;
  /// Training plus validation samples.
  int samples = 5000;
  int splits = 10;
  double factor_min = 0.04;
  double factor_max = 0.8;
  double split_ratio = 0.5;
  double val_fraction = 0.1;
  int test_maps = 100;
  /// Also render the test maps at half the cell size.
  bool fine = true;

  void validate() const;
  /// Stable key=value rendering; hashes and manifests are built from it.
  std::string canonical() const;
  /// Identifies the city and propagation model (not the sampling).
  std::uint64_t scene_hash() const;
};

DatasetConfig dataset_config_from(const ConfigMap& config);
std::vector<std::string> dataset_config_keys();

struct Dataset {
  DatasetConfig config;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  std::vector<Sample> test_fine;
  double value_mean = 0.0;
  double value_std = 1.0;
};

/// Mean and population std of every measured and target value.
std::pair<double, double> value_statistics(std::span<const Sample> samples);

Dataset build_dataset(const DatasetConfig& config);

void write_samples(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> read_samples(const std::filesystem::path& path);

/// train.rmds, val.rmds, test.rmds, [test_fine.rmds], manifest.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

struct Manifest {
  std::uint64_t seed = 0;
  std::string scene_hash;
  std::string config_hash;
  double value_mean = 0.0;
  double value_std = 1.0;
  double delta = 0.0;
  Index window = 0;
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  std::size_t test_fine = 0;
};

Manifest read_manifest(const std::filesystem::path& dir);

}  // namespace rme
