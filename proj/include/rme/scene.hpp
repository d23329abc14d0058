// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic urban propagation scenes and the sample-construction pipeline.
//
// Received power at a point xi from transmitter (p_tx, P_tx), in dBm:
//
//   P_tx - 10 n log10(max(d, d0) / d0) - w * walls(p_tx, xi) + shadow(xi)
//
// where walls counts the buildings the straight segment p_tx -> xi passes
// through (each building penetrated is one obstruction of w dB) and shadow is
// unit-variance Gaussian white noise on the scene lattice, smoothed with a
// Gaussian kernel of std shadow_corr_cells and scaled to shadow_sigma_db.
// Between lattice points the shadow field is interpolated bilinearly, so the
// same scene can be rendered at any resolution.

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "rme/grid.hpp"
#include "rme/rng.hpp"

namespace rme {

inline constexpr double kBuildingPower = -std::numeric_limits<double>::infinity();

/// Axis-aligned rectangle [x0, x1) x [y0, y1) in meters.
struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  bool contains(const Point& p) const { return p.x() >= x0 && p.x() < x1 && p.y() >= y0 && p.y() < y1; }
};

struct Transmitter {
  Point position = Point::Zero();
  double power_dbm = 30.0;
};

struct Scene {
  double width_m = 0.0;
  double height_m = 0.0;
  Index ny = 0;
  Index nx = 0;
  double delta = 1.0;
  std::vector<Rect> buildings;
  std::vector<Transmitter> transmitters;

  GridSpec grid() const { return GridSpec{ny, nx, delta, delta, Point::Zero()}; }
  bool inside_building(const Point& p) const;
};

struct LayoutConfig {
  Index ny = 64;
  Index nx = 64;
  double delta = 3.25;
  int buildings = 30;
  int building_min_cells = 3;
  int building_max_cells = 10;
  int transmitters = 9;
  double power_min_dbm = 20.0;
  double power_max_dbm = 40.0;
};

struct PropagationConfig {
  double path_loss_exponent = 3.0;
  double reference_distance = 1.0;
  double wall_loss_db = 10.0;
  double shadow_sigma_db = 4.0;
  double shadow_corr_cells = 8.0;
};

/// Random city: cell-aligned buildings and transmitters placed outside them.
Scene generate_scene(const LayoutConfig& layout, std::uint64_t seed);

/// True when the open segment a -> b passes through the interior of `r`.
bool segment_crosses(const Point& a, const Point& b, const Rect& r);
int count_walls(const Point& a, const Point& b, std::span<const Rect> buildings);

/// Smoothed Gaussian shadowing on the scene lattice.
class ShadowField {
 public:
  ShadowField() = default;
  ShadowField(const Scene& scene, const PropagationConfig& config, std::uint64_t seed);

  double at(const Point& p) const;
  const RowMatrix& lattice() const { return lattice_; }

 private:
  GridSpec grid_;
  RowMatrix lattice_;
};

struct RadioMap {
  GridSpec grid;
  /// dBm per cell; building cells hold kBuildingPower.
  RowMatrix values;
  Mask building_mask;
};

RadioMap generate_single_tx_map(const Scene& scene, std::size_t tx_index, const PropagationConfig& config,
                                std::uint64_t seed);

/// Same field as generate_single_tx_map, sampled on an arbitrary grid.
RadioMap render_single_tx_map(const Scene& scene, std::size_t tx_index, const PropagationConfig& config,
                              std::uint64_t seed, const GridSpec& grid);

/// Per-cell linear power sum of two maps over the same grid.
RadioMap aggregate_two_tx(const RadioMap& a, const RadioMap& b);

/// dB-domain power sum; kBuildingPower acts as zero power.
double power_sum_db(double a, double b);

struct Extent {
  Point origin = Point::Zero();
  Point size = Point::Zero();
};

struct SubMap {
  RadioMap map;
  Extent extent;
  Index row0 = 0;
  Index col0 = 0;
};

SubMap extract_subregion_at(const RadioMap& map, Index row0, Index col0, Index rows, Index cols);
SubMap extract_subregion(const RadioMap& map, Index rows, Index cols, Rng& rng);

struct Sample {
  Extent extent;
  MeasurementSet measurements;
  PointList target_coords;
  Eigen::VectorXd target_values;
  Mask b_mask;
  Mask s_mask;
  double sampling_factor = 0.0;

  Index query_count() const { return target_values.size(); }
  GridSpec grid() const;
};

/// Number of cells drawn for a factor over `open_cells` non-building cells.
Index sampled_count(double factor, Index open_cells);

/// Draws ceil(factor * open cells) distinct non-building cells and splits them
/// into observed measurements and hidden targets.
Sample make_sample(const SubMap& sub, double factor, double split_ratio, Rng& rng);

/// One draw of sampled cells re-split `count` times (augmentation).
std::vector<Sample> make_samples(const SubMap& sub, double factor, double split_ratio, int count, Rng& rng);

/// Every non-building cell as a target, no measurements. Test maps are
/// stored this way and re-split per sampling factor at evaluation time.
Sample full_map_sample(const SubMap& sub);

/// Re-splits the targets of a full-map sample at `factor`.
Sample resample(const Sample& full, double factor, double split_ratio, Rng& rng);

}  // namespace rme
