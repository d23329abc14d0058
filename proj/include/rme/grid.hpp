// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Grid geometry shared by the simulator, the grid-based aggregation path and
// the semantic-feature lookup of the embedding.
//
// Points are (x, y) in meters. Row i runs along y, column j along x, and the
// centre of cell (i, j) is origin + ((j + 1/2) dx, (i + 1/2) dy).

#pragma once

#include <cstdint>
#include <span>

#include <Eigen/Core>

#include "rme/tensor.hpp"

namespace rme {

using Index = Eigen::Index;
using Point = Eigen::Vector2d;
using PointList = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CountGrid = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct GridSpec {
  Index ny = 1;
  Index nx = 1;
  double delta_x = 1.0;
  double delta_y = 1.0;
  Point origin = Point::Zero();

  Point cell_center(Index i, Index j) const {
    return origin + Point((static_cast<double>(j) + 0.5) * delta_x, (static_cast<double>(i) + 0.5) * delta_y);
  }
  double width() const { return static_cast<double>(nx) * delta_x; }
  double height() const { return static_cast<double>(ny) * delta_y; }
  Index cell_count() const { return ny * nx; }

  /// Throws a config error unless extents >= 1 and deltas > 0.
  void validate() const;
};

struct CellIndex {
  Index i = 0;
  Index j = 0;
  /// Set when the point lay outside the grid's extent.
  bool clamped = false;

  std::size_t flat(const GridSpec& spec) const { return static_cast<std::size_t>(i * spec.nx + j); }
  bool operator==(const CellIndex& o) const { return i == o.i && j == o.j; }
};

/// Nearest cell centre; equidistant candidates resolve to the smaller (i, j).
CellIndex nearest_cell(const Point& p, const GridSpec& spec);

struct MeasurementSet {
  PointList coords;
  Eigen::VectorXd values;

  Index size() const { return values.size(); }
  bool empty() const { return values.size() == 0; }
};

struct AggregatedGrid {
  RowMatrix values;
  CountGrid counts;
};

/// Per-cell mean of the measurements whose nearest cell it is; empty cells
/// hold 0. Contributions are summed in measurement order.
AggregatedGrid aggregate(const MeasurementSet& measurements, const GridSpec& spec);

/// Channel vector of a [C x ny x nx] feature map at the nearest cell to p.
Eigen::VectorXd lookup_feature(const Point& p, const Tensor& feature_grid, const GridSpec& spec);

/// Flat nearest-cell indices for every row of `points`.
std::vector<std::size_t> nearest_cells(const PointList& points, const GridSpec& spec);

}  // namespace rme
