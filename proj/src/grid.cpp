// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/grid.hpp"

#include <cmath>
#include <string>

namespace rme {

void GridSpec::validate() const {
  if (ny < 1 || nx < 1) {
    throw Error(ErrorKind::config, "grid extents must be >= 1, got " + std::to_string(ny) + "x" + std::to_string(nx));
  }
  if (!(delta_x > 0.0) || !(delta_y > 0.0)) throw Error(ErrorKind::config, "grid intervals must be positive");
}

namespace {

Index nearest_along(double coord, double origin, double delta, Index n, bool& outside) {
  const double extent = static_cast<double>(n) * delta;
  if (!(coord >= origin && coord <= origin + extent)) outside = true;
  const double u = (coord - origin) / delta - 0.5;
  if (!(u > 0.0)) return 0;
  if (u >= static_cast<double>(n - 1)) return n - 1;
  const auto lo = static_cast<Index>(std::floor(u));
  const double d_lo = coord - (origin + (static_cast<double>(lo) + 0.5) * delta);
  const double d_hi = coord - (origin + (static_cast<double>(lo) + 1.5) * delta);
  return d_hi * d_hi < d_lo * d_lo ? lo + 1 : lo;
}

}  // namespace

CellIndex nearest_cell(const Point& p, const GridSpec& spec) {
  CellIndex c;
  c.j = nearest_along(p.x(), spec.origin.x(), spec.delta_x, spec.nx, c.clamped);
  c.i = nearest_along(p.y(), spec.origin.y(), spec.delta_y, spec.ny, c.clamped);
  return c;
}

AggregatedGrid aggregate(const MeasurementSet& measurements, const GridSpec& spec) {
  spec.validate();
  AggregatedGrid g;
  g.values = RowMatrix::Zero(spec.ny, spec.nx);
  g.counts = CountGrid::Zero(spec.ny, spec.nx);
  for (Index n = 0; n < measurements.size(); ++n) {
    const auto c = nearest_cell(measurements.coords.row(n).transpose(), spec);
    g.values(c.i, c.j) += measurements.values(n);
    g.counts(c.i, c.j) += 1;
  }
  for (Index i = 0; i < spec.ny; ++i) {
    for (Index j = 0; j < spec.nx; ++j) {
      if (g.counts(i, j) > 0) g.values(i, j) /= static_cast<double>(g.counts(i, j));
    }
  }
  return g;
}

Eigen::VectorXd lookup_feature(const Point& p, const Tensor& feature_grid, const GridSpec& spec) {
  if (feature_grid.rank() != 3 || feature_grid.dim(0) == 0) {
    throw Error(ErrorKind::dimension, "lookup_feature: feature grid must be C x ny x nx with C > 0");
  }
  if (static_cast<Index>(feature_grid.dim(1)) != spec.ny || static_cast<Index>(feature_grid.dim(2)) != spec.nx) {
    throw Error(ErrorKind::dimension, "lookup_feature: feature grid " + shape_string(feature_grid.shape()) +
                                          " does not match grid spec");
  }
  const auto cell = nearest_cell(p, spec).flat(spec);
  const auto channels = static_cast<Index>(feature_grid.dim(0));
  const auto hw = static_cast<std::size_t>(spec.cell_count());
  Eigen::VectorXd out(channels);
  for (Index c = 0; c < channels; ++c) out(c) = feature_grid[static_cast<std::size_t>(c) * hw + cell];
  return out;
}

std::vector<std::size_t> nearest_cells(const PointList& points, const GridSpec& spec) {
  std::vector<std::size_t> cells(static_cast<std::size_t>(points.rows()));
  for (Index r = 0; r < points.rows(); ++r) {
    cells[static_cast<std::size_t>(r)] = nearest_cell(points.row(r).transpose(), spec).flat(spec);
  }
  return cells;
}

}  // namespace rme
