// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace rme {

bool Scene::inside_building(const Point& p) const {
  return std::any_of(buildings.begin(), buildings.end(), [&](const Rect& r) { return r.contains(p); });
}

Scene generate_scene(const LayoutConfig& layout, std::uint64_t seed) {
  if (!(layout.delta > 0.0)) throw Error(ErrorKind::config, "scene interval delta must be positive");
  if (layout.ny < 1 || layout.nx < 1) throw Error(ErrorKind::config, "scene grid must be non-empty");
  if (layout.transmitters < 1) throw Error(ErrorKind::config, "scene needs at least one transmitter");
  if (layout.building_min_cells < 1 || layout.building_max_cells < layout.building_min_cells) {
    throw Error(ErrorKind::config, "invalid building size range");
  }
  Rng rng(derive_seed(seed, 0x5ce7e));
  Scene s;
  s.ny = layout.ny;
  s.nx = layout.nx;
  s.delta = layout.delta;
  s.width_m = static_cast<double>(layout.nx) * layout.delta;
  s.height_m = static_cast<double>(layout.ny) * layout.delta;

  std::uniform_int_distribution<int> size_dist(layout.building_min_cells, layout.building_max_cells);
  for (int b = 0; b < layout.buildings; ++b) {
    const int w = size_dist(rng);
    const int h = size_dist(rng);
    const int max_col = std::max<int>(0, static_cast<int>(layout.nx) - w);
    const int max_row = std::max<int>(0, static_cast<int>(layout.ny) - h);
    const int col = std::uniform_int_distribution<int>(0, max_col)(rng);
    const int row = std::uniform_int_distribution<int>(0, max_row)(rng);
    Rect r;
    r.x0 = col * layout.delta;
    r.y0 = row * layout.delta;
    r.x1 = std::min<double>(s.width_m, (col + w) * layout.delta);
    r.y1 = std::min<double>(s.height_m, (row + h) * layout.delta);
    s.buildings.push_back(r);
  }

  for (int t = 0; t < layout.transmitters; ++t) {
    Transmitter tx;
    bool placed = false;
    for (int attempt = 0; attempt < 100000 && !placed; ++attempt) {
      tx.position = Point(uniform(rng, 0.0, s.width_m), uniform(rng, 0.0, s.height_m));
      placed = !s.inside_building(tx.position);
    }
    if (!placed) throw Error(ErrorKind::config, "could not place a transmitter outside buildings");
    tx.power_dbm = uniform(rng, layout.power_min_dbm, layout.power_max_dbm);
    s.transmitters.push_back(tx);
  }
  return s;
}

bool segment_crosses(const Point& a, const Point& b, const Rect& r) {
  // Liang-Barsky clip of a + t (b - a), t in [0, 1].
  const Point d = b - a;
  double t0 = 0.0, t1 = 1.0;
  const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double q[4] = {a.x() - r.x0, r.x1 - a.x(), a.y() - r.y0, r.y1 - a.y()};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] <= 0.0) return false;
      continue;
    }
    const double t = q[k] / p[k];
    if (p[k] < 0.0) {
      t0 = std::max(t0, t);
    } else {
      t1 = std::min(t1, t);
    }
    if (t0 >= t1) return false;
  }
  return t0 < t1;
}

int count_walls(const Point& a, const Point& b, std::span<const Rect> buildings) {
  int n = 0;
  for (const auto& r : buildings) n += segment_crosses(a, b, r) ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------

ShadowField::ShadowField(const Scene& scene, const PropagationConfig& config, std::uint64_t seed)
    : grid_(scene.grid()) {
  const Index ny = scene.ny, nx = scene.nx;
  lattice_ = RowMatrix::Zero(ny, nx);
  if (config.shadow_sigma_db == 0.0) return;
  if (!(config.shadow_corr_cells > 0.0)) throw Error(ErrorKind::config, "shadow correlation length must be positive");

  Rng rng(derive_seed(seed, 0x5ad0));
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix noise(ny, nx);
  for (Index i = 0; i < ny; ++i) {
    for (Index j = 0; j < nx; ++j) noise(i, j) = normal(rng);
  }

  const double sigma = config.shadow_corr_cells;
  const auto radius = static_cast<Index>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  for (Index k = -radius; k <= radius; ++k) {
    taps[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  }
  // Each pass divides by sqrt(sum w^2) over the taps in range, which keeps
  // unit variance everywhere including the borders.
  auto smooth = [&](const RowMatrix& in, bool along_x) {
    RowMatrix out(ny, nx);
    for (Index i = 0; i < ny; ++i) {
      for (Index j = 0; j < nx; ++j) {
        double acc = 0.0, energy = 0.0;
        for (Index k = -radius; k <= radius; ++k) {
          const Index ii = along_x ? i : i + k;
          const Index jj = along_x ? j + k : j;
          if (ii < 0 || ii >= ny || jj < 0 || jj >= nx) continue;
          const double w = taps[static_cast<std::size_t>(k + radius)];
          acc += w * in(ii, jj);
          energy += w * w;
        }
        out(i, j) = acc / std::sqrt(energy);
      }
    }
    return out;
  };
  lattice_ = config.shadow_sigma_db * smooth(smooth(noise, true), false);
}

double ShadowField::at(const Point& p) const {
  if (lattice_.size() == 0) return 0.0;
  auto coord = [](double v, double origin, double delta, Index n, Index& lo, double& frac) {
    double u = (v - origin) / delta - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(n - 1));
    lo = std::min<Index>(static_cast<Index>(std::floor(u)), std::max<Index>(n - 2, 0));
    frac = n > 1 ? u - static_cast<double>(lo) : 0.0;
  };
  Index i0, j0;
  double fy, fx;
  coord(p.x(), grid_.origin.x(), grid_.delta_x, grid_.nx, j0, fx);
  coord(p.y(), grid_.origin.y(), grid_.delta_y, grid_.ny, i0, fy);
  const Index i1 = std::min<Index>(i0 + 1, grid_.ny - 1);
  const Index j1 = std::min<Index>(j0 + 1, grid_.nx - 1);
  return (1.0 - fy) * ((1.0 - fx) * lattice_(i0, j0) + fx * lattice_(i0, j1)) +
         fy * ((1.0 - fx) * lattice_(i1, j0) + fx * lattice_(i1, j1));
}

// ---------------------------------------------------------------------------

RadioMap render_single_tx_map(const Scene& scene, std::size_t tx_index, const PropagationConfig& config,
                              std::uint64_t seed, const GridSpec& grid) {
  if (!(scene.delta > 0.0)) throw Error(ErrorKind::config, "scene interval delta must be positive");
  if (scene.transmitters.empty()) throw Error(ErrorKind::config, "scene has no transmitters");
  if (tx_index >= scene.transmitters.size()) {
    throw Error(ErrorKind::range, "transmitter index " + std::to_string(tx_index) + " out of range");
  }
  if (!(config.reference_distance > 0.0)) throw Error(ErrorKind::config, "reference distance must be positive");
  grid.validate();

  const auto& tx = scene.transmitters[tx_index];
  const ShadowField shadow(scene, config, derive_seed(seed, tx_index));
  RadioMap map;
  map.grid = grid;
  map.values.resize(grid.ny, grid.nx);
  map.building_mask = Mask::Zero(grid.ny, grid.nx);
  for (Index i = 0; i < grid.ny; ++i) {
    for (Index j = 0; j < grid.nx; ++j) {
      const Point xi = grid.cell_center(i, j);
      if (scene.inside_building(xi)) {
        map.values(i, j) = kBuildingPower;
        map.building_mask(i, j) = 1;
        continue;
      }
      const double d = std::max((xi - tx.position).norm(), config.reference_distance);
      double v = tx.power_dbm - 10.0 * config.path_loss_exponent * std::log10(d / config.reference_distance);
      if (config.wall_loss_db != 0.0) v -= config.wall_loss_db * count_walls(tx.position, xi, scene.buildings);
      v += shadow.at(xi);
      map.values(i, j) = v;
    }
  }
  return map;
}

RadioMap generate_single_tx_map(const Scene& scene, std::size_t tx_index, const PropagationConfig& config,
                                std::uint64_t seed) {
  return render_single_tx_map(scene, tx_index, config, seed, scene.grid());
}

double power_sum_db(double a, double b) {
  if (a == kBuildingPower) return b;
  if (b == kBuildingPower) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + 10.0 * std::log10(1.0 + std::pow(10.0, (lo - hi) / 10.0));
}

RadioMap aggregate_two_tx(const RadioMap& a, const RadioMap& b) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols()) {
    throw Error(ErrorKind::dimension, "aggregate_two_tx: maps have different grids");
  }
  RadioMap out;
  out.grid = a.grid;
  out.building_mask = a.building_mask.cwiseMax(b.building_mask);
  out.values.resize(a.values.rows(), a.values.cols());
  for (Index i = 0; i < out.values.rows(); ++i) {
    for (Index j = 0; j < out.values.cols(); ++j) {
      out.values(i, j) = out.building_mask(i, j) ? kBuildingPower : power_sum_db(a.values(i, j), b.values(i, j));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

SubMap extract_subregion_at(const RadioMap& map, Index row0, Index col0, Index rows, Index cols) {
  if (rows < 1 || cols < 1 || rows > map.values.rows() || cols > map.values.cols()) {
    throw Error(ErrorKind::range, "sub-region " + std::to_string(rows) + "x" + std::to_string(cols) +
                                      " does not fit a " + std::to_string(map.values.rows()) + "x" +
                                      std::to_string(map.values.cols()) + " map");
  }
  if (row0 < 0 || col0 < 0 || row0 + rows > map.values.rows() || col0 + cols > map.values.cols()) {
    throw Error(ErrorKind::range, "sub-region origin outside the map");
  }
  SubMap sub;
  sub.row0 = row0;
  sub.col0 = col0;
  sub.map.values = map.values.block(row0, col0, rows, cols);
  sub.map.building_mask = map.building_mask.block(row0, col0, rows, cols);
  sub.map.grid = map.grid;
  sub.map.grid.ny = rows;
  sub.map.grid.nx = cols;
  sub.map.grid.origin = map.grid.origin + Point(static_cast<double>(col0) * map.grid.delta_x,
                                                static_cast<double>(row0) * map.grid.delta_y);
  sub.extent.origin = sub.map.grid.origin;
  sub.extent.size = Point(sub.map.grid.width(), sub.map.grid.height());
  return sub;
}

SubMap extract_subregion(const RadioMap& map, Index rows, Index cols, Rng& rng) {
  if (rows < 1 || cols < 1 || rows > map.values.rows() || cols > map.values.cols()) {
    throw Error(ErrorKind::range, "sub-region " + std::to_string(rows) + "x" + std::to_string(cols) +
                                      " larger than the map");
  }
  const Index row0 = std::uniform_int_distribution<Index>(0, map.values.rows() - rows)(rng);
  const Index col0 = std::uniform_int_distribution<Index>(0, map.values.cols() - cols)(rng);
  return extract_subregion_at(map, row0, col0, rows, cols);
}

GridSpec Sample::grid() const {
  GridSpec g;
  g.ny = b_mask.rows();
  g.nx = b_mask.cols();
  g.delta_x = extent.size.x() / static_cast<double>(g.nx);
  g.delta_y = extent.size.y() / static_cast<double>(g.ny);
  g.origin = extent.origin;
  return g;
}

Index sampled_count(double factor, Index open_cells) {
  if (!(factor > 0.0 && factor <= 1.0)) {
    throw Error(ErrorKind::range, "sampling factor must lie in (0, 1], got " + std::to_string(factor));
  }
  const auto k = static_cast<Index>(std::ceil(factor * static_cast<double>(open_cells) - 1e-9));
  return std::clamp<Index>(k, 0, open_cells);
}

namespace {

struct OpenCells {
  PointList coords;
  Eigen::VectorXd values;
};

// Splits the first `k` entries of `order` into measurements and targets.
Sample split_cells(const OpenCells& open, const std::vector<Index>& order, Index k, double split_ratio,
                   const Extent& extent, const Mask& b_mask, double factor) {
  if (k < 2) throw Error(ErrorKind::degenerate, "sample needs at least 2 sampled points, got " + std::to_string(k));
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw Error(ErrorKind::range, "split ratio must lie in (0, 1)");
  const Index n_meas = std::clamp<Index>(std::llround(static_cast<double>(k) * split_ratio), 1, k - 1);
  Sample s;
  s.extent = extent;
  s.b_mask = b_mask;
  s.sampling_factor = factor;
  s.measurements.coords.resize(n_meas, 2);
  s.measurements.values.resize(n_meas);
  s.target_coords.resize(k - n_meas, 2);
  s.target_values.resize(k - n_meas);
  for (Index n = 0; n < k; ++n) {
    const Index src = order[static_cast<std::size_t>(n)];
    if (n < n_meas) {
      s.measurements.coords.row(n) = open.coords.row(src);
      s.measurements.values(n) = open.values(src);
    } else {
      s.target_coords.row(n - n_meas) = open.coords.row(src);
      s.target_values(n - n_meas) = open.values(src);
    }
  }
  s.s_mask = Mask::Zero(b_mask.rows(), b_mask.cols());
  const GridSpec grid = s.grid();
  for (Index n = 0; n < n_meas; ++n) {
    const auto c = nearest_cell(s.measurements.coords.row(n).transpose(), grid);
    s.s_mask(c.i, c.j) = 1;
  }
  return s;
}

OpenCells open_cells(const SubMap& sub) {
  const auto& v = sub.map.values;
  std::vector<std::pair<Index, Index>> cells;
  for (Index i = 0; i < v.rows(); ++i) {
    for (Index j = 0; j < v.cols(); ++j) {
      if (!sub.map.building_mask(i, j)) cells.emplace_back(i, j);
    }
  }
  OpenCells open;
  open.coords.resize(static_cast<Index>(cells.size()), 2);
  open.values.resize(static_cast<Index>(cells.size()));
  for (std::size_t n = 0; n < cells.size(); ++n) {
    const auto [i, j] = cells[n];
    open.coords.row(static_cast<Index>(n)) = sub.map.grid.cell_center(i, j).transpose();
    open.values(static_cast<Index>(n)) = v(i, j);
  }
  return open;
}

std::vector<Index> shuffled(Index n, Rng& rng) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

std::vector<Sample> make_samples(const SubMap& sub, double factor, double split_ratio, int count, Rng& rng) {
  const OpenCells open = open_cells(sub);
  const Index k = sampled_count(factor, open.values.size());
  if (k < 2) throw Error(ErrorKind::degenerate, "sample needs at least 2 sampled points, got " + std::to_string(k));
  auto order = shuffled(open.values.size(), rng);
  order.resize(static_cast<std::size_t>(k));
  std::vector<Sample> out;
  for (int c = 0; c < count; ++c) {
    if (c > 0) std::shuffle(order.begin(), order.end(), rng);
    out.push_back(split_cells(open, order, k, split_ratio, sub.extent, sub.map.building_mask, factor));
  }
  return out;
}

Sample make_sample(const SubMap& sub, double factor, double split_ratio, Rng& rng) {
  return std::move(make_samples(sub, factor, split_ratio, 1, rng).front());
}

Sample full_map_sample(const SubMap& sub) {
  const OpenCells open = open_cells(sub);
  Sample s;
  s.extent = sub.extent;
  s.b_mask = sub.map.building_mask;
  s.s_mask = Mask::Zero(s.b_mask.rows(), s.b_mask.cols());
  s.sampling_factor = 1.0;
  s.measurements.coords.resize(0, 2);
  s.measurements.values.resize(0);
  s.target_coords = open.coords;
  s.target_values = open.values;
  return s;
}

Sample resample(const Sample& full, double factor, double split_ratio, Rng& rng) {
  OpenCells open{full.target_coords, full.target_values};
  const Index k = std::max<Index>(2, sampled_count(factor, open.values.size()));
  if (open.values.size() < 2) throw Error(ErrorKind::degenerate, "map has fewer than 2 open cells");
  auto order = shuffled(open.values.size(), rng);
  order.resize(static_cast<std::size_t>(k));
  return split_cells(open, order, k, split_ratio, full.extent, full.b_mask, factor);
}

}  // namespace rme
