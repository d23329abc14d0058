// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the test binaries: random tensors, a central-difference
// gradient checker and small synthetic samples.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rme/cgformer.hpp"
#include "rme/ops.hpp"
#include "rme/rng.hpp"
#include "rme/scene.hpp"

namespace rme::test {

inline std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, lo, hi);
  return v;
}

inline Tensor random_parameter(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  const auto n = shape_size(shape);
  return Tensor::parameter(std::move(shape), random_values(n, rng, lo, hi));
}

inline Tensor random_constant(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  const auto n = shape_size(shape);
  return Tensor::constant(std::move(shape), random_values(n, rng, lo, hi));
}

inline RowMatrix random_matrix(Index rows, Index cols, Rng& rng) {
  RowMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -1.0, 1.0);
  return m;
}

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

struct GradCheckResult {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

/// Compares tape gradients of the scalar `loss_fn()` with central
/// differences of step `h` for `params`. With `per_tensor` > 0 only that many
/// randomly chosen entries of each tensor are probed.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                                  double h = 1e-5, int per_tensor = -1, std::uint64_t seed = 1) {
  std::vector<std::vector<double>> analytic;
  double floor = 0.0;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = loss_fn();
    // Central differences carry roundoff of order eps * |loss| / h.
    floor = 1e-5 * std::max(1.0, std::abs(loss.item()));
    tape.backward(loss);
    for (const auto& p : params) {
      auto g = tape.grad(p);
      analytic.emplace_back(g.empty() ? std::vector<double>(p.size(), 0.0) : std::vector<double>(g.begin(), g.end()));
    }
  }
  Rng rng(seed);
  GradCheckResult out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor p = params[t];
    std::vector<std::size_t> entries(p.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (per_tensor > 0 && entries.size() > static_cast<std::size_t>(per_tensor)) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(static_cast<std::size_t>(per_tensor));
    }
    auto data = p.mutable_data();
    for (std::size_t i : entries) {
      const double v = data[i];
      data[i] = v + h;
      const double fp = loss_fn().item();
      data[i] = v - h;
      const double fm = loss_fn().item();
      data[i] = v;
      const double numeric = (fp - fm) / (2.0 * h);
      out.max_rel = std::max(out.max_rel, relative_error(analytic[t][i], numeric, floor));
      ++out.checked;
    }
  }
  return out;
}

// Weighted sum so every output entry carries a distinct cotangent.
inline Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_constant(y.shape(), rng)));
}

struct OpCase {
  std::string name;
  std::function<Tensor()> loss;
  std::vector<Tensor> params;
};

/// One scalar loss per differentiable op, with fresh random inputs per draw.
inline std::vector<OpCase> op_gradient_cases(std::uint64_t draw) {
  Rng rng(derive_seed(101, draw));
  const Tensor a = random_parameter({3, 4}, rng), b = random_parameter({4, 5}, rng), c = random_parameter({3, 4}, rng);
  // Inputs bounded away from the kink.
  std::vector<double> away = random_values(12, rng, 0.05, 1.0);
  for (std::size_t i = 0; i < away.size(); i += 2) away[i] = -away[i];
  const Tensor k = Tensor::parameter({3, 4}, away);
  const Tensor bias = random_parameter({5}, rng);
  const Tensor logits = random_parameter({3, 6}, rng, -3, 3);
  const Tensor gamma = random_parameter({4}, rng), beta = random_parameter({4}, rng);
  const Tensor img = random_parameter({2, 5, 6}, rng), kern = random_parameter({3, 2, 3, 3}, rng),
               kb = random_parameter({3}, rng);
  const auto parts = std::make_shared<std::vector<Tensor>>(std::vector<Tensor>{a, c, random_constant({3, 2}, rng)});
  const auto cells = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{0, 7, 7, 29, 3});
  const Tensor truth = random_constant({3, 4}, rng);
  return {
      {"matmul", [=] { return probe(matmul(a, b), 1); }, {a, b}},
      {"transpose", [=] { return probe(transpose(a), 2); }, {a}},
      {"add", [=] { return probe(add(a, c), 3); }, {a, c}},
      {"sub", [=] { return probe(sub(a, c), 4); }, {a, c}},
      {"mul", [=] { return probe(mul(a, c), 5); }, {a, c}},
      {"scale", [=] { return probe(scale(a, -1.7), 6); }, {a}},
      {"relu", [=] { return probe(relu(k), 7); }, {k}},
      {"linear", [=] { return probe(linear(a, b, bias), 8); }, {a, b, bias}},
      {"softmax_rows", [=] { return probe(softmax_rows(logits), 9); }, {logits}},
      {"layer_norm", [=] { return probe(layer_norm(a, gamma, beta), 10); }, {a, gamma, beta}},
      {"conv2d", [=] { return probe(conv2d(img, kern, kb), 11); }, {img, kern, kb}},
      {"concat_last_axis", [=] { return probe(concat_last_axis(std::span<const Tensor>(*parts)), 12); }, {a, c}},
      {"slice_last_axis", [=] { return probe(slice_last_axis(a, 1, 2), 13); }, {a}},
      {"gather_cells", [=] { return probe(gather_cells(img, *cells), 14); }, {img}},
      {"sum", [=] { return scale(sum(a), 0.3); }, {a}},
      {"mean", [=] { return mean(mul(a, a)); }, {a}},
      {"mse_loss", [=] { return mse_loss(a, truth); }, {a}},
      {"reshape", [=] { return probe(reshape(a, {2, 6}), 15); }, {a}},
  };
}

/// Open-field sub-map of `n` x `n` cells with a smooth synthetic field and an
/// optional building block in the middle.
inline SubMap toy_submap(Index n, double delta, bool building, std::uint64_t seed) {
  Rng rng(seed);
  const double a = uniform(rng, -1.0, 1.0), b = uniform(rng, -1.0, 1.0);
  SubMap sub;
  sub.map.grid = GridSpec{n, n, delta, delta, Point(10.0, 20.0)};
  sub.map.values.resize(n, n);
  sub.map.building_mask = Mask::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      sub.map.values(i, j) = -60.0 + 8.0 * std::sin(a * static_cast<double>(i) + 0.3) +
                             6.0 * std::cos(b * static_cast<double>(j)) + uniform(rng, -1.0, 1.0);
    }
  }
  if (building) {
    for (Index i = n / 2 - 1; i <= n / 2; ++i) {
      for (Index j = n / 2 - 1; j <= n / 2; ++j) {
        sub.map.building_mask(i, j) = 1;
        sub.map.values(i, j) = kBuildingPower;
      }
    }
  }
  sub.extent.origin = sub.map.grid.origin;
  sub.extent.size = Point(sub.map.grid.width(), sub.map.grid.height());
  return sub;
}

/// Sample with exactly `n_meas` measurements and `n_query` targets drawn
/// from the open cells of an `n` x `n` toy map.
inline Sample toy_sample(Index n_meas, Index n_query, std::uint64_t seed, Index n = 8) {
  const Sample full = full_map_sample(toy_submap(n, 3.25, true, seed));
  std::vector<Index> order(static_cast<std::size_t>(full.query_count()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  Rng rng(derive_seed(seed, 1));
  std::shuffle(order.begin(), order.end(), rng);
  Sample s;
  s.extent = full.extent;
  s.b_mask = full.b_mask;
  s.s_mask = Mask::Zero(s.b_mask.rows(), s.b_mask.cols());
  s.sampling_factor = static_cast<double>(n_meas + n_query) / static_cast<double>(order.size());
  s.measurements.coords.resize(n_meas, 2);
  s.measurements.values.resize(n_meas);
  s.target_coords.resize(n_query, 2);
  s.target_values.resize(n_query);
  for (Index k = 0; k < n_meas + n_query; ++k) {
    const Index src = order[static_cast<std::size_t>(k)];
    if (k < n_meas) {
      s.measurements.coords.row(k) = full.target_coords.row(src);
      s.measurements.values(k) = full.target_values(src);
      const auto c = nearest_cell(full.target_coords.row(src).transpose(), s.grid());
      s.s_mask(c.i, c.j) = 1;
    } else {
      s.target_coords.row(k - n_meas) = full.target_coords.row(src);
      s.target_values(k - n_meas) = full.target_values(src);
    }
  }
  return s;
}

}  // namespace rme::test
