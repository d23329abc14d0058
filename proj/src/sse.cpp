// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/sse.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "rme/ops.hpp"

namespace rme {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_posenc: return "no-posenc";
    case Variant::no_b: return "no-b";
    case Variant::no_s: return "no-s";
  }
  return "full";
}

std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::full: return "Full CGFormer";
    case Variant::no_posenc: return "w/o PosEnc";
    case Variant::no_b: return "w/o B";
    case Variant::no_s: return "w/o S";
  }
  return "Full CGFormer";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::full, Variant::no_posenc, Variant::no_b, Variant::no_s}) {
    if (name == variant_name(v)) return v;
  }
  throw Error(ErrorKind::config, "unknown variant '" + std::string(name) + "' (expected full, no-posenc, no-b, no-s)");
}

void SseConfig::validate() const {
  if (frequencies < 1) throw Error(ErrorKind::config, "frequency count L must be >= 1");
  if (d_b < 1 || d_s < 1 || cnn_hidden < 1 || mlp_hidden < 1 || embed_dim < 1) {
    throw Error(ErrorKind::config, "embedding dimensions must be positive");
  }
}

Tensor LinearLayer::operator()(const Tensor& x) const { return linear(x, weight, bias); }

namespace {

std::vector<double> glorot(std::size_t n, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> w(n);
  for (auto& v : w) v = dist(rng);
  return w;
}

}  // namespace

LinearLayer init_linear(int in, int out, Rng& rng) {
  const auto i = static_cast<std::size_t>(in), o = static_cast<std::size_t>(out);
  return {Tensor::parameter({i, o}, glorot(i * o, in, out, rng)), Tensor::parameter({o}, std::vector<double>(o, 0.0))};
}

ConvLayer init_conv(int in, int out, int k, Rng& rng) {
  const auto i = static_cast<std::size_t>(in), o = static_cast<std::size_t>(out), kk = static_cast<std::size_t>(k);
  return {Tensor::parameter({o, i, kk, kk}, glorot(o * i * kk * kk, in * k * k, out * k * k, rng)),
          Tensor::parameter({o}, std::vector<double>(o, 0.0))};
}

SseParams init_sse_params(const SseConfig& config, Rng& rng) {
  config.validate();
  SseParams p;
  auto make_stack = [&](int out) {
    return CnnStack{init_conv(1, config.cnn_hidden, 5, rng), init_conv(config.cnn_hidden, config.cnn_hidden, 3, rng),
                    init_conv(config.cnn_hidden, out, 3, rng)};
  };
  p.cnn_b = make_stack(config.d_b);
  p.cnn_s = make_stack(config.d_s);
  const int h = config.mlp_hidden;
  p.mlp = {init_linear(config.input_dim(), h, rng), init_linear(h, h, rng), init_linear(h, h, rng),
           init_linear(h, h, rng), init_linear(h, config.embed_dim, rng)};
  return p;
}

Eigen::VectorXd sin_encode(double x, int frequencies) {
  if (frequencies < 1) throw Error(ErrorKind::config, "sin_encode: L must be >= 1");
  if (!std::isfinite(x)) throw Error(ErrorKind::numeric, "sin_encode: non-finite coordinate");
  Eigen::VectorXd e(2 * frequencies + 1);
  e(0) = x;
  double freq = std::numbers::pi;
  for (int k = 0; k < frequencies; ++k) {
    e(1 + 2 * k) = std::sin(freq * x);
    e(2 + 2 * k) = std::cos(freq * x);
    freq *= 2.0;
  }
  return e;
}

Tensor cnn_encode(const Mask& mask, const CnnStack& stack) {
  const auto h = static_cast<std::size_t>(mask.rows()), w = static_cast<std::size_t>(mask.cols());
  std::vector<double> x(h * w);
  for (std::size_t n = 0; n < x.size(); ++n) x[n] = static_cast<double>(mask.data()[n] != 0);
  const Tensor input = Tensor::constant({1, h, w}, std::move(x));
  Tensor y = relu(conv2d(input, stack[0].kernel, stack[0].bias));
  y = relu(conv2d(y, stack[1].kernel, stack[1].bias));
  return conv2d(y, stack[2].kernel, stack[2].bias);
}

PriorFeatures encode_priors(const Mask& b_mask, const Mask& s_mask, const SseParams& params, const SseConfig& config) {
  if (b_mask.rows() != s_mask.rows() || b_mask.cols() != s_mask.cols()) {
    throw Error(ErrorKind::dimension, "encode_priors: building and sampling masks differ in size");
  }
  PriorFeatures f;
  if (config.use_b()) f.e_b = cnn_encode(b_mask, params.cnn_b);
  if (config.use_s()) f.e_s = cnn_encode(s_mask, params.cnn_s);
  return f;
}

Eigen::Vector2d normalize_coord(const Point& p, const Extent& extent) {
  if (!p.allFinite()) throw Error(ErrorKind::numeric, "non-finite coordinate");
  Eigen::Vector2d u = (p - extent.origin).cwiseQuotient(extent.size);
  return u.cwiseMax(0.0).cwiseMin(1.0);
}

Tensor coordinate_features(const PointList& points, const Extent& extent, const SseConfig& config) {
  const auto n = static_cast<std::size_t>(points.rows());
  const auto width = static_cast<std::size_t>(config.coord_dim());
  std::vector<double> out(n * width);
  for (std::size_t r = 0; r < n; ++r) {
    const auto u = normalize_coord(points.row(static_cast<Index>(r)).transpose(), extent);
    double* row = out.data() + r * width;
    if (!config.use_posenc()) {
      row[0] = u.x();
      row[1] = u.y();
      continue;
    }
    const auto ex = sin_encode(u.x(), config.frequencies);
    const auto ey = sin_encode(u.y(), config.frequencies);
    std::copy(ex.data(), ex.data() + ex.size(), row);
    std::copy(ey.data(), ey.data() + ey.size(), row + ex.size());
  }
  return Tensor::constant({n, width}, std::move(out));
}

Tensor assemble_embedding_input(const PointList& points, const PriorFeatures& priors, const GridSpec& grid,
                                const Extent& extent, const SseConfig& config) {
  if (points.rows() == 0) throw Error(ErrorKind::degenerate, "embedding requested for an empty point list");
  const auto n = static_cast<std::size_t>(points.rows());
  const auto cells = nearest_cells(points, grid);
  auto semantic = [&](const Tensor& features, int dim) {
    if (!features.valid()) return Tensor::zeros({n, static_cast<std::size_t>(dim)});
    if (static_cast<Index>(features.dim(1)) != grid.ny || static_cast<Index>(features.dim(2)) != grid.nx) {
      throw Error(ErrorKind::dimension, "prior features " + shape_string(features.shape()) + " do not match the grid");
    }
    return gather_cells(features, cells);
  };
  const Tensor parts[] = {coordinate_features(points, extent, config), semantic(priors.e_b, config.d_b),
                          semantic(priors.e_s, config.d_s)};
  return concat_last_axis(std::span<const Tensor>(parts));
}

Tensor residual_mlp(const Tensor& h, const SseParams& params) {
  const auto& l = params.mlp;
  const Tensor a1 = relu(l[0](h));
  const Tensor a2 = relu(l[1](a1));
  const Tensor a3 = relu(add(l[2](a2), a1));
  const Tensor a4 = relu(l[3](a3));
  return l[4](a4);
}

Tensor embed_batch(const PointList& points, const PriorFeatures& priors, const GridSpec& grid, const Extent& extent,
                   const SseParams& params, const SseConfig& config) {
  return residual_mlp(assemble_embedding_input(points, priors, grid, extent, config), params);
}

Eigen::VectorXd embed_point(const Point& p, const PriorFeatures& priors, const GridSpec& grid, const Extent& extent,
                            const SseParams& params, const SseConfig& config) {
  PointList one(1, 2);
  one.row(0) = p.transpose();
  const Tensor u = embed_batch(one, priors, grid, extent, params, config);
  return Eigen::Map<const Eigen::VectorXd>(u.data().data(), static_cast<Index>(u.size()));
}

}  // namespace rme
