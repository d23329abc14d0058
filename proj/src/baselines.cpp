// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "rme/metrics.hpp"
#include "rme/parallel.hpp"

namespace rme {

std::string_view method_name(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::knn: return "knn";
    case BaselineMethod::idw: return "idw";
    case BaselineMethod::kriging: return "kriging";
    case BaselineMethod::gpr: return "gpr";
  }
  return "knn";
}

BaselineMethod parse_method(std::string_view name) {
  for (auto m : {BaselineMethod::knn, BaselineMethod::idw, BaselineMethod::kriging, BaselineMethod::gpr}) {
    if (name == method_name(m)) return m;
  }
  throw Error(ErrorKind::config, "unknown baseline '" + std::string(name) + "' (expected knn, idw, kriging, gpr)");
}

double Variogram::operator()(double d) const {
  if (d <= 0.0) return 0.0;
  return nugget + (sill - nugget) * (1.0 - std::exp(-d / range));
}

double RbfKernel::operator()(double d) const {
  return signal_variance * std::exp(-(d * d) / (2.0 * lengthscale * lengthscale));
}

void BaselineConfig::validate() const {
  switch (method) {
    case BaselineMethod::knn:
      if (k < 1) throw Error(ErrorKind::config, "knn: k must be >= 1");
      break;
    case BaselineMethod::idw:
      if (!(power > 0.0)) throw Error(ErrorKind::config, "idw: power must be > 0");
      break;
    case BaselineMethod::kriging:
      if (!(variogram.range > 0.0)) throw Error(ErrorKind::config, "kriging: range must be > 0");
      if (variogram.nugget < 0.0 || variogram.sill < variogram.nugget) {
        throw Error(ErrorKind::config, "kriging: need 0 <= nugget <= sill");
      }
      break;
    case BaselineMethod::gpr:
      if (!(kernel.lengthscale > 0.0)) throw Error(ErrorKind::config, "gpr: lengthscale must be > 0");
      if (!(kernel.signal_variance > 0.0)) throw Error(ErrorKind::config, "gpr: signal variance must be > 0");
      if (kernel.noise_variance < 0.0) throw Error(ErrorKind::config, "gpr: noise variance must be >= 0");
      break;
  }
}

std::string BaselineConfig::describe() const {
  std::ostringstream os;
  os.precision(6);
  os << method_name(method);
  switch (method) {
    case BaselineMethod::knn: os << " k=" << k; break;
    case BaselineMethod::idw: os << " power=" << power; break;
    case BaselineMethod::kriging:
      os << " nugget=" << variogram.nugget << " sill=" << variogram.sill << " range=" << variogram.range;
      break;
    case BaselineMethod::gpr:
      os << " lengthscale=" << kernel.lengthscale << " signal=" << kernel.signal_variance
         << " noise=" << kernel.noise_variance;
      break;
  }
  if (data_scaled && (method == BaselineMethod::kriging || method == BaselineMethod::gpr)) os << " scaled";
  return os.str();
}

namespace {

void require_measurements(const MeasurementSet& m, Index min, const char* who) {
  if (m.size() < min) {
    throw Error(ErrorKind::degenerate, std::string(who) + ": needs at least " + std::to_string(min) +
                                           " measurement(s), got " + std::to_string(m.size()));
  }
}

double distance(const MeasurementSet& m, Index i, const Point& p) { return (m.coords.row(i).transpose() - p).norm(); }

double distance(const PointList& a, Index i, const PointList& b, Index j) {
  return (a.row(i) - b.row(j)).norm();
}

double population_variance(const Eigen::VectorXd& v) {
  const double mu = v.mean();
  return (v.array() - mu).square().sum() / static_cast<double>(v.size());
}

}  // namespace

double knn_predict(const MeasurementSet& m, const Point& p, int k) {
  require_measurements(m, 1, "knn");
  if (k < 1) throw Error(ErrorKind::config, "knn: k must be >= 1");
  const auto n = static_cast<std::size_t>(m.size());
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), n);
  std::vector<std::pair<double, Index>> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = {distance(m, static_cast<Index>(i), p), static_cast<Index>(i)};
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < kk; ++i) acc += m.values(order[i].second);
  return acc / static_cast<double>(kk);
}

double idw_predict(const MeasurementSet& m, const Point& p, double power) {
  require_measurements(m, 1, "idw");
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < m.size(); ++i) {
    const double d = distance(m, i, p);
    if (d < 1e-12) return m.values(i);
    const double w = std::pow(d, -power);
    num += w * m.values(i);
    den += w;
  }
  return num / den;
}

KrigingResult kriging_predict(const MeasurementSet& m, const PointList& queries, const Variogram& variogram) {
  require_measurements(m, 2, "kriging");
  const Index n = m.size();
  const Index q = queries.rows();
  Eigen::MatrixXd a(n + 1, n + 1);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) a(i, j) = variogram(distance(m.coords, i, m.coords, j));
    a(i, n) = 1.0;
    a(n, i) = 1.0;
  }
  a(n, n) = 0.0;
  Eigen::MatrixXd rhs(n + 1, q);
  for (Index c = 0; c < q; ++c) {
    for (Index i = 0; i < n; ++i) rhs(i, c) = variogram(distance(m.coords, i, queries, c));
    rhs(n, c) = 1.0;
  }

  KrigingResult out;
  out.values.resize(q);
  out.weights.resize(q, n);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  Eigen::MatrixXd sol;
  if (lu.isInvertible()) {
    sol = lu.solve(rhs);
    if (!sol.allFinite()) out.fallback = true;
  } else {
    out.fallback = true;
  }
  if (out.fallback) {
    for (Index c = 0; c < q; ++c) {
      const Point p = queries.row(c).transpose();
      Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
      Index hit = -1;
      for (Index i = 0; i < n && hit < 0; ++i) {
        const double d = distance(m, i, p);
        if (d < 1e-12) hit = i;
        else w(i) = 1.0 / (d * d);
      }
      if (hit >= 0) {
        w.setZero();
        w(hit) = 1.0;
      }
      w /= w.sum();
      out.weights.row(c) = w.transpose();
      out.values(c) = w.dot(m.values);
    }
    return out;
  }
  out.weights = sol.topRows(n).transpose();
  out.values = out.weights * m.values;
  return out;
}

GprResult gpr_predict(const MeasurementSet& m, const PointList& queries, const RbfKernel& kernel, bool with_variance) {
  require_measurements(m, 1, "gpr");
  const Index n = m.size();
  const Index q = queries.rows();
  const double mu = m.values.mean();
  Eigen::MatrixXd k(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) k(i, j) = kernel(distance(m.coords, i, m.coords, j));
  }
  Eigen::MatrixXd ks(n, q);
  for (Index c = 0; c < q; ++c) {
    for (Index i = 0; i < n; ++i) ks(i, c) = kernel(distance(m.coords, i, queries, c));
  }
  const Eigen::VectorXd centered = m.values.array() - mu;

  GprResult out;
  double noise = kernel.noise_variance;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    if (attempt > 0) {
      noise = noise > 0.0 ? noise * 10.0 : 1e-10 * kernel.signal_variance;
      out.jitter_steps = attempt;
    }
    Eigen::MatrixXd kn = k;
    kn.diagonal().array() += noise;
    Eigen::LLT<Eigen::MatrixXd> llt(kn);
    if (llt.info() != Eigen::Success) continue;
    const Eigen::VectorXd alpha = llt.solve(centered);
    if (!alpha.allFinite()) continue;
    out.mean = (ks.transpose() * alpha).array() + mu;
    if (with_variance) {
      const Eigen::MatrixXd v = llt.matrixL().solve(ks);
      out.variance = (kernel.signal_variance - v.colwise().squaredNorm().array()).cwiseMax(0.0).transpose();
    }
    return out;
  }
  throw Error(ErrorKind::numeric, "gpr: covariance factorisation failed after 3 jitter escalations (final noise " +
                                      std::to_string(noise) + ")");
}

Eigen::VectorXd baseline_predict(const BaselineConfig& config, const MeasurementSet& m, const PointList& queries) {
  config.validate();
  const Index q = queries.rows();
  Eigen::VectorXd out(q);
  switch (config.method) {
    case BaselineMethod::knn:
      for (Index c = 0; c < q; ++c) out(c) = knn_predict(m, queries.row(c).transpose(), config.k);
      return out;
    case BaselineMethod::idw:
      for (Index c = 0; c < q; ++c) out(c) = idw_predict(m, queries.row(c).transpose(), config.power);
      return out;
    case BaselineMethod::kriging: {
      if (m.size() < 2) {
        for (Index c = 0; c < q; ++c) out(c) = idw_predict(m, queries.row(c).transpose(), 2.0);
        return out;
      }
      Variogram v = config.variogram;
      if (config.data_scaled) {
        double var = population_variance(m.values);
        if (var < 1e-12) var = 1.0;
        v.nugget *= var / v.sill;
        v.sill = var;
      }
      return kriging_predict(m, queries, v).values;
    }
    case BaselineMethod::gpr: {
      RbfKernel kern = config.kernel;
      if (config.data_scaled) {
        double var = population_variance(m.values);
        if (var < 1e-12) var = 1.0;
        kern.noise_variance *= var / kern.signal_variance;
        kern.signal_variance = var;
      }
      return gpr_predict(m, queries, kern).mean;
    }
  }
  return out;
}

std::vector<BaselineConfig> candidate_configs(BaselineMethod method, double cell_size) {
  std::vector<BaselineConfig> out;
  const double scales[] = {1, 2, 4, 8, 16};
  BaselineConfig base;
  base.method = method;
  switch (method) {
    case BaselineMethod::knn:
      for (int k : {1, 3, 5, 9, 15}) {
        base.k = k;
        out.push_back(base);
      }
      break;
    case BaselineMethod::idw:
      for (double p : {1.0, 2.0, 3.0}) {
        base.power = p;
        out.push_back(base);
      }
      break;
    case BaselineMethod::kriging:
      for (double s : scales) {
        for (double nugget : {0.0, 0.05}) {
          base.variogram = {nugget, 1.0, s * cell_size};
          out.push_back(base);
        }
      }
      break;
    case BaselineMethod::gpr:
      for (double s : scales) {
        for (double noise : {1e-4, 1e-2, 1e-1}) {
          base.kernel = {s * cell_size, 1.0, noise};
          out.push_back(base);
        }
      }
      break;
  }
  return out;
}

BaselineConfig fit_hyperparams(std::span<const Sample> validation, BaselineMethod method, double cell_size) {
  if (!(cell_size > 0.0)) throw Error(ErrorKind::config, "fit_hyperparams: cell size must be > 0");
  const auto candidates = candidate_configs(method, cell_size);
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    if (!validation[i].measurements.empty() && validation[i].query_count() > 0) usable.push_back(i);
  }
  if (usable.empty()) return candidates.front();

  std::size_t best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::vector<double> scores(usable.size());
    parallel_for(usable.size(), [&](std::size_t u) {
      const Sample& s = validation[usable[u]];
      try {
        scores[u] = rmse(baseline_predict(candidates[c], s.measurements, s.target_coords), s.target_values);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numeric) throw;
        scores[u] = std::numeric_limits<double>::infinity();
      }
    });
    double score = 0.0;
    for (double v : scores) score += v;
    score /= static_cast<double>(scores.size());
    const bool better = std::isinf(best_score) ? score < best_score
                                               : score < best_score - 1e-9 * (1.0 + best_score);
    if (better) {
      best = c;
      best_score = score;
    }
  }
  return candidates[best];
}

}  // namespace rme
