// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/harness.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "rme/metrics.hpp"

namespace rme {

namespace {

std::string join_doubles(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

}  // namespace

void ExperimentConfig::validate() const {
  dataset.validate();
  model.validate();
  sse.validate();
  if (!(train.lr > 0.0) || train.batch < 1 || train.epochs < 0 || train.patience < 1 || train.max_train < 0) {
    throw Error(ErrorKind::config, "train: need lr > 0, batch >= 1, epochs >= 0, patience >= 1");
  }
  if (!(train.jitter >= 0.0 && train.jitter < 1.0)) throw Error(ErrorKind::config, "train.jitter must lie in [0, 1)");
  for (double f : factors) {
    if (!(f > 0.0 && f <= 1.0)) throw Error(ErrorKind::config, "sampling factor " + format_double(f) + " not in (0, 1]");
  }
  for (double f : offgrid_factors) {
    if (!(f > 0.0 && f <= 1.0)) throw Error(ErrorKind::config, "sampling factor " + format_double(f) + " not in (0, 1]");
  }
  if (seeds.empty()) throw Error(ErrorKind::config, "at least one seed is required");
  if (tune_samples < 1) throw Error(ErrorKind::config, "tune_samples must be >= 1");
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os << dataset.canonical();
  os << "eval.factors=" << join_doubles(factors) << "\n";
  os << "eval.offgrid_factors=" << join_doubles(offgrid_factors) << "\n";
  os << "eval.seeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\neval.tune_samples=" << tune_samples << "\n";
  os << "model.d_model=" << model.d_model << "\nmodel.n_heads=" << model.n_heads << "\nmodel.n_blocks="
     << model.n_blocks << "\nmodel.ffn_hidden=" << model.ffn_hidden << "\nmodel.fusion_hidden_1="
     << model.fusion_hidden_1 << "\nmodel.fusion_hidden_2=" << model.fusion_hidden_2
     << "\nmodel.normalize_keys=" << model.normalize_keys << "\n";
  os << "sse.frequencies=" << sse.frequencies << "\nsse.d_b=" << sse.d_b << "\nsse.d_s=" << sse.d_s
     << "\nsse.cnn_hidden=" << sse.cnn_hidden << "\nsse.mlp_hidden=" << sse.mlp_hidden
     << "\nsse.embed_dim=" << sse.embed_dim << "\nsse.variant=" << variant_name(sse.variant) << "\n";
  os << "train.lr=" << format_double(train.lr) << "\ntrain.batch=" << train.batch << "\ntrain.epochs="
     << train.epochs << "\ntrain.patience=" << train.patience << "\ntrain.max_train=" << train.max_train
     << "\ntrain.jitter=" << format_double(train.jitter) << "\n";
  return os.str();
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(canonical())); }

ExperimentConfig experiment_config_from(const ConfigMap& c) {
  auto known = dataset_config_keys();
  for (const char* k :
       {"model.d_model", "model.n_heads", "model.n_blocks", "model.ffn_hidden", "model.fusion_hidden_1",
        "model.fusion_hidden_2", "model.normalize_keys", "sse.frequencies", "sse.d_b", "sse.d_s", "sse.cnn_hidden",
        "sse.mlp_hidden", "sse.embed_dim", "sse.variant", "train.lr", "train.batch", "train.epochs",
        "train.patience", "train.max_train", "train.jitter", "eval.factors", "eval.offgrid_factors", "eval.seeds",
        "eval.tune_samples"}) {
    known.emplace_back(k);
  }
  c.require_known(known);
  ExperimentConfig e;
  e.dataset = dataset_config_from(c);
  auto& m = e.model;
  m.d_model = static_cast<int>(c.get_int("model.d_model", m.d_model));
  m.n_heads = static_cast<int>(c.get_int("model.n_heads", m.n_heads));
  m.n_blocks = static_cast<int>(c.get_int("model.n_blocks", m.n_blocks));
  m.ffn_hidden = static_cast<int>(c.get_int("model.ffn_hidden", m.ffn_hidden));
  m.fusion_hidden_1 = static_cast<int>(c.get_int("model.fusion_hidden_1", m.fusion_hidden_1));
  m.fusion_hidden_2 = static_cast<int>(c.get_int("model.fusion_hidden_2", m.fusion_hidden_2));
  m.normalize_keys = c.get_bool("model.normalize_keys", m.normalize_keys);
  auto& s = e.sse;
  s.frequencies = static_cast<int>(c.get_int("sse.frequencies", s.frequencies));
  s.d_b = static_cast<int>(c.get_int("sse.d_b", s.d_b));
  s.d_s = static_cast<int>(c.get_int("sse.d_s", s.d_s));
  s.cnn_hidden = static_cast<int>(c.get_int("sse.cnn_hidden", s.cnn_hidden));
  s.mlp_hidden = static_cast<int>(c.get_int("sse.mlp_hidden", s.mlp_hidden));
  s.embed_dim = static_cast<int>(c.get_int("sse.embed_dim", s.embed_dim));
  s.variant = parse_variant(c.get_string("sse.variant", std::string(variant_name(s.variant))));
  auto& t = e.train;
  t.lr = c.get_double("train.lr", t.lr);
  t.batch = static_cast<int>(c.get_int("train.batch", t.batch));
  t.epochs = static_cast<int>(c.get_int("train.epochs", t.epochs));
  t.patience = static_cast<int>(c.get_int("train.patience", t.patience));
  t.max_train = static_cast<int>(c.get_int("train.max_train", t.max_train));
  t.jitter = c.get_double("train.jitter", t.jitter);
  e.factors = c.get_doubles("eval.factors", e.factors);
  e.offgrid_factors = c.get_doubles("eval.offgrid_factors", e.offgrid_factors);
  std::vector<std::int64_t> seeds(e.seeds.begin(), e.seeds.end());
  seeds = c.get_ints("eval.seeds", seeds);
  e.seeds.assign(seeds.begin(), seeds.end());
  e.tune_samples = static_cast<int>(c.get_int("eval.tune_samples", e.tune_samples));
  e.validate();
  return e;
}

// ---------------------------------------------------------------------------

Predictor model_predictor(const CgformerModel& model) {
  return [&model](const Sample& s) { return predict(s, model); };
}

Predictor baseline_predictor(const BaselineConfig& config) {
  return [config](const Sample& s) { return baseline_predict(config, s.measurements, s.target_coords); };
}

Sample evaluation_split(const Sample& full, std::size_t map_index, double factor, std::uint64_t seed,
                        double split_ratio) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(map_index), seed_bits(factor)));
  return resample(full, factor, split_ratio, rng);
}

ResultRecord evaluate(const std::string& method, const Predictor& predictor, std::span<const Sample> maps,
                      double factor, std::uint64_t seed, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRecord r;
  r.method = method;
  r.factor = factor;
  r.seed = seed;
  r.map_rmse.assign(maps.size(), 0.0);
  parallel_for(
      maps.size(),
      [&](std::size_t m) {
        const Sample s = evaluation_split(maps[m], m, factor, seed);
        r.map_rmse[m] = rmse(predictor(s), s.target_values);
      },
      threads);
  r.mean_rmse = maps.empty() ? 0.0 : std::accumulate(r.map_rmse.begin(), r.map_rmse.end(), 0.0) /
                                         static_cast<double>(maps.size());
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<ResultRecord> evaluate_sweep(const std::string& method, const Predictor& predictor,
                                         std::span<const Sample> maps, std::span<const double> factors,
                                         std::uint64_t seed, int threads) {
  std::vector<ResultRecord> out;
  for (double f : factors) out.push_back(evaluate(method, predictor, maps, f, seed, threads));
  return out;
}

double mean_of(std::span<const ResultRecord> records) {
  if (records.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& r : records) acc += r.mean_rmse;
  return acc / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------

namespace {

std::filesystem::path last_path(const std::filesystem::path& out) {
  auto p = out;
  p += ".last";
  return p;
}

std::vector<std::vector<double>> snapshot(const CgformerModel& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

void restore(CgformerModel& model, const std::vector<std::vector<double>>& values) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(values[i].begin(), values[i].end(), params[i].mutable_data().begin());
  }
}

std::string log_row(const EpochLog& e) {
  return std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.val_loss) + "," +
         format_double(e.best_val) + "\n";
}

}  // namespace

Sample jitter_coordinates(const Sample& s, double jitter, Rng& rng) {
  if (!(jitter >= 0.0 && jitter < 1.0)) throw Error(ErrorKind::config, "jitter must lie in [0, 1)");
  const GridSpec g = s.grid();
  const double hx = 0.5 * jitter * g.delta_x, hy = 0.5 * jitter * g.delta_y;
  Sample out = s;
  auto move = [&](PointList& pts) {
    for (Index r = 0; r < pts.rows(); ++r) {
      pts(r, 0) += uniform(rng, -hx, hx);
      pts(r, 1) += uniform(rng, -hy, hy);
    }
  };
  move(out.measurements.coords);
  move(out.target_coords);
  return out;
}

TrainResult train_model(const TrainConfig& train, const ModelConfig& model_config, const SseConfig& sse_config,
                        std::uint64_t seed, std::span<const Sample> train_set, std::span<const Sample> val_set,
                        const ValueNormalization& normalization, const TrainOptions& options) {
  if (train_set.empty()) throw Error(ErrorKind::degenerate, "training set is empty");
  if (train.max_train > 0 && static_cast<std::size_t>(train.max_train) < train_set.size()) {
    train_set = train_set.first(static_cast<std::size_t>(train.max_train));
  }
  if (val_set.empty()) val_set = train_set;

  TrainResult result;
  AdamConfig adam;
  adam.lr = train.lr;
  ModelConfig config = model_config;
  if (config.semantic_cell <= 0.0) config.semantic_cell = train_set.front().grid().delta_x;
  CgformerModel model = init_model(config, sse_config, seed);
  model.normalization = normalization;
  AdamState state = make_adam_state(model.parameters(), adam);

  int start_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  const bool can_resume = options.resume && !options.out.empty() && std::filesystem::exists(last_path(options.out));
  if (can_resume) {
    model = load_model(last_path(options.out), &state);
    state.config.lr = train.lr;
    start_epoch = std::stoi(model.metadata.at("epoch"));
    best_val = std::stod(model.metadata.at("best_val"));
    stale = std::stoi(model.metadata.at("stale"));
  }
  std::vector<std::vector<double>> best_params = snapshot(model);
  if (can_resume && std::filesystem::exists(options.out)) best_params = snapshot(load_model(options.out));

  std::ofstream log;
  if (!options.log_csv.empty()) {
    log.open(options.log_csv, can_resume ? std::ios::app : std::ios::trunc);
    if (!log) throw Error(ErrorKind::io, "cannot write training log '" + options.log_csv.string() + "'");
  }
  auto emit = [&](const EpochLog& e) {
    result.log.push_back(e);
    if (log.is_open()) log << log_row(e) << std::flush;
    if (options.on_epoch) options.on_epoch(e);
  };

  model.metadata["seed"] = std::to_string(seed);
  model.metadata["variant"] = std::string(variant_name(sse_config.variant));
  auto save_best = [&](int epoch) {
    if (options.out.empty()) return;
    CgformerModel best = model;
    best.metadata["epoch"] = std::to_string(epoch);
    best.metadata["best_val"] = format_double(best_val);
    best.metadata["stale"] = "0";
    save_model(options.out, best);
  };

  if (!can_resume) {
    if (log.is_open()) log << "epoch,train_loss,val_loss,best_val\n";
    const double train0 = evaluate_loss(train_set, model, options.threads);
    best_val = evaluate_loss(val_set, model, options.threads);
    emit({0, train0, best_val, best_val});
    save_best(0);
  }

  std::vector<std::size_t> order(train_set.size());
  std::vector<const Sample*> batch;
  std::vector<Sample> moved;
  int epoch = start_epoch;
  while (epoch < train.epochs && stale < train.patience) {
    ++epoch;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 0x7a11, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(train.batch)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(train.batch));
      batch.clear();
      if (train.jitter > 0.0) {
        moved.clear();
        for (std::size_t i = b0; i < b1; ++i) moved.push_back(jitter_coordinates(train_set[order[i]], train.jitter, rng));
        for (const auto& s : moved) batch.push_back(&s);
      } else {
        for (std::size_t i = b0; i < b1; ++i) batch.push_back(&train_set[order[i]]);
      }
      loss_sum += train_step(batch, model, state, options.threads) * static_cast<double>(batch.size());
    }
    const double val = evaluate_loss(val_set, model, options.threads);
    if (!std::isfinite(val)) {
      throw Error(ErrorKind::numeric, "validation loss became non-finite at epoch " + std::to_string(epoch) +
                                          " (lr=" + format_double(train.lr) + ")");
    }
    if (val < best_val) {
      best_val = val;
      stale = 0;
      best_params = snapshot(model);
      save_best(epoch);
    } else {
      ++stale;
    }
    emit({epoch, loss_sum / static_cast<double>(order.size()), val, best_val});
    if (!options.out.empty()) {
      CgformerModel ckpt = model;
      ckpt.metadata["epoch"] = std::to_string(epoch);
      ckpt.metadata["best_val"] = format_double(best_val);
      ckpt.metadata["stale"] = std::to_string(stale);
      save_model(last_path(options.out), ckpt, &state);
    }
  }
  result.last_epoch = epoch;
  result.stopped_early = stale >= train.patience;
  restore(model, best_params);
  model.metadata["epoch"] = std::to_string(epoch);
  model.metadata["best_val"] = format_double(best_val);
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::vector<std::string>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
  if (!os) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

void write_results_table(const std::filesystem::path& path, std::span<const ResultRecord> records) {
  std::vector<std::string> methods;
  std::vector<double> factors;
  std::map<std::pair<std::string, double>, double> cell;
  for (const auto& r : records) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(factors.begin(), factors.end(), r.factor) == factors.end()) factors.push_back(r.factor);
    cell[{r.method, r.factor}] = r.mean_rmse;
  }
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"factor"});
  for (const auto& m : methods) rows[0].push_back(m);
  for (double f : factors) {
    std::vector<std::string> row{fixed(f, 2)};
    for (const auto& m : methods) {
      auto it = cell.find({m, f});
      row.push_back(it == cell.end() ? "" : fixed(it->second));
    }
    rows.push_back(std::move(row));
  }
  write_csv(path, rows);
}

void write_map_records(const std::filesystem::path& path, std::span<const ResultRecord> records) {
  std::vector<std::vector<std::string>> rows{{"method", "factor", "map", "rmse_db", "seed", "config_hash"}};
  for (const auto& r : records) {
    for (std::size_t m = 0; m < r.map_rmse.size(); ++m) {
      rows.push_back({r.method, fixed(r.factor, 2), std::to_string(m), format_double(r.map_rmse[m]),
                      std::to_string(r.seed), r.config_hash});
    }
  }
  write_csv(path, rows);
}

std::vector<OffgridRow> run_offgrid(const CgformerModel& model, std::span<const Sample> coarse,
                                    std::span<const Sample> fine, std::span<const double> factors,
                                    std::uint64_t seed, int threads) {
  if (coarse.size() != fine.size()) {
    throw Error(ErrorKind::contract, "off-grid datasets hold " + std::to_string(coarse.size()) + " and " +
                                         std::to_string(fine.size()) + " maps");
  }
  for (std::size_t m = 0; m < coarse.size(); ++m) {
    const double tol = 1e-9 * (1.0 + coarse[m].extent.size.norm());
    if ((coarse[m].extent.origin - fine[m].extent.origin).norm() > tol ||
        (coarse[m].extent.size - fine[m].extent.size).norm() > tol) {
      throw Error(ErrorKind::contract, "off-grid map " + std::to_string(m) + " covers a different region");
    }
  }
  std::vector<OffgridRow> rows;
  for (double f : factors) {
    OffgridRow row;
    row.factor = f;
    const Predictor cg = model_predictor(model);
    row.coarse = evaluate("coarse", cg, coarse, f, seed, threads);
    row.fine_dense = evaluate("fine_dense", cg, fine, f, seed, threads);
    row.fine_matched = evaluate("fine_matched", cg, fine, f / 4.0, seed, threads);
    for (const auto* r : {&row.coarse, &row.fine_dense, &row.fine_matched}) {
      for (double v : r->map_rmse) row.all_finite = row.all_finite && std::isfinite(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_offgrid_table(const std::filesystem::path& path, std::span<const OffgridRow> rows) {
  std::vector<std::vector<std::string>> out{
      {"factor", "coarse_rmse_db", "fine_dense_rmse_db", "fine_matched_rmse_db", "all_finite"}};
  for (const auto& r : rows) {
    out.push_back({fixed(r.factor, 2), fixed(r.coarse.mean_rmse), fixed(r.fine_dense.mean_rmse),
                   fixed(r.fine_matched.mean_rmse), r.all_finite ? "true" : "false"});
  }
  write_csv(path, out);
}

RowMatrix field_from_targets(const Sample& full, const Eigen::VectorXd& values) {
  if (values.size() != full.query_count()) {
    throw Error(ErrorKind::dimension, "field_from_targets: " + std::to_string(values.size()) + " values for " +
                                          std::to_string(full.query_count()) + " targets");
  }
  const GridSpec grid = full.grid();
  RowMatrix out = RowMatrix::Constant(grid.ny, grid.nx, kBuildingPower);
  for (Index t = 0; t < values.size(); ++t) {
    const auto c = nearest_cell(full.target_coords.row(t).transpose(), grid);
    out(c.i, c.j) = values(t);
  }
  return out;
}

std::string pgm_bytes(const RowMatrix& values, const Mask& buildings) {
  if (values.rows() != buildings.rows() || values.cols() != buildings.cols()) {
    throw Error(ErrorKind::dimension, "render: value grid and building mask differ in size");
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      if (buildings(i, j)) continue;
      if (!std::isfinite(values(i, j))) throw Error(ErrorKind::numeric, "render: non-finite value at an open cell");
      lo = std::min(lo, values(i, j));
      hi = std::max(hi, values(i, j));
    }
  }
  std::string out = "P5\n" + std::to_string(values.cols()) + " " + std::to_string(values.rows()) + "\n255\n";
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      unsigned char px = 255;
      if (!buildings(i, j)) {
        px = hi > lo ? static_cast<unsigned char>(1 + std::lround(254.0 * (values(i, j) - lo) / (hi - lo))) : 128;
      }
      out.push_back(static_cast<char>(px));
    }
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const RowMatrix& values, const Mask& buildings) {
  const auto bytes = pgm_bytes(values, buildings);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

}  // namespace rme
