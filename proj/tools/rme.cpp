// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// rme: dataset generation, training, evaluation, ablation, off-grid tests and
// heatmap rendering for grid-free radio map estimation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rme/harness.hpp"

namespace fs = std::filesystem;
using namespace rme;

namespace {

struct Common {
  std::string config;
  std::int64_t seed = -1;
  std::string out;
};

ConfigMap load_config(const Common& c) { return c.config.empty() ? ConfigMap{} : ConfigMap::load(c.config); }

std::string pool_range(int lo, int hi) { return std::to_string(lo) + ".." + std::to_string(hi); }

void note(const std::string& msg) { std::cerr << msg << "\n"; }

fs::path sibling(const fs::path& out, const std::string& suffix) {
  auto p = out.parent_path() / out.stem();
  p += suffix;
  return p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

struct LoadedData {
  Manifest manifest;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

LoadedData load_eval_data(const fs::path& dir) {
  LoadedData d;
  d.manifest = read_manifest(dir);
  d.val = read_samples(dir / "val.rmds");
  d.test = read_samples(dir / "test.rmds");
  return d;
}

void check_compatible(const CgformerModel& model, const Manifest& manifest, const std::string& what) {
  auto it = model.metadata.find("scene_hash");
  if (it != model.metadata.end() && it->second != manifest.scene_hash) {
    throw Error(ErrorKind::contract, what + " was trained on scenes " + it->second + " but the dataset holds " +
                                         manifest.scene_hash);
  }
}

std::string method_label(const fs::path& model_path) { return "cgformer:" + model_path.stem().string(); }

std::vector<BaselineMethod> methods_from(const std::vector<std::string>& tags) {
  std::vector<BaselineMethod> out;
  for (const auto& t : tags) {
    if (t == "all") {
      for (auto m : {BaselineMethod::knn, BaselineMethod::idw, BaselineMethod::kriging, BaselineMethod::gpr}) {
        out.push_back(m);
      }
    } else {
      out.push_back(parse_method(t));
    }
  }
  return out;
}

std::vector<ResultRecord> run_baselines(const std::vector<BaselineMethod>& methods, const ExperimentConfig& cfg,
                                        const LoadedData& data, std::span<const double> factors, std::uint64_t seed,
                                        std::vector<std::vector<std::string>>* tuned) {
  const auto n_tune = std::min<std::size_t>(data.val.size(), static_cast<std::size_t>(cfg.tune_samples));
  const std::span<const Sample> tune(data.val.data(), n_tune);
  std::vector<ResultRecord> records;
  for (auto m : methods) {
    const auto best = fit_hyperparams(tune, m, data.manifest.delta);
    note("tuned " + best.describe());
    if (tuned) tuned->push_back({std::string(method_name(m)), best.describe()});
    for (auto& r : evaluate_sweep(std::string(method_name(m)), baseline_predictor(best), data.test, factors, seed)) {
      r.config_hash = cfg.hash();
      note(r.method + " factor " + fixed(r.factor, 2) + " rmse " + fixed(r.mean_rmse, 4) + " dB (" +
           fixed(r.wall_seconds, 2) + " s)");
      records.push_back(std::move(r));
    }
  }
  return records;
}

// ---------------------------------------------------------------------------

void cmd_gen(const Common& c, int scenes, int test_scenes, int samples, int test_maps) {
  ConfigMap map = load_config(c);
  if (c.seed >= 0) map.set("dataset.seed", std::to_string(c.seed));
  if (scenes > 0) {
    map.set("dataset.train_pool", pool_range(1, scenes));
    map.set("dataset.test_pool", pool_range(scenes + 1, scenes + test_scenes));
    if (!map.contains("scene.transmitters")) map.set("scene.transmitters", std::to_string(scenes + test_scenes));
  }
  if (samples > 0) map.set("dataset.samples", std::to_string(samples));
  if (test_maps >= 0) map.set("dataset.test_maps", std::to_string(test_maps));
  const auto cfg = experiment_config_from(map);
  const Dataset ds = build_dataset(cfg.dataset);
  write_dataset(c.out, ds);
  note("wrote " + std::to_string(ds.train.size()) + " train, " + std::to_string(ds.val.size()) + " val, " +
       std::to_string(ds.test.size()) + " test maps to " + c.out);
}

void cmd_train(const Common& c, const std::string& data_dir, const std::string& variant, int epochs, bool resume,
               std::string log) {
  ConfigMap map = load_config(c);
  if (!variant.empty()) map.set("sse.variant", variant);
  if (epochs >= 0) map.set("train.epochs", std::to_string(epochs));
  const auto cfg = experiment_config_from(map);
  const std::uint64_t seed = c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : cfg.seeds.front();
  const fs::path dir(data_dir);
  const Manifest manifest = read_manifest(dir);
  const auto train = read_samples(dir / "train.rmds");
  const auto val = read_samples(dir / "val.rmds");
  const fs::path out(c.out);
  ensure_parent(out);
  TrainOptions opt;
  opt.out = out;
  opt.log_csv = log.empty() ? sibling(out, ".log.csv") : fs::path(log);
  opt.resume = resume;
  opt.threads = configured_threads();
  opt.on_epoch = [](const EpochLog& e) {
    note("epoch " + std::to_string(e.epoch) + " train " + fixed(e.train_loss, 5) + " val " + fixed(e.val_loss, 5));
  };
  auto result = train_model(cfg.train, cfg.model, cfg.sse, seed, train, val, {manifest.value_mean, manifest.value_std}, opt);
  result.model.metadata["scene_hash"] = manifest.scene_hash;
  result.model.metadata["config_hash"] = cfg.hash();
  save_model(out, result.model);
  note("best val " + result.model.metadata["best_val"] + " after " + std::to_string(result.last_epoch) +
       " epochs; model written to " + out.string());
}

void cmd_eval(const Common& c, const std::string& data_dir, const std::vector<std::string>& models,
              const std::vector<std::string>& baselines, std::vector<double> factors) {
  const auto cfg = experiment_config_from(load_config(c));
  if (factors.empty()) factors = cfg.factors;
  const std::uint64_t seed = c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : 1;
  if (models.empty() && baselines.empty()) throw Error(ErrorKind::config, "eval needs --model and/or --baseline");
  const LoadedData data = load_eval_data(data_dir);
  std::vector<ResultRecord> records;
  for (const auto& path : models) {
    const CgformerModel model = load_model(path);
    check_compatible(model, data.manifest, path);
    for (auto& r : evaluate_sweep(method_label(path), model_predictor(model), data.test, factors, seed)) {
      r.config_hash = model.metadata.count("config_hash") ? model.metadata.at("config_hash") : cfg.hash();
      note(r.method + " factor " + fixed(r.factor, 2) + " rmse " + fixed(r.mean_rmse, 4) + " dB (" +
           fixed(r.wall_seconds, 2) + " s)");
      records.push_back(std::move(r));
    }
  }
  auto more = run_baselines(methods_from(baselines), cfg, data, factors, seed, nullptr);
  records.insert(records.end(), more.begin(), more.end());
  const fs::path out(c.out);
  ensure_parent(out);
  write_results_table(out, records);
  write_map_records(sibling(out, "_maps.csv"), records);
}

void cmd_baseline(const Common& c, const std::string& data_dir, const std::vector<std::string>& methods,
                  std::vector<double> factors) {
  const auto cfg = experiment_config_from(load_config(c));
  if (factors.empty()) factors = cfg.factors;
  const std::uint64_t seed = c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : 1;
  const LoadedData data = load_eval_data(data_dir);
  std::vector<std::vector<std::string>> tuned{{"method", "config"}};
  const auto records = run_baselines(methods_from(methods), cfg, data, factors, seed, &tuned);
  const fs::path out(c.out);
  ensure_parent(out);
  write_results_table(out, records);
  write_map_records(sibling(out, "_maps.csv"), records);
  write_csv(sibling(out, "_tuned.csv"), tuned);
}

void cmd_ablate(const Common& c, const std::string& data_dir) {
  ConfigMap map = load_config(c);
  if (c.seed >= 0) map.set("eval.seeds", std::to_string(c.seed));
  const auto cfg = experiment_config_from(map);
  const fs::path dir(data_dir), out(c.out);
  fs::create_directories(out);
  const Manifest manifest = read_manifest(dir);
  const auto train = read_samples(dir / "train.rmds");
  const auto val = read_samples(dir / "val.rmds");
  const auto test = read_samples(dir / "test.rmds");

  std::vector<std::vector<std::string>> table{{"variant", "label", "mean_rmse_db"}};
  for (auto s : cfg.seeds) table[0].push_back("seed_" + std::to_string(s));
  std::vector<ResultRecord> records;
  auto flush = [&] {
    write_csv(out / "ablation.csv", table);
    write_map_records(out / "ablation_maps.csv", records);
    nlohmann::ordered_json j;
    j["seeds"] = cfg.seeds;
    j["factors"] = cfg.factors;
    j["config_hash"] = cfg.hash();
    j["scene_hash"] = manifest.scene_hash;
    std::ofstream(out / "ablation.json") << j.dump(2) << "\n";
  };
  for (auto v : {Variant::full, Variant::no_posenc, Variant::no_b, Variant::no_s}) {
    SseConfig sse = cfg.sse;
    sse.variant = v;
    std::vector<std::string> row{std::string(variant_name(v)), std::string(variant_label(v)), ""};
    double total = 0.0;
    for (auto seed : cfg.seeds) {
      const std::string stem = std::string(variant_name(v)) + "_s" + std::to_string(seed);
      TrainOptions opt;
      opt.out = out / (stem + ".rmod");
      opt.log_csv = out / (stem + ".log.csv");
      opt.threads = configured_threads();
      try {
        auto result = train_model(cfg.train, cfg.model, sse, seed, train, val,
                                  {manifest.value_mean, manifest.value_std}, opt);
        result.model.metadata["scene_hash"] = manifest.scene_hash;
        result.model.metadata["config_hash"] = cfg.hash();
        save_model(opt.out, result.model);
        auto sweep = evaluate_sweep(stem, model_predictor(result.model), test, cfg.factors, seed);
        for (auto& r : sweep) r.config_hash = cfg.hash();
        const double m = mean_of(sweep);
        note(std::string(variant_label(v)) + " seed " + std::to_string(seed) + ": " + fixed(m, 4) + " dB");
        row.push_back(fixed(m));
        total += m;
        records.insert(records.end(), sweep.begin(), sweep.end());
      } catch (...) {
        flush();
        throw;
      }
    }
    row[2] = fixed(total / static_cast<double>(cfg.seeds.size()));
    table.push_back(std::move(row));
  }
  flush();
}

void cmd_offgrid(const Common& c, const std::string& model_path, const std::string& data_dir, std::string coarse,
                 std::string fine, std::vector<double> factors) {
  const auto cfg = experiment_config_from(load_config(c));
  if (factors.empty()) factors = cfg.offgrid_factors;
  const std::uint64_t seed = c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : 1;
  if (coarse.empty()) coarse = (fs::path(data_dir) / "test.rmds").string();
  if (fine.empty()) fine = (fs::path(data_dir) / "test_fine.rmds").string();
  const CgformerModel model = load_model(model_path);
  if (!data_dir.empty()) check_compatible(model, read_manifest(data_dir), model_path);
  const auto rows = run_offgrid(model, read_samples(coarse), read_samples(fine), factors, seed);
  for (const auto& r : rows) {
    note("factor " + fixed(r.factor, 2) + ": coarse " + fixed(r.coarse.mean_rmse, 4) + " fine(dense) " +
         fixed(r.fine_dense.mean_rmse, 4) + " fine(matched) " + fixed(r.fine_matched.mean_rmse, 4));
  }
  const fs::path out(c.out);
  ensure_parent(out);
  write_offgrid_table(out, rows);
}

void cmd_render(const Common& c, const std::string& data_dir, const std::string& split, int map_index,
                const std::string& model_path, double factor) {
  const auto maps = read_samples(fs::path(data_dir) / (split + ".rmds"));
  if (map_index < 0 || static_cast<std::size_t>(map_index) >= maps.size()) {
    throw Error(ErrorKind::range, "map " + std::to_string(map_index) + " outside 0.." + std::to_string(maps.size()));
  }
  const Sample& full = maps[static_cast<std::size_t>(map_index)];
  if (full.measurements.size() != 0) throw Error(ErrorKind::contract, "render expects a full-map split (test, test_fine)");
  Eigen::VectorXd values = full.target_values;
  if (!model_path.empty()) {
    const CgformerModel model = load_model(model_path);
    const std::uint64_t seed = c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : 1;
    const Sample split_sample = evaluation_split(full, static_cast<std::size_t>(map_index), factor, seed);
    QueryInput in = query_input(split_sample);
    in.queries = &full.target_coords;
    values = predict(in, model);
  }
  const fs::path out(c.out);
  ensure_parent(out);
  write_pgm(out, field_from_targets(full, values), full.b_mask);
}

void add_common(CLI::App* app, Common& c, bool out_required = true) {
  app->add_option("--config", c.config, "key=value / TOML-style config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "seed override");
  auto* o = app->add_option("--out", c.out, "output path");
  if (out_required) o->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grid-free radio map estimation toolkit"};
  app.require_subcommand(1);

  Common c;
  std::string data, variant, log, coarse, fine, model, split = "test";
  std::vector<std::string> models, baselines{}, methods{"all"};
  std::vector<double> factors;
  int scenes = 0, test_scenes = 3, samples = 0, test_maps = -1, epochs = -1, map_index = 0;
  double factor = 0.25;
  bool resume = false;

  auto* gen = app.add_subcommand("gen", "generate train/val/test datasets");
  add_common(gen, c);
  gen->add_option("--scenes", scenes, "train scenes (pool 1..N; test pool follows)");
  gen->add_option("--test-scenes", test_scenes, "test scenes when --scenes is given");
  gen->add_option("--samples", samples, "train + validation samples");
  gen->add_option("--test-maps", test_maps, "test maps");

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, c);
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--variant", variant, "full | no-posenc | no-b | no-s");
  train->add_option("--epochs", epochs, "maximum epochs");
  train->add_option("--log", log, "training log CSV (default <out>.log.csv)");
  train->add_flag("--resume", resume, "continue from <out>.last");

  auto* eval = app.add_subcommand("eval", "RMSE sweep over sampling factors");
  add_common(eval, c);
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--model", models, "model file (repeatable)");
  eval->add_option("--baseline", baselines, "knn | idw | kriging | gpr | all (repeatable)");
  eval->add_option("--factors", factors, "sampling factors")->delimiter(',');

  auto* base = app.add_subcommand("baseline", "tune and evaluate classical baselines");
  add_common(base, c);
  base->add_option("--data", data, "dataset directory")->required();
  base->add_option("--method", methods, "knn | idw | kriging | gpr | all (repeatable)");
  base->add_option("--factors", factors, "sampling factors")->delimiter(',');

  auto* ablate = app.add_subcommand("ablate", "train and evaluate every SSE variant");
  add_common(ablate, c);
  ablate->add_option("--data", data, "dataset directory")->required();

  auto* offgrid = app.add_subcommand("offgrid", "evaluate a model at the training and the finer resolution");
  add_common(offgrid, c);
  offgrid->add_option("--model", model, "model file")->required();
  offgrid->add_option("--data", data, "dataset directory (test.rmds, test_fine.rmds)");
  offgrid->add_option("--coarse", coarse, "coarse .rmds");
  offgrid->add_option("--fine", fine, "fine .rmds");
  offgrid->add_option("--factors", factors, "sampling factors")->delimiter(',');

  auto* render = app.add_subcommand("render", "write a test map or its prediction as PGM");
  add_common(render, c);
  render->add_option("--data", data, "dataset directory")->required();
  render->add_option("--split", split, "test | test_fine");
  render->add_option("--map", map_index, "map index");
  render->add_option("--model", model, "render predictions of this model instead of ground truth");
  render->add_option("--factor", factor, "sampling factor for predictions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: kind=usage message=" << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) cmd_gen(c, scenes, test_scenes, samples, test_maps);
    else if (train->parsed()) cmd_train(c, data, variant, epochs, resume, log);
    else if (eval->parsed()) cmd_eval(c, data, models, baselines, factors);
    else if (base->parsed()) cmd_baseline(c, data, methods, factors);
    else if (ablate->parsed()) cmd_ablate(c, data);
    else if (offgrid->parsed()) cmd_offgrid(c, model, data, coarse, fine, factors);
    else if (render->parsed()) cmd_render(c, data, split, map_index, model, factor);
  } catch (const Error& e) {
    std::cerr << "error: kind=" << to_string(e.kind()) << " message=" << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: kind=io message=" << e.what() << "\n";
    return 1;
  }
  return 0;
}
