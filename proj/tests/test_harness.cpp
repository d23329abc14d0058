// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "model_support.hpp"
#include "rme/config.hpp"
#include "rme/harness.hpp"
#include "rme/metrics.hpp"

using namespace rme;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Sample> toy_maps(int n, Index size = 8) {
  std::vector<Sample> maps;
  for (int i = 0; i < n; ++i) maps.push_back(full_map_sample(test::toy_submap(size, 3.25, true, 50 + static_cast<std::uint64_t>(i))));
  return maps;
}

}  // namespace

TEST_CASE("rmse matches a loop oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd a(13), b(13);
    double s = 0.0;
    for (Index i = 0; i < 13; ++i) {
      a(i) = uniform(rng, -90, -30);
      b(i) = uniform(rng, -90, -30);
      s += (a(i) - b(i)) * (a(i) - b(i));
    }
    CHECK(std::abs(rmse(a, b) - std::sqrt(s / 13.0)) <= 1e-12);
    CHECK(rmse(a, a) == 0.0);
  }
  CHECK_THROWS_AS(rmse(Eigen::VectorXd(2), Eigen::VectorXd(3)), Error);
  CHECK_THROWS_AS(rmse(Eigen::VectorXd(0), Eigen::VectorXd(0)), Error);
}

TEST_CASE("oracle predictor scores zero at every factor") {
  const auto maps = toy_maps(4);
  const Predictor oracle = [](const Sample& s) { return s.target_values; };
  const std::vector<double> factors{0.1, 0.3, 0.5};
  for (const auto& r : evaluate_sweep("oracle", oracle, maps, factors, 3, 1)) {
    CHECK(r.mean_rmse == 0.0);
    CHECK(r.map_rmse.size() == 4);
  }
}

TEST_CASE("evaluation splits are shared across methods and deterministic") {
  const auto maps = toy_maps(2);
  const Sample a = evaluation_split(maps[1], 1, 0.25, 9);
  const Sample b = evaluation_split(maps[1], 1, 0.25, 9);
  CHECK(a.measurements.coords == b.measurements.coords);
  CHECK(a.target_values == b.target_values);
  const Sample c = evaluation_split(maps[1], 1, 0.5, 9);
  CHECK(c.measurements.size() > a.measurements.size());

  BaselineConfig knn;
  knn.k = 1;
  const auto r1 = evaluate("knn", baseline_predictor(knn), maps, 0.3, 9, 1);
  const auto r2 = evaluate("knn", baseline_predictor(knn), maps, 0.3, 9, 2);
  CHECK(r1.map_rmse == r2.map_rmse);
}

TEST_CASE("result tables") {
  const auto dir = std::filesystem::temp_directory_path() / "rme_test_tables";
  std::filesystem::create_directories(dir);
  std::vector<ResultRecord> recs;
  for (const char* m : {"knn", "gpr"}) {
    for (double f : {0.05, 0.5}) {
      ResultRecord r;
      r.method = m;
      r.factor = f;
      r.map_rmse = {1.0, 3.0};
      r.mean_rmse = 2.0 + f;
      r.seed = 4;
      r.config_hash = "abc";
      r.wall_seconds = 123.0;
      recs.push_back(r);
    }
  }
  write_results_table(dir / "t.csv", recs);
  const std::string table = slurp(dir / "t.csv");
  CHECK(table.rfind("factor,knn,gpr\n", 0) == 0);
  CHECK(table.find("0.05,2.050000,2.050000") != std::string::npos);
  CHECK(table.find("123") == std::string::npos);
  write_map_records(dir / "m.csv", recs);
  const std::string maps = slurp(dir / "m.csv");
  CHECK(maps.find("knn,0.05,1,3,4,abc") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("pgm rendering") {
  RowMatrix v = RowMatrix::Constant(16, 16, -50.0);
  Mask b = Mask::Zero(16, 16);
  b(3, 4) = 1;
  const std::string flat = pgm_bytes(v, b);
  const std::string header = "P5\n16 16\n255\n";
  CHECK(flat.rfind(header, 0) == 0);
  REQUIRE(flat.size() == header.size() + 256);
  for (std::size_t i = 0; i < 256; ++i) {
    const auto px = static_cast<unsigned char>(flat[header.size() + i]);
    CHECK(px == (i == 3 * 16 + 4 ? 255 : 128));
  }
  RowMatrix ramp(1, 3);
  ramp << -80, -60, -40;
  const std::string r = pgm_bytes(ramp, Mask::Zero(1, 3));
  const std::string h2 = "P5\n3 1\n255\n";
  CHECK(static_cast<unsigned char>(r[h2.size()]) == 1);
  CHECK(static_cast<unsigned char>(r[h2.size() + 1]) == 128);
  CHECK(static_cast<unsigned char>(r[h2.size() + 2]) == 255);
  CHECK_THROWS_AS(pgm_bytes(ramp, Mask::Zero(2, 3)), Error);
}

TEST_CASE("field_from_targets lays values on the grid") {
  const Sample full = toy_maps(1)[0];
  const RowMatrix f = field_from_targets(full, full.target_values);
  const GridSpec g = full.grid();
  for (Index r = 0; r < full.query_count(); ++r) {
    const auto c = nearest_cell(full.target_coords.row(r).transpose(), g);
    CHECK(f(c.i, c.j) == full.target_values(r));
  }
  for (Index i = 0; i < f.rows(); ++i) {
    for (Index j = 0; j < f.cols(); ++j) {
      if (full.b_mask(i, j)) CHECK(f(i, j) == kBuildingPower);
    }
  }
}

TEST_CASE("config parsing") {
  const ConfigMap c = ConfigMap::parse(R"(
# comment
[dataset]
seed = 11
[train]
lr = 1e-3   # trailing
epochs = 4
[eval]
factors = [0.1, 0.2]
seeds = 1..3
[sse]
variant = "no-b"
)");
  CHECK(c.get_int("dataset.seed", 0) == 11);
  CHECK(c.get_double("train.lr", 0) == 1e-3);
  CHECK(c.get_doubles("eval.factors", {}) == std::vector<double>{0.1, 0.2});
  CHECK(c.get_ints("eval.seeds", {}) == std::vector<std::int64_t>{1, 2, 3});
  CHECK(c.get_string("sse.variant", "") == "no-b");
  CHECK(c.get_int("missing", 5) == 5);
  CHECK_THROWS_AS(ConfigMap::parse("x = 1\nbroken line\n"), Error);
  CHECK_THROWS_AS(ConfigMap::parse("x = abc").get_int("x", 0), Error);

  const ExperimentConfig e = experiment_config_from(c);
  CHECK(e.train.epochs == 4);
  CHECK(e.dataset.seed == 11);
  CHECK(e.sse.variant == Variant::no_b);
  CHECK(e.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(e.hash() == experiment_config_from(c).hash());
  CHECK_THROWS_AS(experiment_config_from(ConfigMap::parse("train.bogus = 1")), Error);
  CHECK_THROWS_AS(experiment_config_from(ConfigMap::parse("eval.factors = [0.0]")), Error);
  CHECK(format_double(0.1) == "0.1");
  CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
}

TEST_CASE("off-grid runner") {
  const auto maps = toy_maps(3);
  CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 1);
  test::randomize_parameters(m, 2);
  m.normalization = {-60.0, 8.0};
  const std::vector<double> f{0.3};
  const auto same = run_offgrid(m, maps, maps, f, 5, 1);
  REQUIRE(same.size() == 1);
  CHECK(same[0].coarse.mean_rmse == same[0].fine_dense.mean_rmse);
  CHECK(same[0].all_finite);

  std::vector<Sample> fine;
  for (int i = 0; i < 3; ++i) fine.push_back(full_map_sample(test::toy_submap(16, 3.25 / 2.0, true, 60)));
  // Same extent is required.
  for (auto& s : fine) s.extent = maps[static_cast<std::size_t>(&s - fine.data())].extent;
  CHECK(fine[0].query_count() == 16 * 16 - 4);
  const auto rows = run_offgrid(m, maps, fine, f, 5, 1);
  CHECK(rows[0].all_finite);
  std::vector<Sample> shifted = fine;
  shifted[1].extent.origin.x() += 1.0;
  CHECK_THROWS_AS(run_offgrid(m, maps, shifted, f, 5, 1), Error);
  CHECK_THROWS_AS(run_offgrid(m, maps, std::span<const Sample>(fine).first(2), f, 5, 1), Error);
}

TEST_CASE("training: logging, early stopping and bit-exact resume") {
  Rng rng(3);
  std::vector<Sample> train, val;
  for (int i = 0; i < 12; ++i) train.push_back(test::toy_sample(6, 6, 100 + static_cast<std::uint64_t>(i)));
  for (int i = 0; i < 4; ++i) val.push_back(test::toy_sample(6, 6, 200 + static_cast<std::uint64_t>(i)));
  const auto [mu, sd] = value_statistics(train);
  ModelConfig mc;
  mc.d_model = 16;
  mc.ffn_hidden = 16;
  mc.fusion_hidden_1 = 16;
  mc.fusion_hidden_2 = 8;
  SseConfig sc;
  sc.frequencies = 4;
  sc.d_b = sc.d_s = 4;
  sc.mlp_hidden = 16;
  sc.embed_dim = 8;
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch = 5;
  tc.jitter = 0.5;

  const auto dir = std::filesystem::temp_directory_path() / "rme_test_train";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  TrainOptions straight;
  straight.out = dir / "a.rmod";
  straight.log_csv = dir / "a.log.csv";
  const TrainResult full = train_model(tc, mc, sc, 9, train, val, {mu, sd}, straight);
  CHECK(full.log.size() == 5);
  CHECK(full.log.front().epoch == 0);
  CHECK(std::filesystem::exists(dir / "a.rmod"));
  CHECK(slurp(dir / "a.log.csv").rfind("epoch,train_loss,val_loss,best_val\n", 0) == 0);

  TrainConfig half = tc;
  half.epochs = 2;
  TrainOptions first;
  first.out = dir / "b.rmod";
  first.log_csv = dir / "b.log.csv";
  train_model(half, mc, sc, 9, train, val, {mu, sd}, first);
  TrainOptions second = first;
  second.resume = true;
  const TrainResult resumed = train_model(tc, mc, sc, 9, train, val, {mu, sd}, second);
  CHECK(resumed.last_epoch == 4);
  CHECK(slurp(dir / "a.log.csv") == slurp(dir / "b.log.csv"));
  const auto pa = full.model.named_parameters(), pb = resumed.model.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
  }
  CHECK(slurp(dir / "a.rmod") == slurp(dir / "b.rmod"));

  TrainConfig impatient = tc;
  impatient.epochs = 50;
  impatient.patience = 1;
  impatient.lr = 0.5;
  const TrainResult stopped = train_model(impatient, mc, sc, 9, train, val, {mu, sd});
  CHECK(stopped.stopped_early);
  CHECK(stopped.last_epoch < 50);
  std::filesystem::remove_all(dir);
}
