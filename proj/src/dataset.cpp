// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rme/binary_io.hpp"
#include "rme/parallel.hpp"

namespace rme {

namespace {

constexpr std::uint64_t kSceneStream = 1;
constexpr std::uint64_t kShadowStream = 2;
constexpr std::uint64_t kTrainStream = 3;
constexpr std::uint64_t kTestStream = 4;

// Windows with less open area than this are redrawn.
constexpr double kMinOpenFraction = 0.25;
constexpr int kMaxWindowDraws = 1000;

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

void DatasetConfig::validate() const {
  if (train_pool.size() < 2 || test_pool.size() < 2) {
    throw Error(ErrorKind::config, "train and test pools need at least two scenes each");
  }
  std::set<int> train(train_pool.begin(), train_pool.end()), test(test_pool.begin(), test_pool.end());
  if (train.size() != train_pool.size() || test.size() != test_pool.size()) {
    throw Error(ErrorKind::config, "scene pools contain duplicates");
  }
  for (int id : test_pool) {
    if (train.count(id)) {
      throw Error(ErrorKind::config, "scene " + std::to_string(id) + " is in both the train and test pools");
    }
  }
  for (int id : train) {
    if (id < 1 || id > layout.transmitters) {
      throw Error(ErrorKind::config, "scene id " + std::to_string(id) + " outside 1.." +
                                         std::to_string(layout.transmitters));
    }
  }
  for (int id : test) {
    if (id < 1 || id > layout.transmitters) {
      throw Error(ErrorKind::config, "scene id " + std::to_string(id) + " outside 1.." +
                                         std::to_string(layout.transmitters));
    }
  }
  if (window < 2 || window > layout.ny || window > layout.nx) {
    throw Error(ErrorKind::config, "window " + std::to_string(window) + " does not fit the " +
                                       std::to_string(layout.ny) + "x" + std::to_string(layout.nx) + " city");
  }
  if (samples < 1 || splits < 1 || test_maps < 0) throw Error(ErrorKind::config, "sample counts must be positive");
  if (!(factor_min > 0.0 && factor_min <= factor_max && factor_max <= 1.0)) {
    throw Error(ErrorKind::config, "need 0 < factor_min <= factor_max <= 1");
  }
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw Error(ErrorKind::config, "split ratio must lie in (0, 1)");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw Error(ErrorKind::config, "validation fraction must lie in [0, 1)");
  }
  if (!(layout.delta > 0.0)) throw Error(ErrorKind::config, "cell size must be > 0");
}

std::string DatasetConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["dataset.seed"] = std::to_string(seed);
  kv["dataset.train_pool"] = join(train_pool);
  kv["dataset.test_pool"] = join(test_pool);
  kv["dataset.window"] = std::to_string(window);
  kv["dataset.samples"] = std::to_string(samples);
  kv["dataset.splits"] = std::to_string(splits);
  kv["dataset.factor_min"] = format_double(factor_min);
  kv["dataset.factor_max"] = format_double(factor_max);
  kv["dataset.split_ratio"] = format_double(split_ratio);
  kv["dataset.val_fraction"] = format_double(val_fraction);
  kv["dataset.test_maps"] = std::to_string(test_maps);
  kv["dataset.fine"] = fine ? "true" : "false";
  kv["scene.ny"] = std::to_string(layout.ny);
  kv["scene.nx"] = std::to_string(layout.nx);
  kv["scene.delta"] = format_double(layout.delta);
  kv["scene.buildings"] = std::to_string(layout.buildings);
  kv["scene.building_min_cells"] = std::to_string(layout.building_min_cells);
  kv["scene.building_max_cells"] = std::to_string(layout.building_max_cells);
  kv["scene.transmitters"] = std::to_string(layout.transmitters);
  kv["scene.power_min_dbm"] = format_double(layout.power_min_dbm);
  kv["scene.power_max_dbm"] = format_double(layout.power_max_dbm);
  kv["scene.path_loss_exponent"] = format_double(propagation.path_loss_exponent);
  kv["scene.reference_distance"] = format_double(propagation.reference_distance);
  kv["scene.wall_loss_db"] = format_double(propagation.wall_loss_db);
  kv["scene.shadow_sigma_db"] = format_double(propagation.shadow_sigma_db);
  kv["scene.shadow_corr_cells"] = format_double(propagation.shadow_corr_cells);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t DatasetConfig::scene_hash() const {
  std::string s;
  std::istringstream is(canonical());
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("scene.", 0) == 0 || line.rfind("dataset.seed=", 0) == 0) s += line + "\n";
  }
  return fnv1a64(s);
}

std::vector<std::string> dataset_config_keys() {
  return {"dataset.seed",         "dataset.train_pool",      "dataset.test_pool",
          "dataset.window",       "dataset.samples",         "dataset.splits",
          "dataset.factor_min",   "dataset.factor_max",      "dataset.split_ratio",
          "dataset.val_fraction", "dataset.test_maps",       "dataset.fine",
          "scene.ny",             "scene.nx",                "scene.delta",
          "scene.buildings",      "scene.building_min_cells", "scene.building_max_cells",
          "scene.transmitters",   "scene.power_min_dbm",     "scene.power_max_dbm",
          "scene.path_loss_exponent", "scene.reference_distance", "scene.wall_loss_db",
          "scene.shadow_sigma_db", "scene.shadow_corr_cells"};
}

DatasetConfig dataset_config_from(const ConfigMap& c) {
  DatasetConfig d;
  auto ints = [](const std::vector<std::int64_t>& v) { return std::vector<int>(v.begin(), v.end()); };
  d.seed = static_cast<std::uint64_t>(c.get_int("dataset.seed", static_cast<std::int64_t>(d.seed)));
  d.train_pool = ints(c.get_ints("dataset.train_pool", {d.train_pool.begin(), d.train_pool.end()}));
  d.test_pool = ints(c.get_ints("dataset.test_pool", {d.test_pool.begin(), d.test_pool.end()}));
  d.window = c.get_int("dataset.window", d.window);
  d.samples = static_cast<int>(c.get_int("dataset.samples", d.samples));
  d.splits = static_cast<int>(c.get_int("dataset.splits", d.splits));
  d.factor_min = c.get_double("dataset.factor_min", d.factor_min);
  d.factor_max = c.get_double("dataset.factor_max", d.factor_max);
  d.split_ratio = c.get_double("dataset.split_ratio", d.split_ratio);
  d.val_fraction = c.get_double("dataset.val_fraction", d.val_fraction);
  d.test_maps = static_cast<int>(c.get_int("dataset.test_maps", d.test_maps));
  d.fine = c.get_bool("dataset.fine", d.fine);
  auto& l = d.layout;
  l.ny = c.get_int("scene.ny", l.ny);
  l.nx = c.get_int("scene.nx", l.nx);
  l.delta = c.get_double("scene.delta", l.delta);
  l.buildings = static_cast<int>(c.get_int("scene.buildings", l.buildings));
  l.building_min_cells = static_cast<int>(c.get_int("scene.building_min_cells", l.building_min_cells));
  l.building_max_cells = static_cast<int>(c.get_int("scene.building_max_cells", l.building_max_cells));
  int max_id = 0;
  for (int id : d.train_pool) max_id = std::max(max_id, id);
  for (int id : d.test_pool) max_id = std::max(max_id, id);
  l.transmitters = static_cast<int>(c.get_int("scene.transmitters", std::max(l.transmitters, max_id)));
  l.power_min_dbm = c.get_double("scene.power_min_dbm", l.power_min_dbm);
  l.power_max_dbm = c.get_double("scene.power_max_dbm", l.power_max_dbm);
  auto& p = d.propagation;
  p.path_loss_exponent = c.get_double("scene.path_loss_exponent", p.path_loss_exponent);
  p.reference_distance = c.get_double("scene.reference_distance", p.reference_distance);
  p.wall_loss_db = c.get_double("scene.wall_loss_db", p.wall_loss_db);
  p.shadow_sigma_db = c.get_double("scene.shadow_sigma_db", p.shadow_sigma_db);
  p.shadow_corr_cells = c.get_double("scene.shadow_corr_cells", p.shadow_corr_cells);
  return d;
}

std::pair<double, double> value_statistics(std::span<const Sample> samples) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    sum += s.measurements.values.sum() + s.target_values.sum();
    n += static_cast<std::size_t>(s.measurements.size() + s.query_count());
  }
  if (n == 0) return {0.0, 1.0};
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto& s : samples) {
    sq += (s.measurements.values.array() - mean).square().sum() + (s.target_values.array() - mean).square().sum();
  }
  const double std = std::sqrt(sq / static_cast<double>(n));
  return {mean, std > 1e-12 ? std : 1.0};
}

namespace {

class MapBank {
 public:
  MapBank(const DatasetConfig& config, const Scene& scene, const GridSpec& grid) {
    std::vector<int> ids = config.train_pool;
    ids.insert(ids.end(), config.test_pool.begin(), config.test_pool.end());
    std::sort(ids.begin(), ids.end());
    std::vector<RadioMap> maps(ids.size());
    parallel_for(ids.size(), [&](std::size_t i) {
      const auto tx = static_cast<std::size_t>(ids[i] - 1);
      maps[i] = render_single_tx_map(scene, tx, config.propagation,
                                     derive_seed(config.seed, kShadowStream, static_cast<std::uint64_t>(ids[i])), grid);
    });
    for (std::size_t i = 0; i < ids.size(); ++i) single_[ids[i]] = std::move(maps[i]);
  }

  const RadioMap& pair(int a, int b) {
    const auto key = std::minmax(a, b);
    auto it = pairs_.find(key);
    if (it == pairs_.end()) it = pairs_.emplace(key, aggregate_two_tx(single_.at(key.first), single_.at(key.second))).first;
    return it->second;
  }

 private:
  std::map<int, RadioMap> single_;
  std::map<std::pair<int, int>, RadioMap> pairs_;
};

std::pair<int, int> draw_pair(const std::vector<int>& pool, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const std::size_t a = pick(rng);
  std::size_t b = pick(rng);
  while (b == a) b = pick(rng);
  return {pool[a], pool[b]};
}

Index open_count(const SubMap& sub) {
  return sub.map.building_mask.size() - static_cast<Index>(sub.map.building_mask.cast<int>().sum());
}

SubMap draw_window(const RadioMap& map, Index window, Rng& rng) {
  const auto min_open = static_cast<Index>(std::ceil(kMinOpenFraction * static_cast<double>(window * window)));
  for (int attempt = 0; attempt < kMaxWindowDraws; ++attempt) {
    SubMap sub = extract_subregion(map, window, window, rng);
    if (open_count(sub) >= std::max<Index>(min_open, 2)) return sub;
  }
  throw Error(ErrorKind::degenerate, "no window with enough open cells after " + std::to_string(kMaxWindowDraws) +
                                         " draws; the city is too dense");
}

}  // namespace

Dataset build_dataset(const DatasetConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  const Scene scene = generate_scene(config.layout, derive_seed(config.seed, kSceneStream));
  MapBank coarse(config, scene, scene.grid());

  std::vector<Sample> pool;
  pool.reserve(static_cast<std::size_t>(config.samples));
  for (std::uint64_t w = 0; static_cast<int>(pool.size()) < config.samples; ++w) {
    Rng rng(derive_seed(config.seed, kTrainStream, w));
    const auto [a, b] = draw_pair(config.train_pool, rng);
    const SubMap sub = draw_window(coarse.pair(a, b), config.window, rng);
    const double factor = uniform(rng, config.factor_min, config.factor_max);
    auto samples = make_samples(sub, factor, config.split_ratio, config.splits, rng);
    for (auto& s : samples) {
      if (static_cast<int>(pool.size()) == config.samples) break;
      pool.push_back(std::move(s));
    }
  }
  const auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * config.samples));
  const auto n_train = pool.size() - n_val;
  ds.train.assign(std::make_move_iterator(pool.begin()), std::make_move_iterator(pool.begin() + static_cast<std::ptrdiff_t>(n_train)));
  ds.val.assign(std::make_move_iterator(pool.begin() + static_cast<std::ptrdiff_t>(n_train)), std::make_move_iterator(pool.end()));
  std::tie(ds.value_mean, ds.value_std) = value_statistics(ds.train);

  struct Placement {
    int a, b;
    Index row0, col0;
  };
  std::vector<Placement> placements;
  for (int m = 0; m < config.test_maps; ++m) {
    Rng rng(derive_seed(config.seed, kTestStream, static_cast<std::uint64_t>(m)));
    const auto [a, b] = draw_pair(config.test_pool, rng);
    const SubMap sub = draw_window(coarse.pair(a, b), config.window, rng);
    placements.push_back({a, b, sub.row0, sub.col0});
    ds.test.push_back(full_map_sample(sub));
  }
  if (config.fine) {
    GridSpec fine_grid = scene.grid();
    fine_grid.ny *= 2;
    fine_grid.nx *= 2;
    fine_grid.delta_x /= 2.0;
    fine_grid.delta_y /= 2.0;
    MapBank fine(config, scene, fine_grid);
    for (const auto& p : placements) {
      const SubMap sub =
          extract_subregion_at(fine.pair(p.a, p.b), 2 * p.row0, 2 * p.col0, 2 * config.window, 2 * config.window);
      ds.test_fine.push_back(full_map_sample(sub));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kDatasetMagic[4] = {'R', 'M', 'D', 'S'};
constexpr std::uint16_t kDatasetVersion = 1;

void write_points(std::ostream& os, const PointList& p) {
  for (Index i = 0; i < p.rows(); ++i) {
    io::write<double>(os, p(i, 0));
    io::write<double>(os, p(i, 1));
  }
}

PointList read_points(std::istream& is, std::uint32_t n) {
  PointList p(n, 2);
  for (Index i = 0; i < p.rows(); ++i) {
    p(i, 0) = io::read<double>(is);
    p(i, 1) = io::read<double>(is);
  }
  return p;
}

void write_mask(std::ostream& os, const Mask& m) {
  io::write<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  io::write<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size()));
}

Mask read_mask(std::istream& is) {
  const auto rows = io::read<std::uint32_t>(is);
  const auto cols = io::read<std::uint32_t>(is);
  Mask m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size()));
  if (!is) throw Error(ErrorKind::io, "unexpected end of file in mask");
  return m;
}

}  // namespace

void write_samples(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  os.write(kDatasetMagic, 4);
  io::write<std::uint16_t>(os, kDatasetVersion);
  for (const auto& s : samples) {
    io::write<double>(os, s.extent.origin.x());
    io::write<double>(os, s.extent.origin.y());
    io::write<double>(os, s.extent.size.x());
    io::write<double>(os, s.extent.size.y());
    io::write<std::uint32_t>(os, static_cast<std::uint32_t>(s.measurements.size()));
    io::write<std::uint32_t>(os, static_cast<std::uint32_t>(s.query_count()));
    write_points(os, s.measurements.coords);
    for (Index i = 0; i < s.measurements.size(); ++i) io::write<double>(os, s.measurements.values(i));
    write_points(os, s.target_coords);
    for (Index i = 0; i < s.query_count(); ++i) io::write<double>(os, s.target_values(i));
    write_mask(os, s.b_mask);
    write_mask(os, s.s_mask);
  }
  if (!os) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

std::vector<Sample> read_samples(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open dataset '" + path.string() + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "RMDS") {
    throw Error(ErrorKind::io, "'" + path.string() + "' is not an .rmds dataset");
  }
  const auto version = io::read<std::uint16_t>(is);
  if (version != kDatasetVersion) {
    throw Error(ErrorKind::io, "'" + path.string() + "': unsupported version " + std::to_string(version));
  }
  std::vector<Sample> out;
  try {
    while (is.peek() != std::char_traits<char>::eof()) {
      Sample s;
      s.extent.origin.x() = io::read<double>(is);
      s.extent.origin.y() = io::read<double>(is);
      s.extent.size.x() = io::read<double>(is);
      s.extent.size.y() = io::read<double>(is);
      const auto n = io::read<std::uint32_t>(is);
      const auto q = io::read<std::uint32_t>(is);
      s.measurements.coords = read_points(is, n);
      s.measurements.values.resize(n);
      for (auto& v : s.measurements.values) v = io::read<double>(is);
      s.target_coords = read_points(is, q);
      s.target_values.resize(q);
      for (auto& v : s.target_values) v = io::read<double>(is);
      s.b_mask = read_mask(is);
      s.s_mask = read_mask(is);
      out.push_back(std::move(s));
    }
  } catch (const Error& e) {
    throw Error(ErrorKind::io, "'" + path.string() + "' record " + std::to_string(out.size()) + ": " + e.what());
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create '" + dir.string() + "': " + ec.message());
  write_samples(dir / "train.rmds", ds.train);
  write_samples(dir / "val.rmds", ds.val);
  write_samples(dir / "test.rmds", ds.test);
  if (!ds.test_fine.empty()) write_samples(dir / "test_fine.rmds", ds.test_fine);

  nlohmann::ordered_json j;
  j["seed"] = ds.config.seed;
  j["scene_hash"] = hex64(ds.config.scene_hash());
  j["config_hash"] = hex64(fnv1a64(ds.config.canonical()));
  j["train_pool"] = ds.config.train_pool;
  j["test_pool"] = ds.config.test_pool;
  j["window"] = ds.config.window;
  j["delta"] = ds.config.layout.delta;
  j["fine_delta"] = ds.config.layout.delta / 2.0;
  j["counts"] = {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()},
                 {"test_fine", ds.test_fine.size()}};
  j["value_mean"] = ds.value_mean;
  j["value_std"] = ds.value_std;
  nlohmann::ordered_json cfg;
  std::istringstream is(ds.config.canonical());
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    cfg[line.substr(0, eq)] = line.substr(eq + 1);
  }
  j["config"] = cfg;
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw Error(ErrorKind::io, "cannot write '" + (dir / "manifest.json").string() + "'");
  os << j.dump(2) << "\n";
}

Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io, "cannot read '" + path.string() + "'");
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(is);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.scene_hash = j.at("scene_hash").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.value_mean = j.at("value_mean").get<double>();
    m.value_std = j.at("value_std").get<double>();
    m.delta = j.at("delta").get<double>();
    m.window = j.at("window").get<Index>();
    const auto& c = j.at("counts");
    m.train = c.at("train").get<std::size_t>();
    m.val = c.at("val").get<std::size_t>();
    m.test = c.at("test").get<std::size_t>();
    m.test_fine = c.at("test_fine").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, "'" + path.string() + "': " + e.what());
  }
  return m;
}

}  // namespace rme
