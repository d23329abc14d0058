// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/cgformer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "rme/config.hpp"
#include "rme/ops.hpp"
#include "rme/parallel.hpp"

namespace rme {

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_blocks < 0 || ffn_hidden < 1 || fusion_hidden_1 < 1 || fusion_hidden_2 < 1) {
    throw Error(ErrorKind::config, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw Error(ErrorKind::config, "d_model " + std::to_string(d_model) + " not divisible by " +
                                       std::to_string(n_heads) + " heads");
  }
  if (!(ln_eps >= 0.0)) throw Error(ErrorKind::config, "layer-norm eps must be non-negative");
  if (!(semantic_cell >= 0.0) || !std::isfinite(semantic_cell)) {
    throw Error(ErrorKind::config, "semantic cell size must be finite and non-negative");
  }
}

namespace {

LayerNormParams init_norm(int d) {
  const auto n = static_cast<std::size_t>(d);
  return {Tensor::parameter({n}, std::vector<double>(n, 1.0)), Tensor::parameter({n}, std::vector<double>(n, 0.0))};
}

Tensor init_square(int d, Rng& rng) { return init_linear(d, d, rng).weight; }

void append(std::vector<io::NamedTensor>& out, const std::string& name, const LinearLayer& l) {
  out.push_back({name + ".weight", l.weight});
  out.push_back({name + ".bias", l.bias});
}

void append(std::vector<io::NamedTensor>& out, const std::string& name, const LayerNormParams& n) {
  out.push_back({name + ".gamma", n.gamma});
  out.push_back({name + ".beta", n.beta});
}

void append(std::vector<io::NamedTensor>& out, const std::string& name, const CnnStack& stack) {
  for (std::size_t i = 0; i < stack.size(); ++i) {
    out.push_back({name + "." + std::to_string(i) + ".kernel", stack[i].kernel});
    out.push_back({name + "." + std::to_string(i) + ".bias", stack[i].bias});
  }
}

}  // namespace

CgformerModel init_model(const ModelConfig& config, const SseConfig& sse_config, std::uint64_t seed) {
  config.validate();
  sse_config.validate();
  Rng rng(derive_seed(seed, 0x30de1));
  CgformerModel m;
  m.config = config;
  m.sse_config = sse_config;
  m.sse = init_sse_params(sse_config, rng);
  m.value_mlp1_a = init_linear(1, config.fusion_hidden_1, rng);
  m.value_mlp1_b = init_linear(config.fusion_hidden_1, config.d_model, rng);
  m.value_mlp2_a = init_linear(config.d_model + sse_config.embed_dim, config.fusion_hidden_2, rng);
  m.value_mlp2_b = init_linear(config.fusion_hidden_2, config.d_model, rng);
  m.lift_q = init_linear(sse_config.embed_dim, config.d_model, rng);
  m.lift_k = init_linear(sse_config.embed_dim, config.d_model, rng);
  for (int b = 0; b < config.n_blocks; ++b) {
    BlockParams block;
    block.norm1 = init_norm(config.d_model);
    block.norm2 = init_norm(config.d_model);
    if (config.normalize_keys) block.key_norm = init_norm(config.d_model);
    block.wq = init_square(config.d_model, rng);
    block.wk = init_square(config.d_model, rng);
    block.wv = init_square(config.d_model, rng);
    block.wo = init_square(config.d_model, rng);
    block.ffn1 = init_linear(config.d_model, config.ffn_hidden, rng);
    block.ffn2 = init_linear(config.ffn_hidden, config.d_model, rng);
    m.blocks.push_back(std::move(block));
  }
  m.head = init_linear(config.d_model, 1, rng);
  return m;
}

std::vector<io::NamedTensor> CgformerModel::named_parameters() const {
  std::vector<io::NamedTensor> out;
  append(out, "sse.cnn_b", sse.cnn_b);
  append(out, "sse.cnn_s", sse.cnn_s);
  for (std::size_t i = 0; i < sse.mlp.size(); ++i) append(out, "sse.mlp." + std::to_string(i), sse.mlp[i]);
  append(out, "fusion.mlp1.0", value_mlp1_a);
  append(out, "fusion.mlp1.1", value_mlp1_b);
  append(out, "fusion.mlp2.0", value_mlp2_a);
  append(out, "fusion.mlp2.1", value_mlp2_b);
  append(out, "lift_q", lift_q);
  append(out, "lift_k", lift_k);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto prefix = "block." + std::to_string(b);
    const auto& blk = blocks[b];
    append(out, prefix + ".norm1", blk.norm1);
    append(out, prefix + ".norm2", blk.norm2);
    if (blk.key_norm.gamma.valid()) append(out, prefix + ".key_norm", blk.key_norm);
    out.push_back({prefix + ".wq", blk.wq});
    out.push_back({prefix + ".wk", blk.wk});
    out.push_back({prefix + ".wv", blk.wv});
    out.push_back({prefix + ".wo", blk.wo});
    append(out, prefix + ".ffn1", blk.ffn1);
    append(out, prefix + ".ffn2", blk.ffn2);
  }
  append(out, "head", head);
  return out;
}

std::vector<Tensor> CgformerModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

std::size_t CgformerModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.size();
  return n;
}

void zero_parameters(CgformerModel& model) {
  for (auto& p : model.parameters()) {
    auto d = p.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
}

// ---------------------------------------------------------------------------

Tensor fuse_values(const Tensor& values, const Tensor& u_m, const CgformerModel& model) {
  if (values.rows() == 0 || u_m.rows() == 0) throw Error(ErrorKind::degenerate, "fuse_values: no measurements");
  if (values.rows() != u_m.rows()) {
    throw Error(ErrorKind::dimension, "fuse_values: " + std::to_string(values.rows()) + " values vs " +
                                          std::to_string(u_m.rows()) + " embeddings");
  }
  const Tensor lifted = model.value_mlp1_b(relu(model.value_mlp1_a(values)));
  const Tensor joint = concat_last_axis(lifted, u_m);
  return model.value_mlp2_b(relu(model.value_mlp2_a(joint)));
}

Tensor cross_attention_block(const Tensor& q, const Tensor& k, const Tensor& v, const BlockParams& block,
                             const ModelConfig& config, AttentionTrace* trace) {
  const auto d = static_cast<std::size_t>(config.d_model);
  if (q.cols() != d || k.cols() != d || v.cols() != d) {
    throw Error(ErrorKind::dimension, "cross_attention_block: expected width " + std::to_string(d) + ", got Q " +
                                          shape_string(q.shape()) + " K " + shape_string(k.shape()) + " V " +
                                          shape_string(v.shape()));
  }
  if (k.rows() != v.rows()) throw Error(ErrorKind::dimension, "cross_attention_block: key/value counts differ");

  const Tensor qn = layer_norm(q, block.norm1.gamma, block.norm1.beta, config.ln_eps);
  const Tensor kin = config.normalize_keys ? layer_norm(k, block.key_norm.gamma, block.key_norm.beta, config.ln_eps) : k;
  const Tensor qp = matmul(qn, block.wq);
  const Tensor kp = matmul(kin, block.wk);
  const Tensor vp = matmul(v, block.wv);

  const auto dh = static_cast<std::size_t>(config.head_dim());
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  if (trace) trace->weights.clear();
  for (int r = 0; r < config.n_heads; ++r) {
    const auto off = static_cast<std::size_t>(r) * dh;
    const Tensor qr = slice_last_axis(qp, off, dh);
    const Tensor kr = slice_last_axis(kp, off, dh);
    const Tensor vr = slice_last_axis(vp, off, dh);
    const Tensor attn = softmax_rows(scale(matmul(qr, transpose(kr)), inv_sqrt_dh));
    if (trace) trace->weights.push_back(attn.to_matrix());
    heads.push_back(matmul(attn, vr));
  }
  const Tensor mha = matmul(concat_last_axis(heads), block.wo);
  const Tensor q1 = add(q, mha);
  const Tensor ff = block.ffn2(relu(block.ffn1(layer_norm(q1, block.norm2.gamma, block.norm2.beta, config.ln_eps))));
  return add(q1, ff);
}

QueryInput query_input(const Sample& sample) {
  QueryInput in;
  in.measurements = &sample.measurements;
  in.queries = &sample.target_coords;
  in.b_mask = &sample.b_mask;
  in.s_mask = &sample.s_mask;
  in.extent = sample.extent;
  return in;
}

namespace {

struct SemanticGrid {
  GridSpec grid;
  const Mask* b_mask = nullptr;
  const Mask* s_mask = nullptr;
  Mask b_owned;
  Mask s_owned;
};

GridSpec grid_over(const Extent& extent, Index ny, Index nx) {
  GridSpec g;
  g.ny = ny;
  g.nx = nx;
  g.delta_x = extent.size.x() / static_cast<double>(nx);
  g.delta_y = extent.size.y() / static_cast<double>(ny);
  g.origin = extent.origin;
  return g;
}

// A coarse cell is a building when at least half of the input cells nearest
// to it are; it is sampled when any measurement is nearest to it.
SemanticGrid semantic_grid(const QueryInput& input, double cell) {
  SemanticGrid out;
  const Mask& b = *input.b_mask;
  const GridSpec native = grid_over(input.extent, b.rows(), b.cols());
  const auto same = [](double a, double c) { return std::abs(a - c) <= 1e-9 * std::max(a, c); };
  if (cell <= 0.0 || (same(native.delta_x, cell) && same(native.delta_y, cell))) {
    out.grid = native;
    out.b_mask = input.b_mask;
    out.s_mask = input.s_mask;
    return out;
  }
  const auto count = [cell](double extent) { return std::max<Index>(1, std::llround(extent / cell)); };
  out.grid = grid_over(input.extent, count(input.extent.size.y()), count(input.extent.size.x()));
  CountGrid built = CountGrid::Zero(out.grid.ny, out.grid.nx);
  CountGrid total = CountGrid::Zero(out.grid.ny, out.grid.nx);
  for (Index i = 0; i < b.rows(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) {
      const CellIndex c = nearest_cell(native.cell_center(i, j), out.grid);
      total(c.i, c.j) += 1;
      built(c.i, c.j) += b(i, j) != 0 ? 1 : 0;
    }
  }
  out.b_owned = Mask::Zero(out.grid.ny, out.grid.nx);
  for (Index i = 0; i < out.grid.ny; ++i) {
    for (Index j = 0; j < out.grid.nx; ++j) {
      out.b_owned(i, j) = total(i, j) > 0 && 2 * built(i, j) >= total(i, j) ? 1 : 0;
    }
  }
  out.s_owned = Mask::Zero(out.grid.ny, out.grid.nx);
  const auto& coords = input.measurements->coords;
  for (Index r = 0; r < coords.rows(); ++r) {
    const CellIndex c = nearest_cell(coords.row(r).transpose(), out.grid);
    out.s_owned(c.i, c.j) = 1;
  }
  out.b_mask = &out.b_owned;
  out.s_mask = &out.s_owned;
  return out;
}

}  // namespace

Tensor forward(const QueryInput& input, const CgformerModel& model, AttentionTrace* trace) {
  const auto& meas = *input.measurements;
  if (meas.empty()) {
    throw Error(ErrorKind::degenerate,
                "forward: sample has no measurements; use a baseline estimator (knn/idw) for empty inputs");
  }
  if (input.queries->rows() == 0) throw Error(ErrorKind::degenerate, "forward: no query points");
  const SemanticGrid sem = semantic_grid(input, model.config.semantic_cell);
  const GridSpec& grid = sem.grid;

  const PriorFeatures priors = encode_priors(*sem.b_mask, *sem.s_mask, model.sse, model.sse_config);
  const Tensor u_p = embed_batch(*input.queries, priors, grid, input.extent, model.sse, model.sse_config);
  const Tensor u_m = embed_batch(meas.coords, priors, grid, input.extent, model.sse, model.sse_config);

  const auto n = static_cast<std::size_t>(meas.size());
  std::vector<double> standardized(n);
  for (std::size_t i = 0; i < n; ++i) standardized[i] = model.normalization.to_model(meas.values(static_cast<Index>(i)));
  const Tensor values = Tensor::constant({n, 1}, std::move(standardized));

  const Tensor keys = model.lift_k(u_m);
  const Tensor fused = fuse_values(values, u_m, model);
  Tensor q = model.lift_q(u_p);
  for (const auto& block : model.blocks) q = cross_attention_block(q, keys, fused, block, model.config, trace);
  return model.head(q);
}

Tensor forward(const Sample& sample, const CgformerModel& model) { return forward(query_input(sample), model); }

Eigen::VectorXd predict(const QueryInput& input, const CgformerModel& model) {
  const Tensor out = forward(input, model);
  Eigen::VectorXd pred(static_cast<Index>(out.size()));
  for (Index i = 0; i < pred.size(); ++i) pred(i) = model.normalization.to_dbm(out[static_cast<std::size_t>(i)]);
  return pred;
}

Eigen::VectorXd predict(const Sample& sample, const CgformerModel& model) { return predict(query_input(sample), model); }

Tensor mse_objective(const Tensor& pred, const Eigen::VectorXd& truth) {
  const auto q = static_cast<std::size_t>(truth.size());
  return mse_loss(pred, Tensor::constant({q, 1}, std::vector<double>(truth.data(), truth.data() + truth.size())));
}

namespace {

Eigen::VectorXd standardized_truth(const Sample& s, const ValueNormalization& norm) {
  Eigen::VectorXd t(s.target_values.size());
  for (Index i = 0; i < t.size(); ++i) t(i) = norm.to_model(s.target_values(i));
  return t;
}

struct SampleGradient {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};

SampleGradient sample_gradient(const Sample& sample, const CgformerModel& model, const std::vector<Tensor>& params) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor loss = mse_objective(forward(sample, model), standardized_truth(sample, model.normalization));
  tape.backward(loss);
  SampleGradient out;
  out.loss = loss.item();
  out.grads.reserve(params.size());
  for (const auto& p : params) {
    const auto g = tape.grad(p);
    if (g.empty()) {
      out.grads.emplace_back(p.size(), 0.0);
    } else {
      out.grads.emplace_back(g.begin(), g.end());
    }
  }
  return out;
}

}  // namespace

BatchGradients batch_gradients(std::span<const Sample* const> batch, const CgformerModel& model, int threads) {
  if (batch.empty()) throw Error(ErrorKind::degenerate, "empty training batch");
  const auto params = model.parameters();
  BatchGradients out;
  for (const auto& p : params) out.grads.emplace_back(p.size(), 0.0);
  auto merge = [&](const SampleGradient& g) {
    out.loss += g.loss;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& dst = out.grads[i];
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g.grads[i][j];
    }
  };
  if (threads <= 1) {
    for (const Sample* s : batch) merge(sample_gradient(*s, model, params));
  } else {
    std::vector<SampleGradient> per_sample(batch.size());
    parallel_for(
        batch.size(), [&](std::size_t i) { per_sample[i] = sample_gradient(*batch[i], model, params); }, threads);
    for (const auto& g : per_sample) merge(g);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (auto& g : out.grads) {
    for (auto& v : g) v *= inv;
  }
  return out;
}

double train_step(std::span<const Sample* const> batch, CgformerModel& model, AdamState& state, int threads) {
  auto bg = batch_gradients(batch, model, threads);
  if (!std::isfinite(bg.loss)) {
    std::ostringstream os;
    os << "non-finite training loss (lr=" << state.config.lr << ", batch=" << batch.size() << ", step=" << state.t
       << "); first sample has " << batch.front()->measurements.size() << " measurements and "
       << batch.front()->query_count() << " targets";
    throw Error(ErrorKind::numeric, os.str());
  }
  auto params = model.parameters();
  adam_step(params, bg.grads, state);
  return bg.loss;
}

double evaluate_loss(std::span<const Sample> samples, const CgformerModel& model, int threads) {
  if (samples.empty()) return 0.0;
  std::vector<double> losses(samples.size());
  parallel_for(
      samples.size(),
      [&](std::size_t i) {
        const Tensor pred = forward(samples[i], model);
        losses[i] = mse_objective(pred, standardized_truth(samples[i], model.normalization)).item();
      },
      threads);
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'R', 'M', 'O', 'D'};
constexpr std::uint16_t kModelVersion = 1;

std::map<std::string, std::string> config_entries(const CgformerModel& m) {
  std::map<std::string, std::string> kv;
  const auto& c = m.config;
  const auto& s = m.sse_config;
  kv["d_model"] = std::to_string(c.d_model);
  kv["n_heads"] = std::to_string(c.n_heads);
  kv["n_blocks"] = std::to_string(c.n_blocks);
  kv["ffn_hidden"] = std::to_string(c.ffn_hidden);
  kv["fusion_hidden_1"] = std::to_string(c.fusion_hidden_1);
  kv["fusion_hidden_2"] = std::to_string(c.fusion_hidden_2);
  kv["normalize_keys"] = c.normalize_keys ? "1" : "0";
  kv["ln_eps"] = format_double(c.ln_eps);
  kv["semantic_cell"] = format_double(c.semantic_cell);
  kv["frequencies"] = std::to_string(s.frequencies);
  kv["d_b"] = std::to_string(s.d_b);
  kv["d_s"] = std::to_string(s.d_s);
  kv["cnn_hidden"] = std::to_string(s.cnn_hidden);
  kv["mlp_hidden"] = std::to_string(s.mlp_hidden);
  kv["embed_dim"] = std::to_string(s.embed_dim);
  kv["h_p_dim"] = std::to_string(s.input_dim());
  kv["variant"] = std::string(variant_name(s.variant));
  for (const auto& [k, v] : m.metadata) kv["meta." + k] = v;
  return kv;
}

int get_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw Error(ErrorKind::io, "model file lacks config entry '" + key + "'");
  return std::stoi(it->second);
}

}  // namespace

void save_model(const std::filesystem::path& path, const CgformerModel& model, const AdamState* optimizer) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  os.write(kModelMagic, 4);
  io::write<std::uint16_t>(os, kModelVersion);
  auto kv = config_entries(model);
  if (optimizer) kv["adam.t"] = std::to_string(optimizer->t);
  io::write<std::uint32_t>(os, static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    io::write_string(os, k);
    io::write_string(os, v);
  }
  io::write<double>(os, model.normalization.mean);
  io::write<double>(os, model.normalization.std);
  auto params = model.named_parameters();
  if (optimizer) {
    const auto n = params.size();
    for (std::size_t i = 0; i < n; ++i) {
      params.push_back({"adam.m." + params[i].name, Tensor::constant(params[i].tensor.shape(), optimizer->m[i])});
    }
    for (std::size_t i = 0; i < n; ++i) {
      params.push_back({"adam.v." + params[i].name, Tensor::constant(params[i].tensor.shape(), optimizer->v[i])});
    }
  }
  io::write_parameters(os, params);
  if (!os) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

CgformerModel load_model(const std::filesystem::path& path, AdamState* optimizer) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open model '" + path.string() + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "RMOD") throw Error(ErrorKind::io, "'" + path.string() + "' is not a model file");
  const auto version = io::read<std::uint16_t>(is);
  if (version != kModelVersion) throw Error(ErrorKind::io, "unsupported model version " + std::to_string(version));
  std::map<std::string, std::string> kv;
  const auto entries = io::read<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < entries; ++i) {
    auto k = io::read_string(is);
    kv[k] = io::read_string(is);
  }
  ModelConfig c;
  c.d_model = get_int(kv, "d_model");
  c.n_heads = get_int(kv, "n_heads");
  c.n_blocks = get_int(kv, "n_blocks");
  c.ffn_hidden = get_int(kv, "ffn_hidden");
  c.fusion_hidden_1 = get_int(kv, "fusion_hidden_1");
  c.fusion_hidden_2 = get_int(kv, "fusion_hidden_2");
  c.normalize_keys = get_int(kv, "normalize_keys") != 0;
  c.ln_eps = std::stod(kv.at("ln_eps"));
  if (kv.contains("semantic_cell")) c.semantic_cell = std::stod(kv.at("semantic_cell"));
  SseConfig s;
  s.frequencies = get_int(kv, "frequencies");
  s.d_b = get_int(kv, "d_b");
  s.d_s = get_int(kv, "d_s");
  s.cnn_hidden = get_int(kv, "cnn_hidden");
  s.mlp_hidden = get_int(kv, "mlp_hidden");
  s.embed_dim = get_int(kv, "embed_dim");
  s.variant = parse_variant(kv.at("variant"));

  CgformerModel model = init_model(c, s, 0);
  model.normalization.mean = io::read<double>(is);
  model.normalization.std = io::read<double>(is);
  for (const auto& [k, v] : kv) {
    if (k.rfind("meta.", 0) == 0) model.metadata[k.substr(5)] = v;
  }

  const auto blobs = io::read_parameters(is);
  std::map<std::string, const io::NamedBlob*> by_name;
  for (const auto& b : blobs) by_name[b.name] = &b;
  auto named = model.named_parameters();
  for (auto& p : named) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw Error(ErrorKind::io, "model file lacks parameter '" + p.name + "'");
    if (it->second->shape != p.tensor.shape()) {
      throw Error(ErrorKind::io, "parameter '" + p.name + "' has shape " + shape_string(it->second->shape) +
                                     ", expected " + shape_string(p.tensor.shape()));
    }
    std::copy(it->second->values.begin(), it->second->values.end(), p.tensor.mutable_data().begin());
  }
  if (optimizer) {
    std::vector<Tensor> params;
    for (auto& p : named) params.push_back(p.tensor);
    *optimizer = make_adam_state(params, optimizer->config);
    auto t = kv.find("adam.t");
    if (t != kv.end()) {
      optimizer->t = std::stoull(t->second);
      for (std::size_t i = 0; i < named.size(); ++i) {
        auto m = by_name.find("adam.m." + named[i].name);
        auto v = by_name.find("adam.v." + named[i].name);
        if (m == by_name.end() || v == by_name.end()) {
          throw Error(ErrorKind::io, "checkpoint lacks optimizer state for '" + named[i].name + "'");
        }
        optimizer->m[i] = m->second->values;
        optimizer->v[i] = v->second->values;
      }
    }
  }
  return model;
}

}  // namespace rme
