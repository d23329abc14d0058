// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "model_support.hpp"
#include "oracles.hpp"
#include "rme/adam.hpp"
#include "rme/cgformer.hpp"
#include "rme/ops.hpp"

using namespace rme;
using namespace rme::test;

namespace {

void set_zero(Tensor t) {
  for (double& v : t.mutable_data()) v = 0.0;
}

}  // namespace

TEST_CASE("model shapes and parameter count") {
  const CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 1);
  CHECK(m.value_mlp1_a.weight.shape() == Shape{1, 64});
  CHECK(m.value_mlp2_a.weight.shape() == Shape{96, 32});
  CHECK(m.value_mlp2_b.weight.shape() == Shape{32, 64});
  CHECK(m.lift_q.weight.shape() == Shape{32, 64});
  CHECK(m.blocks.size() == 2);
  CHECK(m.head.weight.shape() == Shape{64, 1});
  CHECK(m.parameters().size() == m.named_parameters().size());
  ModelConfig bad;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("fuse_values examples") {
  CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 2);
  randomize_parameters(m, 3);
  Rng rng(4);
  const Tensor vals = random_constant({5, 1}, rng), u = random_constant({5, 32}, rng);
  const Tensor g = fuse_values(vals, u, m);
  CHECK(g.shape() == Shape{5, 64});
  for (std::size_t r = 0; r < 5; ++r) {
    RowMatrix v1(1, 1);
    v1(0, 0) = vals[r];
    const RowMatrix lifted = loop_linear(loop_linear(v1, m.value_mlp1_a).cwiseMax(0.0), m.value_mlp1_b);
    RowMatrix joint(1, 96);
    joint << lifted, u.to_matrix().row(static_cast<Index>(r));
    const RowMatrix out = loop_linear(loop_linear(joint, m.value_mlp2_a).cwiseMax(0.0), m.value_mlp2_b);
    for (Index c = 0; c < 64; ++c) CHECK(std::abs(out(0, c) - g[r * 64 + static_cast<std::size_t>(c)]) <= 1e-15);

    const Tensor one = fuse_values(Tensor::constant({1, 1}, {vals[r]}),
                                   Tensor::constant(u.to_matrix().row(static_cast<Index>(r))), m);
    for (std::size_t c = 0; c < 64; ++c) CHECK(std::abs(one[c] - g[r * 64 + c]) <= 1e-14);
  }
  zero_parameters(m);
  for (double x : fuse_values(vals, u, m).data()) CHECK(x == 0.0);
}

TEST_CASE("cross-attention block matches the loop oracle") {
  const ModelConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    CgformerModel m = init_model(cfg, SseConfig{}, 100 + static_cast<std::uint64_t>(trial));
    randomize_parameters(m, 200 + static_cast<std::uint64_t>(trial));
    Rng rng(derive_seed(5, static_cast<std::uint64_t>(trial)));
    const Tensor q = random_constant({3, 64}, rng), k = random_constant({5, 64}, rng), v = random_constant({5, 64}, rng);
    AttentionTrace trace;
    const Tensor out = cross_attention_block(q, k, v, m.blocks[0], cfg, &trace);
    std::vector<RowMatrix> ref_w;
    const RowMatrix ref = loop_block(q.to_matrix(), k.to_matrix(), v.to_matrix(), m.blocks[0], cfg, &ref_w);
    CHECK((out.to_matrix() - ref).cwiseAbs().maxCoeff() <= 1e-12);
    REQUIRE(trace.weights.size() == 4);
    for (std::size_t h = 0; h < 4; ++h) {
      CHECK((trace.weights[h] - ref_w[h]).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(trace.weights[h].minCoeff() >= 0.0);
      for (Index r = 0; r < 3; ++r) CHECK(std::abs(trace.weights[h].row(r).sum() - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("single-key attention adds the value row") {
  const ModelConfig cfg;
  CgformerModel m = init_model(cfg, SseConfig{}, 7);
  BlockParams& b = m.blocks[0];
  set_zero(b.wq);
  set_zero(b.wk);
  set_zero(b.ffn1.weight);
  set_zero(b.ffn1.bias);
  set_zero(b.ffn2.weight);
  set_zero(b.ffn2.bias);
  const RowMatrix eye = RowMatrix::Identity(64, 64);
  std::copy(eye.data(), eye.data() + eye.size(), b.wv.mutable_data().begin());
  std::copy(eye.data(), eye.data() + eye.size(), b.wo.mutable_data().begin());
  Rng rng(8);
  const Tensor q = random_constant({4, 64}, rng), k = random_constant({1, 64}, rng), v = random_constant({1, 64}, rng);
  const Tensor out = cross_attention_block(q, k, v, b, cfg);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 64; ++c) CHECK(std::abs(out[i * 64 + c] - (q[i * 64 + c] + v[c])) <= 1e-15);
  }
}

TEST_CASE("all-zero block is the identity") {
  const ModelConfig cfg;
  CgformerModel m = init_model(cfg, SseConfig{}, 9);
  zero_parameters(m);
  Rng rng(10);
  const Tensor q = random_constant({3, 64}, rng);
  const Tensor out = cross_attention_block(q, random_constant({6, 64}, rng), random_constant({6, 64}, rng), m.blocks[1], cfg);
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(out[i] == q[i]);
}

TEST_CASE("zero model predicts the head bias") {
  CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 11);
  zero_parameters(m);
  m.head.bias.mutable_data()[0] = 0.37;
  m.normalization = {-50.0, 10.0};
  const Eigen::VectorXd p = predict(toy_sample(5, 7, 3), m);
  for (Index i = 0; i < p.size(); ++i) CHECK(std::abs(p(i) - (-50.0 + 3.7)) <= 1e-12);
}

TEST_CASE("forward rejects empty measurement sets") {
  const CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 12);
  Sample s = toy_sample(3, 3, 4);
  s.measurements.coords.resize(0, 2);
  s.measurements.values.resize(0);
  try {
    forward(s, m);
    FAIL("expected degenerate error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate);
    CHECK(std::string(e.what()).find("baseline") != std::string::npos);
  }
}

TEST_CASE("structural invariants of the estimator") {
  CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 13);
  randomize_parameters(m, 14);
  Rng rng(15);
  for (std::uint64_t n = 0; n < 5; ++n) {
    const Sample s = toy_sample(9, 12, 20 + n);
    m.normalization = toy_normalization(s);
    const Eigen::VectorXd base = predict(s, m);
    for (int k = 0; k < 5; ++k) CHECK((predict(permuted(s, rng), m) - base).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((predict(duplicated(s), m) - base).cwiseAbs().maxCoeff() <= 1e-9);

    Sample sub = s;
    sub.target_coords = s.target_coords.topRows(5);
    sub.target_values = s.target_values.head(5);
    CHECK((predict(sub, m) - base.head(5)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("predictions vary continuously in the query coordinate") {
  CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 16);
  randomize_parameters(m, 17);
  Sample s = toy_sample(6, 4, 5);
  m.normalization = toy_normalization(s);
  Sample near = s;
  near.target_coords.array() += 1e-11;
  CHECK((predict(near, m) - predict(s, m)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("mse objective") {
  const Tensor p = Tensor::constant({2, 1}, {1, 3});
  Eigen::VectorXd t(2);
  t << 1, 1;
  CHECK(mse_objective(p, t).item() == 2.0);
  Eigen::VectorXd same(2);
  same << 1, 3;
  CHECK(mse_objective(p, same).item() == 0.0);
  Rng rng(18);
  const Tensor r = random_constant({7, 1}, rng);
  Eigen::VectorXd u(7);
  double ref = 0.0;
  for (Index i = 0; i < 7; ++i) {
    u(i) = uniform(rng, -1, 1);
    ref += (r[static_cast<std::size_t>(i)] - u(i)) * (r[static_cast<std::size_t>(i)] - u(i));
  }
  CHECK(std::abs(mse_objective(r, u).item() - ref / 7.0) <= 1e-12);
  CHECK_THROWS_AS(mse_objective(r, t), Error);
}

TEST_CASE("full-model gradients match finite differences") {
  for (std::uint64_t draw = 0; draw < 3; ++draw) {
    CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 300 + draw);
    randomize_parameters(m, 400 + draw);
    const Sample s = toy_sample(4, 2, 500 + draw);
    m.normalization = toy_normalization(s);
    const Eigen::VectorXd truth = standardized_targets(s, m.normalization);
    const auto r = grad_check([&] { return mse_objective(forward(s, m), truth); }, m.parameters(), 1e-5, 6, draw);
    CAPTURE(draw);
    CHECK(r.max_rel <= 1e-4);
  }
}

TEST_CASE("batch gradients: averaging and duplicated batches") {
  CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 19);
  randomize_parameters(m, 20);
  const Sample a = toy_sample(5, 4, 30), b = toy_sample(6, 3, 31);
  m.normalization = toy_normalization(a);
  const Sample* once[] = {&a, &b};
  const Sample* twice[] = {&a, &b, &a, &b};
  const BatchGradients g1 = batch_gradients(once, m), g2 = batch_gradients(twice, m);
  CHECK(std::abs(g1.loss - g2.loss) <= 1e-14 * std::max(1.0, g1.loss));
  for (std::size_t t = 0; t < g1.grads.size(); ++t) {
    for (std::size_t i = 0; i < g1.grads[t].size(); ++i) {
      CHECK(std::abs(g1.grads[t][i] - g2.grads[t][i]) <= 1e-14 * std::max(1.0, std::abs(g1.grads[t][i])));
    }
  }
  const BatchGradients threaded = batch_gradients(twice, m, 3);
  for (std::size_t t = 0; t < g2.grads.size(); ++t) CHECK(threaded.grads[t] == g2.grads[t]);

  // Finite differences of the batch loss.
  const auto r = grad_check(
      [&] {
        const Eigen::VectorXd ta = standardized_targets(a, m.normalization), tb = standardized_targets(b, m.normalization);
        return scale(add(mse_objective(forward(a, m), ta), mse_objective(forward(b, m), tb)), 0.5);
      },
      m.parameters(), 1e-5, 4, 7);
  CHECK(r.max_rel <= 1e-4);
}

TEST_CASE("one-sample training halves the loss within 50 steps") {
  CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 21);
  const Sample s = toy_sample(8, 8, 40);
  m.normalization = toy_normalization(s);
  AdamState st = make_adam_state(m.parameters(), AdamConfig{});
  const Sample* batch[] = {&s};
  const double first = train_step(batch, m, st);
  double last = first;
  for (int i = 1; i < 50; ++i) last = train_step(batch, m, st);
  CHECK(last <= 0.5 * first);
  CHECK(st.t == 50);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 22);
  Sample s = toy_sample(4, 3, 41);
  s.target_values(0) = NAN;
  AdamState st = make_adam_state(m.parameters(), AdamConfig{});
  const Sample* batch[] = {&s};
  try {
    train_step(batch, m, st);
    FAIL("expected numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("lr") != std::string::npos);
  }
}

TEST_CASE("model files round-trip bit-exactly") {
  CgformerModel m = init_model(ModelConfig{}, SseConfig{}, 23);
  randomize_parameters(m, 24);
  m.normalization = {-61.25, 7.5};
  m.metadata["note"] = "x";
  AdamState st = make_adam_state(m.parameters(), AdamConfig{});
  const Sample s = toy_sample(4, 4, 42);
  const Sample* batch[] = {&s};
  train_step(batch, m, st);

  const auto path = std::filesystem::temp_directory_path() / "rme_test_model.rmod";
  save_model(path, m, &st);
  AdamState st2;
  const CgformerModel back = load_model(path, &st2);
  const auto a = m.named_parameters(), b = back.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.data().begin()));
    CHECK(st.m[i] == st2.m[i]);
    CHECK(st.v[i] == st2.v[i]);
  }
  CHECK(st2.t == st.t);
  CHECK(back.normalization.mean == m.normalization.mean);
  CHECK(back.metadata.at("note") == "x");
  CHECK(predict(s, back) == predict(s, m));
  std::filesystem::remove(path);
}

TEST_CASE("finer inputs are re-gridded onto the semantic cell") {
  CgformerModel coarse_model = init_model(ModelConfig{}, SseConfig{}, 25);
  ModelConfig cfg;
  cfg.semantic_cell = 3.25;
  CgformerModel fixed_model = init_model(cfg, SseConfig{}, 25);
  const Sample s = toy_sample(6, 5, 43);
  // Same parameters; native grid already has the semantic cell size.
  CHECK(predict(s, coarse_model) == predict(s, fixed_model));

  // A 2x refined copy of the same sample: masks at half the cell size.
  Sample fine = s;
  fine.b_mask = Mask::Zero(16, 16);
  fine.s_mask = Mask::Zero(16, 16);
  for (Index i = 0; i < 16; ++i) {
    for (Index j = 0; j < 16; ++j) {
      fine.b_mask(i, j) = s.b_mask(i / 2, j / 2);
      fine.s_mask(i, j) = s.s_mask(i / 2, j / 2) && i % 2 == 0 && j % 2 == 0;
    }
  }
  CHECK(predict(fine, fixed_model) == predict(s, fixed_model));
  CHECK(predict(fine, coarse_model) != predict(s, coarse_model));
}
