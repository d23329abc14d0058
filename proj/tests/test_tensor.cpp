// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "doctest.h"
#include "rme/adam.hpp"
#include "rme/error.hpp"
#include "rme/ops.hpp"
#include "support.hpp"

using namespace rme;
using rme::test::grad_check;
using rme::test::random_constant;
using rme::test::random_parameter;

namespace {

ErrorKind kind_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an rme::Error");
  return ErrorKind::io;
}

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor::constant({r, c}, std::move(v)); }

}  // namespace

TEST_CASE("tensor construction checks shape against data") {
  CHECK(kind_of([] { Tensor::constant({2, 3}, std::vector<double>(5)); }) == ErrorKind::dimension);
  CHECK(kind_of([] { Tensor::zeros({2, 0}); }) == ErrorKind::dimension);
  const Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.size() == shape_size(t.shape()));
  CHECK(t.rows() == 6);
  CHECK(t.cols() == 4);
}

TEST_CASE("matmul examples and triple-loop oracle") {
  const Tensor a = mat(2, 2, {1, 2, 3, 4});
  const Tensor id = mat(2, 2, {1, 0, 0, 1});
  CHECK(matmul(a, id).to_matrix() == a.to_matrix());
  const Tensor c = matmul(id, mat(2, 1, {5, 7}));
  CHECK(c[0] == 5.0);
  CHECK(c[1] == 7.0);

  Rng rng(11);
  const Tensor x = random_constant({3, 4}, rng), y = random_constant({4, 2}, rng);
  const Tensor z = matmul(x, y);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += x[i * 4 + k] * y[k * 2 + j];
      CHECK(std::abs(z[i * 2 + j] - s) <= 1e-12);
    }
  }
  try {
    matmul(x, x);
    FAIL("expected dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
    CHECK(std::string(e.what()).find("[3x4]") != std::string::npos);
  }
}

TEST_CASE("softmax_rows examples and properties") {
  const Tensor s = softmax_rows(mat(1, 3, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(s[i] - 1.0 / 3.0) <= 1e-15);
  CHECK(softmax_rows(mat(1, 1, {-123.5}))[0] == 1.0);

  const Tensor r = softmax_rows(mat(1, 3, {1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(r[i] - std::exp(static_cast<double>(i + 1)) / z) <= 1e-12);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    RowMatrix x = test::random_matrix(4, 7, rng) * 30.0;
    const Tensor p = softmax_rows(Tensor::constant(x));
    x.array() += 17.25;
    const Tensor q = softmax_rows(Tensor::constant(x));
    for (std::size_t row = 0; row < 4; ++row) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        total += p[row * 7 + c];
        CHECK(std::abs(p[row * 7 + c] - q[row * 7 + c]) <= 1e-12);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
  CHECK(kind_of([] { softmax_rows(mat(1, 2, {0.0, NAN})); }) == ErrorKind::numeric);
  CHECK(kind_of([] { softmax_rows(mat(1, 2, {0.0, INFINITY})); }) == ErrorKind::numeric);
}

TEST_CASE("layer_norm examples and properties") {
  const Tensor ones = Tensor::constant({3}, {1, 1, 1}), zeros = Tensor::zeros({3});
  const Tensor flat = layer_norm(mat(1, 3, {5, 5, 5}), ones, zeros);
  for (std::size_t i = 0; i < 3; ++i) CHECK(flat[i] == 0.0);

  const Tensor y = layer_norm(mat(1, 3, {1, 2, 3}), ones, zeros, 0.0);
  const double expected = 1.0 / std::sqrt(2.0 / 3.0);
  CHECK(std::abs(y[0] + expected) <= 1e-12);
  CHECK(std::abs(y[1]) <= 1e-12);
  CHECK(std::abs(y[2] - expected) <= 1e-12);

  Rng rng(5);
  const Tensor beta = random_constant({6}, rng);
  const Tensor all_beta = layer_norm(random_constant({4, 6}, rng), Tensor::zeros({6}), beta);
  for (std::size_t i = 0; i < all_beta.size(); ++i) CHECK(all_beta[i] == beta[i % 6]);

  const Tensor g1 = Tensor::constant({8}, std::vector<double>(8, 1.0));
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor n = layer_norm(random_constant({5, 8}, rng, -10, 10), g1, Tensor::zeros({8}), 0.0);
    for (std::size_t r = 0; r < 5; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t c = 0; c < 8; ++c) mu += n[r * 8 + c];
      mu /= 8.0;
      for (std::size_t c = 0; c < 8; ++c) var += (n[r * 8 + c] - mu) * (n[r * 8 + c] - mu);
      CHECK(std::abs(mu) <= 1e-12);
      CHECK(std::abs(var / 8.0 - 1.0) <= 1e-9);
    }
  }
  CHECK(kind_of([] { layer_norm(mat(1, 3, {1, 2, 3}), Tensor::zeros({2}), Tensor::zeros({2})); }) ==
        ErrorKind::dimension);
}

TEST_CASE("conv2d examples and quadruple-loop oracle") {
  const Tensor ones_in = Tensor::constant({1, 5, 5}, std::vector<double>(25, 1.0));
  const Tensor box = Tensor::constant({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  const Tensor y = conv2d(ones_in, box, Tensor::zeros({1}));
  CHECK(y.shape() == Shape{1, 5, 5});
  CHECK(y[2 * 5 + 2] == 9.0);
  CHECK(y[0 * 5 + 2] == 6.0);
  CHECK(y[0] == 4.0);
  CHECK(y[24] == 4.0);

  Rng rng(9);
  const Tensor x = random_constant({2, 6, 7}, rng);
  std::vector<double> delta(2 * 2 * 9, 0.0);
  delta[0 * 18 + 0 * 9 + 4] = 1.0;
  delta[1 * 18 + 1 * 9 + 4] = 1.0;
  const Tensor same = conv2d(x, Tensor::constant({2, 2, 3, 3}, delta), Tensor::zeros({2}));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same[i] == x[i]);

  for (std::size_t k : {1u, 3u, 5u}) {
    const Tensor w = random_constant({3, 2, k, k}, rng), b = random_constant({3}, rng);
    const Tensor out = conv2d(x, w, b);
    const long pad = static_cast<long>(k / 2);
    for (std::size_t o = 0; o < 3; ++o) {
      for (long r = 0; r < 6; ++r) {
        for (long c = 0; c < 7; ++c) {
          double s = b[o];
          for (std::size_t ci = 0; ci < 2; ++ci) {
            for (long u = 0; u < static_cast<long>(k); ++u) {
              for (long v = 0; v < static_cast<long>(k); ++v) {
                const long rr = r + u - pad, cc = c + v - pad;
                if (rr < 0 || rr >= 6 || cc < 0 || cc >= 7) continue;
                s += w[((o * 2 + ci) * k + static_cast<std::size_t>(u)) * k + static_cast<std::size_t>(v)] *
                     x[(ci * 6 + static_cast<std::size_t>(rr)) * 7 + static_cast<std::size_t>(cc)];
              }
            }
          }
          CHECK(std::abs(out[(o * 6 + static_cast<std::size_t>(r)) * 7 + static_cast<std::size_t>(c)] - s) <= 1e-12);
        }
      }
    }
  }
  CHECK(kind_of([&] { conv2d(x, Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1})); }) == ErrorKind::config);
  CHECK(kind_of([&] { conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1})); }) == ErrorKind::dimension);
}

TEST_CASE("relu, add, concat and linear examples") {
  const Tensor r = relu(Tensor::constant({3}, {-1, 0, 2}));
  CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{0, 0, 2});
  const Tensor c = concat_last_axis(Tensor::constant({2}, {1, 2}), Tensor::constant({1}, {3}));
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{1, 2, 3});
  const Tensor s = add(Tensor::constant({2}, {1, 2}), Tensor::constant({2}, {10, 20}));
  CHECK(s[0] == 11.0);
  CHECK(s[1] == 22.0);

  Rng rng(4);
  const Tensor x = random_constant({3, 4}, rng);
  const Tensor id = Tensor::constant(RowMatrix::Identity(4, 4));
  const Tensor same = linear(x, id, Tensor::zeros({4}));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same[i] == x[i]);

  CHECK(kind_of([&] { add(x, Tensor::zeros({4, 3})); }) == ErrorKind::dimension);
  CHECK(kind_of([&] { linear(x, Tensor::zeros({3, 2}), Tensor::zeros({2})); }) == ErrorKind::dimension);
  CHECK(kind_of([&] { linear(x, Tensor::zeros({4, 2}), Tensor::zeros({3})); }) == ErrorKind::dimension);
  CHECK(kind_of([&] { concat_last_axis(x, Tensor::zeros({2, 4})); }) == ErrorKind::dimension);
}

TEST_CASE("backward examples") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = Tensor::parameter({2, 3}, {1, -2, 3, 0.5, 7, 1});
  tape.backward(sum(x));
  for (double g : tape.grad(x)) CHECK(g == 1.0);

  tape.clear();
  const Tensor y = Tensor::parameter({3}, {1, 2, 3});
  tape.backward(sum(mul(y, y)));
  const auto g = tape.grad(y);
  REQUIRE(g.size() == 3);
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 6.0);
}

TEST_CASE("backward errors and tape hygiene") {
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor p = Tensor::parameter({2}, {1, 2});
    const Tensor v = scale(p, 2.0);
    CHECK(kind_of([&] { tape.backward(v); }) == ErrorKind::contract);

    tape.clear();
    CHECK(kind_of([&] { relu(v); }) == ErrorKind::tape);
    CHECK(kind_of([&] { tape.backward(sum(v)); }) == ErrorKind::tape);
  }
  Tape other;
  Tensor loss;
  {
    TapeScope scope(other);
    loss = sum(Tensor::parameter({2}, {1, 2}));
  }
  CHECK(kind_of([&] { tape.backward(loss); }) == ErrorKind::tape);
}

TEST_CASE("every reachable parameter gets a same-shaped gradient") {
  Rng rng(8);
  const Tensor w = random_parameter({4, 3}, rng), b = random_parameter({3}, rng), unused = random_parameter({2}, rng);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(relu(linear(random_constant({5, 4}, rng), w, b))));
  CHECK(tape.grad(w).size() == w.size());
  CHECK(tape.grad(b).size() == b.size());
  CHECK(tape.grad(unused).empty());
}

TEST_CASE("finite-difference gradients of every differentiable op") {
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    for (const auto& c : test::op_gradient_cases(draw)) {
      CAPTURE(draw);
      CAPTURE(c.name);
      CHECK(grad_check(c.loss, c.params).max_rel <= 1e-4);
    }
  }
}

TEST_CASE("adam recurrence") {
  AdamConfig cfg;
  Tensor p = Tensor::parameter({1}, {0.25});
  std::vector<Tensor> params{p};
  AdamState st = make_adam_state(params, cfg);
  CHECK(st.t == 0);
  CHECK(st.m[0][0] == 0.0);
  CHECK(st.v[0][0] == 0.0);

  const std::vector<std::vector<double>> zero{{0.0}};
  adam_step(params, zero, st);
  CHECK(p[0] == 0.25);
  CHECK(st.t == 1);

  Tensor q = Tensor::parameter({1}, {0.0});
  std::vector<Tensor> qs{q};
  AdamState s2 = make_adam_state(qs, cfg);
  const std::vector<std::vector<double>> one{{1.0}};
  adam_step(qs, one, s2);
  CHECK(std::abs(q[0] - (-4.99999995e-4)) <= 1e-15);

  // Second identical gradient by the hand-written scalar recurrence.
  const double m2 = 0.9 * 0.1 + 0.1, v2 = 0.999 * 0.001 + 0.001;
  const double mhat = m2 / (1 - 0.81), vhat = v2 / (1 - 0.999 * 0.999);
  const double before = q[0];
  adam_step(qs, one, s2);
  CHECK(std::abs((q[0] - before) - (-5e-4 * mhat / (std::sqrt(vhat) + 1e-8))) <= 1e-12);
  CHECK(s2.t == 2);

  const std::vector<std::vector<double>> wrong{{1.0, 2.0}};
  CHECK(kind_of([&] { adam_step(qs, wrong, s2); }) == ErrorKind::dimension);
}

TEST_CASE("forward passes are bit-deterministic") {
  Rng r1(77), r2(77);
  const Tensor a1 = random_constant({4, 6}, r1), b1 = random_constant({6, 3}, r1);
  const Tensor a2 = random_constant({4, 6}, r2), b2 = random_constant({6, 3}, r2);
  const Tensor y1 = softmax_rows(matmul(a1, b1)), y2 = softmax_rows(matmul(a2, b2));
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
}
