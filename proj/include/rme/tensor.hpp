// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major float64 tensors with define-by-run reverse-mode
// differentiation.
//
// A Tensor is a shared handle to an immutable node. Parameters are leaf nodes
// flagged as requiring gradients; every op whose inputs require gradients is
// recorded on the thread's active Tape (see TapeScope). With no active tape
// ops evaluate eagerly and produce constants, which is the inference path.
//
// Gradients of interior nodes live on the node; gradients of leaves live on
// the tape, so several threads may run forward/backward against the same
// parameters with independent tapes.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "rme/error.hpp"

namespace rme {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Tensor storage. Aligned to Eigen's widest packet so kernels never peel
/// by address and results are identical for every allocation.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

namespace detail {

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  bool leaf = true;
  const Tape* tape = nullptr;
  std::uint64_t epoch = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&, Tape&)> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor constant(const RowMatrix& m);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool valid() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const;

  /// Leading axes flattened; the 2-D view every matrix op works on.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->value; }
  ConstMatrixMap matrix() const;
  RowMatrix to_matrix() const { return matrix(); }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool is_leaf() const noexcept { return node_ && node_->leaf; }

  /// Writable storage; only meaningful for parameters between steps.
  std::span<double> mutable_data();

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& handle() const noexcept { return node_; }

  /// Wraps an already-built node (used by op implementations).
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of one forward pass.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Thread's active tape or nullptr.
  static Tape* active() noexcept;

  void record(const std::shared_ptr<detail::Node>& node);
  std::size_t size() const noexcept { return records_.size(); }
  std::uint64_t epoch() const noexcept { return epoch_; }

  /// Replays the recorded ops in reverse, seeding d(loss)/d(loss) = 1.
  void backward(const Tensor& loss);

  /// Gradient accumulated for a tensor, empty if it was never reached.
  std::span<const double> grad(const Tensor& t) const;
  Tensor grad_tensor(const Tensor& t) const;

  /// Drops all records and leaf gradients; outstanding interior handles
  /// become stale and are rejected if fed back into recorded ops.
  void clear();

  /// Zero-initialised gradient slot for `node` (used by backward rules).
  Buffer& slot(detail::Node& node);
  bool owns(const detail::Node& node) const noexcept {
    return node.tape == this && node.epoch == epoch_;
  }

 private:
  std::vector<std::shared_ptr<detail::Node>> records_;
  std::unordered_map<const detail::Node*, Buffer> leaf_grads_;
  std::uint64_t epoch_ = 1;
  friend class TapeScope;
};

/// Makes `tape` the active tape of the calling thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

/// Creates the result node of an op and records it when any input needs
/// gradients. Rejects inputs recorded on another tape or an earlier epoch.
Tensor make_result(Shape shape, Buffer value,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&, Tape&)> backward);
Tensor make_result(Shape shape, Buffer value, const std::vector<Tensor>& inputs,
                   std::function<void(Node&, Tape&)> backward);

}  // namespace detail

}  // namespace rme
