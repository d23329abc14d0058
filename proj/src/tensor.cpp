// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace rme {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static std::shared_ptr<detail::Node> new_node(Shape shape, Buffer values) {
  if (shape.empty()) throw Error(ErrorKind::dimension, "tensor shape must have at least one axis");
  for (auto d : shape) {
    if (d == 0) throw Error(ErrorKind::dimension, "tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw Error(ErrorKind::dimension, "tensor shape " + shape_string(shape) + " does not match " +
                                          std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return node;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return from_node(new_node(std::move(shape), Buffer(values.begin(), values.end())));
}

Tensor Tensor::constant(const RowMatrix& m) {
  return from_node(new_node({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                            Buffer(m.data(), m.data() + m.size())));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  auto node = new_node(std::move(shape), Buffer(values.begin(), values.end()));
  node->requires_grad = true;
  return from_node(std::move(node));
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw Error(ErrorKind::contract, "use of an empty tensor handle");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw Error(ErrorKind::dimension, "axis out of range for " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::cols() const { return shape().back(); }
std::size_t Tensor::rows() const { return size() / cols(); }

ConstMatrixMap Tensor::matrix() const {
  return ConstMatrixMap(node_->value.data(), static_cast<Eigen::Index>(rows()),
                        static_cast<Eigen::Index>(cols()));
}

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorKind::contract, "item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw Error(ErrorKind::contract, "use of an empty tensor handle");
  return node_->value;
}

// ---------------------------------------------------------------------------

Tape::Tape() = default;

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() noexcept { return g_active_tape; }

void Tape::record(const std::shared_ptr<detail::Node>& node) {
  node->tape = this;
  node->epoch = epoch_;
  node->leaf = false;
  node->requires_grad = true;
  records_.push_back(node);
}

Buffer& Tape::slot(detail::Node& node) {
  if (node.leaf) {
    auto& g = leaf_grads_[&node];
    if (g.empty()) g.assign(node.value.size(), 0.0);
    return g;
  }
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.valid()) throw Error(ErrorKind::contract, "backward on an empty tensor");
  if (loss.size() != 1) {
    throw Error(ErrorKind::contract, "backward requires a scalar loss, got " + shape_string(loss.shape()));
  }
  auto* root = loss.node();
  if (root->leaf || !owns(*root)) {
    throw Error(ErrorKind::tape, "loss is detached from the active tape");
  }
  for (auto& n : records_) n->grad.clear();
  leaf_grads_.clear();
  slot(*root)[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto& node = **it;
    if (node.grad.empty() || !node.backward) continue;
    node.backward(node, *this);
  }
}

std::span<const double> Tape::grad(const Tensor& t) const {
  const auto* node = t.node();
  if (!node) return {};
  if (node->leaf) {
    auto it = leaf_grads_.find(node);
    if (it == leaf_grads_.end()) return {};
    return it->second;
  }
  if (!owns(*node)) throw Error(ErrorKind::tape, "stale tensor handle from a cleared tape");
  return node->grad;
}

Tensor Tape::grad_tensor(const Tensor& t) const {
  auto g = grad(t);
  if (g.empty()) return Tensor::zeros(t.shape());
  return Tensor::constant(t.shape(), std::vector<double>(g.begin(), g.end()));
}

void Tape::clear() {
  for (auto& n : records_) n->backward = nullptr;
  records_.clear();
  leaf_grads_.clear();
  ++epoch_;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

// ---------------------------------------------------------------------------

namespace detail {

namespace {

template <typename Range>
Tensor make_result_impl(Shape shape, Buffer value, const Range& inputs,
                        std::function<void(Node&, Tape&)> backward) {
  auto node = new_node(std::move(shape), std::move(value));
  Tape* tape = Tape::active();
  bool needs_grad = false;
  for (const Tensor* in : inputs) {
    const Node* n = in->node();
    if (!n) throw Error(ErrorKind::contract, "op applied to an empty tensor handle");
    if (!n->requires_grad) continue;
    if (!n->leaf) {
      if (tape == nullptr || !tape->owns(*n)) {
        throw Error(ErrorKind::tape, "tensor belongs to an inactive or cleared tape");
      }
    }
    needs_grad = true;
  }
  if (needs_grad && tape != nullptr) {
    node->inputs.reserve(inputs.size());
    for (const Tensor* in : inputs) node->inputs.push_back(in->handle());
    node->backward = std::move(backward);
    tape->record(node);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace

Tensor make_result(Shape shape, Buffer value, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&, Tape&)> backward) {
  return make_result_impl(std::move(shape), std::move(value), inputs, std::move(backward));
}

Tensor make_result(Shape shape, Buffer value, const std::vector<Tensor>& inputs,
                   std::function<void(Node&, Tape&)> backward) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(inputs.size());
  for (const auto& t : inputs) ptrs.push_back(&t);
  return make_result_impl(std::move(shape), std::move(value), ptrs, std::move(backward));
}

}  // namespace detail

}  // namespace rme
