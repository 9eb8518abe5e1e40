// wavssl/tensor.hpp

// Copyright 2026  The wavssl authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "wavssl/rng.hpp"

namespace wavssl {

/// Shape/axis mismatch between operands of a primitive.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite value produced by a forward primitive on finite inputs.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// A caller broke an operation's precondition.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

namespace detail {
inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

/// One node of the computation record. Nodes are appended in execution order
/// (`seq`); replaying backward in decreasing `seq` visits each node exactly
/// once in reverse topological order, since every input predates its use.
template <typename Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // allocated lazily
  bool requires_grad = false;
  bool leaf = false;
  const char* op = "leaf";
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
  void zero_grad() { grad.assign(value.size(), Real(0)); }
};

/// Shared handle to a TensorNode. Copies alias the same storage; all forward
/// primitives produce fresh nodes, so aliasing is only observable for leaves
/// (parameters), which is exactly what the optimizer needs.
template <typename Real>
class Tensor {
 public:
  using Node = TensorNode<Real>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " elements");
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->leaf = true;
    n->seq = detail::next_seq();
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<Real> data(numel(shape), Real(0));
    return from(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor full(Shape shape, Real v, bool requires_grad = false) {
    std::vector<Real> data(numel(shape), v);
    return from(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, Real stddev = Real(1), bool requires_grad = false) {
    std::vector<Real> data(numel(shape));
    for (auto& x : data) x = static_cast<Real>(rng.normal(0.0, 1.0)) * stddev;
    return from(std::move(shape), std::move(data), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape[axis]; }

  const std::vector<Real>& values() const { return node_->value; }
  std::vector<Real>& values_mut() { return node_->value; }
  Real item() const {
    if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }
  Real at(std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) {
    node_->requires_grad = b;
    node_->leaf = true;
  }

  const std::vector<Real>& grad() const {
    const_cast<Node*>(node_.get())->ensure_grad();
    return node_->grad;
  }
  std::vector<Real>& grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->zero_grad(); }

  const char* op() const { return node_->op; }
  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename Real>
void check_finite(const char* op, const std::vector<Real>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string("non-finite value produced by primitive '") + op +
                         "' at flat index " + std::to_string(i));
    }
  }
}

}  // namespace detail

/// Builds an op node: checks the result for non-finite values, wires parents,
/// and installs the adjoint function when any parent needs gradients.
template <typename Real, typename BackFn>
Tensor<Real> make_op(const char* op, Shape shape, std::vector<Real> value,
                     std::initializer_list<Tensor<Real>> parents, BackFn&& backward) {
  detail::check_finite(op, value);
  auto n = std::make_shared<TensorNode<Real>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  n->seq = detail::next_seq();
  bool needs = false;
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    needs = needs || p.node()->requires_grad;
  }
  n->requires_grad = needs;
  if (needs) n->backward = std::forward<BackFn>(backward);
  return Tensor<Real>(std::move(n));
}

/// Reverse-mode sweep from a scalar loss. Intermediate (non-leaf) adjoints are
/// reset each call; leaf adjoints accumulate additively across calls.
template <typename Real>
void backward(const Tensor<Real>& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  using Node = TensorNode<Real>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  // Reverse execution order is a reverse topological order of the record.
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });
  for (Node* n : order) {
    if (n->leaf) {
      n->ensure_grad();
    } else {
      n->zero_grad();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += Real(1);
  for (Node* n : order) {
    if (n->backward) n->backward(*n);
  }
}

/// Named parameters plus non-trainable buffers (e.g. batch-norm running
/// statistics). Ordered map so that iteration order, and with it every
/// optimizer sweep, is deterministic.
template <typename Real>
class ParameterStore {
 public:
  Tensor<Real>& create(const std::string& name, Tensor<Real> init) {
    if (params_.count(name)) throw ContractError("parameter path already exists: " + name);
    init.set_requires_grad(true);
    auto [it, ok] = params_.emplace(name, std::move(init));
    (void)ok;
    return it->second;
  }

  Tensor<Real>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("no such parameter: " + name);
    return it->second;
  }
  const Tensor<Real>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("no such parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<Real>& buffer(const std::string& name, std::size_t size = 0, Real fill = Real(0)) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) {
      if (size == 0) throw ContractError("no such buffer: " + name);
      it = buffers_.emplace(name, std::vector<Real>(size, fill)).first;
    }
    return it->second;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  std::map<std::string, Tensor<Real>>& params() { return params_; }
  const std::map<std::string, Tensor<Real>>& params() const { return params_; }
  std::map<std::string, std::vector<Real>>& buffers() { return buffers_; }
  const std::map<std::string, std::vector<Real>>& buffers() const { return buffers_; }

 private:
  std::map<std::string, Tensor<Real>> params_;
  std::map<std::string, std::vector<Real>> buffers_;
};

}  // namespace wavssl
