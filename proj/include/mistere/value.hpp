#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mistere/tensor.hpp"

namespace mistere {

struct Node;

/// Backward rule: reads `self.grad` and accumulates into the parents' grads.
using BackwardFn = std::function<void(Node& self)>;

/// One vertex of the recorded computation graph.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  const char* op = "leaf";
  bool requires_grad = false;

  bool is_leaf() const noexcept { return !backward; }
  /// Grad buffer, zero-initialized on first access.
  Tensor& grad_buffer();
};

/// Handle to a graph node. Copies share the node.
class Value {
 public:
  Value() = default;

  /// Input that never receives a gradient (embeddings, masks, labels).
  static Value constant(Tensor t);
  /// Trainable leaf.
  static Value parameter(Tensor t);
  /// Result of an operation. Checks that the output is finite; the backward
  /// rule is only recorded if some parent requires a gradient.
  static Value from_op(const char* op, Tensor value, std::vector<Value> parents,
                       BackwardFn backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Mutable access to a leaf's value (parameter updates, weight surgery).
  Tensor& mutable_value() { return node_->value; }
  Tensor& grad() { return node_->grad_buffer(); }
  const Tensor& grad() const { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void zero_grad();

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

 private:
  explicit Value(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

/// Adds `delta` into `parent`'s grad if it participates in differentiation.
void accumulate_grad(Node& parent, const Tensor& delta);

/// Named parameters, iterated in lexicographic name order.
class ParameterSet {
 public:
  Value add(const std::string& name, Tensor init);
  const Value& get(const std::string& name) const;
  Value& get(const std::string& name);
  bool contains(const std::string& name) const { return params_.contains(name); }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t element_count() const;
  std::vector<std::string> names() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Value> params_;
};

/// Reverse-mode sweep from a scalar `loss`.
///
/// Parameter (leaf) gradients accumulate across calls; intermediate grads are
/// reset at the start of every sweep, so calling twice doubles leaf grads.
void backward(const Value& loss);

}  // namespace mistere
