#include "mistere/value.hpp"

#include <unordered_set>

namespace mistere {

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Value Value::constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->op = "constant";
  return Value(std::move(n));
}

Value Value::parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->op = "parameter";
  n->requires_grad = true;
  return Value(std::move(n));
}

Value Value::from_op(const char* op, Tensor value, std::vector<Value> parents,
                     BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError(std::string("non-finite output from op '") + op +
                         "' with shape " + shape_string(value.shape()));
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (const auto& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward = std::move(backward);
  }
  return Value(std::move(n));
}

void Value::zero_grad() {
  if (node_) node_->grad_buffer().fill(0.0);
}

void accumulate_grad(Node& parent, const Tensor& delta) {
  if (!parent.requires_grad) return;
  Tensor& g = parent.grad_buffer();
  require_same_shape(g, delta, "accumulate_grad");
  auto gd = g.data();
  auto dd = delta.data();
  for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += dd[i];
}

Value ParameterSet::add(const std::string& name, Tensor init) {
  if (params_.contains(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  auto v = Value::parameter(std::move(init));
  params_.emplace(name, v);
  return v;
}

const Value& ParameterSet::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

Value& ParameterSet::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.value().size();
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

void backward(const Value& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on undefined value");
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order; each node once.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.contains(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad_buffer().fill(0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf()) n->backward(*n);
  }
}

}  // namespace mistere
