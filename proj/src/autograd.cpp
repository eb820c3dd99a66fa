#include "dropvid/autograd.hpp"

#include <unordered_set>

namespace dropvid {

Var Var::constant(Tensor t) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

Var Var::parameter(Tensor t) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Var(std::move(n));
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

void Var::set_requires_grad(bool on) {
  if (!node_->parents.empty()) throw std::logic_error("set_requires_grad on a non-leaf");
  node_->requires_grad = on;
  if (!on) node_->grad = Tensor();
}

double Var::item() const {
  if (value().size() != 1) throw std::logic_error("item() on a non-scalar " + shape_str(shape()));
  return value()[0];
}

Var make_op(Tensor value, std::vector<Var> parents, BackwardFn fn) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  for (const Var& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (Var& p : parents) n->parents.push_back(std::move(p.node_));
    n->backward = std::move(fn);
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) throw std::logic_error("backward() needs a scalar root");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node_.get(), 0);
  seen.insert(root.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  detail::Node* r = root.node_.get();
  if (r->grad.empty()) r->grad = Tensor(r->value.shape(), 0.0);
  r->grad[0] += 1.0;

  std::vector<Tensor*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    slots.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      detail::Node* p = node->parents[i].get();
      if (!p->requires_grad) continue;
      if (p->grad.empty()) p->grad = Tensor(p->value.shape(), 0.0);
      slots[i] = &p->grad;
    }
    node->backward(node->grad, slots);
    // Interior grads are not needed after propagation.
    if (!node->parents.empty()) node->grad = Tensor();
  }
}

}  // namespace dropvid
