#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dropvid/tensor.hpp"

namespace dropvid {

// Receives the gradient of the op output and one slot per parent; a slot is
// null when that parent does not require a gradient. Implementations add
// into the slots.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  bool requires_grad = false;
};
}  // namespace detail

// Handle to a node of a reverse-mode tape. Copies share the node.
class Var {
public:
  Var() = default;

  static Var constant(Tensor t);
  static Var parameter(Tensor t);

  bool defined() const { return node_ != nullptr; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  // Gradient accumulated by backward(); empty until something flows in.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();

  // Leaf-only mutation, used by optimizers and checkpoint loading.
  Tensor& mutable_value() { return node_->value; }
  // Leaf-only; a frozen parameter behaves like a constant on the tape.
  void set_requires_grad(bool on);

  // Same value, cut from the tape.
  Var detached() const { return constant(node_->value); }

  double item() const;

private:
  friend Var make_op(Tensor value, std::vector<Var> parents, BackwardFn fn);
  friend void backward(const Var& root);
  explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// Creates an op result. The backward function is dropped when no parent
// requires a gradient.
Var make_op(Tensor value, std::vector<Var> parents, BackwardFn fn);

// Seeds d(root)/d(root) = 1 (root must be a scalar) and propagates.
void backward(const Var& root);

}  // namespace dropvid
