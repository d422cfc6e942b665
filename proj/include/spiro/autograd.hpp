#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "spiro/tensor.hpp"

namespace spiro::tc {

/// One value in the computation graph. `backward_fn` reads `grad` and
/// accumulates into the parents' gradients.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first use, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
  bool has_grad() const { return !grad.empty() || value.empty(); }
};

/// Shared handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var parameter(Tensor value);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient after backward(); zeros if nothing has flowed here yet.
  Tensor grad() const;
  Tensor& grad_storage() { return node_->ensure_grad(); }
  void zero_grad();

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds a result node; it requires grad when any parent does.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Reverse pass from a single-element root. Each node is visited once, in
/// reverse topological order; gradients accumulate across calls.
void backward(const Var& root);

}  // namespace spiro::tc
