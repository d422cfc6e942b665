#include "spiro/autograd.hpp"

#include <unordered_set>
#include <utility>

#include "spiro/errors.hpp"

namespace spiro::tc {

Tensor& Node::ensure_grad() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) {
    grad = Tensor(value.shape(), 0.0);
  }
  return grad;
}

Var Var::constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Tensor Var::grad() const {
  if (node_->grad.shape() == node_->value.shape() && node_->grad.size() == node_->value.size())
    return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

void Var::zero_grad() {
  if (node_->grad.size() == node_->value.size()) node_->grad.fill(0.0);
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
    n->parents.push_back(p.ptr());
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return Var(std::move(n));
}

void backward(const Var& root) {
  require(root.defined(), ErrorKind::parameter, "backward on an undefined value");
  require(root.value().size() == 1, ErrorKind::shape,
          "backward needs a single-element root, got shape " + root.value().shape_string());
  if (!root.requires_grad()) return;

  // Iterative post-order DFS yields a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  visited.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node().ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

}  // namespace spiro::tc
