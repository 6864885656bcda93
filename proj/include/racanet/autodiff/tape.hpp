#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "racanet/core/tensor.hpp"

namespace racanet::ad {

class Node;
using Var = std::shared_ptr<Node>;

// One value in the computation graph. `backward_fn` reads this node's grad
// and accumulates into the parents' grads.
class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated on first touch, same shape as value
  bool requires_grad = false;
  bool grad_touched = false;  // true once backward accumulated into this node
  int64_t order = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    grad_touched = true;
    return grad;
  }
  void clear_grad() {
    if (!grad.empty()) grad.fill(0.0);
    grad_touched = false;
  }
};

namespace detail {
inline int64_t& node_counter() {
  static int64_t c = 0;
  return c;
}
inline bool& grad_mode() {
  static bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph construction in scope; op outputs become constants.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::grad_mode(); }

inline Var leaf(Tensor value, bool requires_grad = false) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->order = detail::node_counter()++;
  return n;
}

inline Var constant(Tensor value) { return leaf(std::move(value), false); }

// Creates an op node. When grad mode is off or no parent needs gradients the
// parents/backward_fn are dropped so intermediate graphs free eagerly.
inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool need = false;
  if (grad_enabled()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        need = true;
        break;
      }
  }
  n->requires_grad = need;
  if (need) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  n->order = detail::node_counter()++;
  return n;
}

// Reverse pass from a scalar root. Topological order is creation order.
inline void backward(const Var& root) {
  if (!root) throw Error("autodiff", "backward on null node");
  if (root->value.size() != 1) throw Error("autodiff", "backward root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    topo.push_back(n);
    for (const auto& p : n->parents) {
      if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(topo.begin(), topo.end(), [](Node* a, Node* b) { return a->order > b->order; });

  root->ensure_grad()[0] += 1.0;
  for (Node* n : topo) {
    if (n->backward_fn && n->grad_touched) n->backward_fn(*n);
  }
}

}  // namespace racanet::ad
