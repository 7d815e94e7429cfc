#pragma once

// Reverse-mode gradient tape. Every differentiable value is a Node holding
// its forward value and a backward closure that scatters the node's gradient
// into its inputs. Nodes carry a monotonically increasing id assigned at
// construction, so any node's inputs always have smaller ids and a reverse
// id sweep is a valid reverse topological order.
//
// Leaves (parameters) live across iterations; op nodes are created per batch
// and dropped when the last Var referencing them goes out of scope.

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "semflow/autodiff/tensor.hpp"

namespace sf {

template <class T>
struct Node {
  Mat<T> value;
  Mat<T> grad;  // sized lazily during backward
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void(Node<T>&)> backward;  // may be empty (leaf / constant)

  Index rows() const { return value.rows(); }
  Index cols() const { return value.cols(); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline std::uint64_t next_node_id() {
  static std::uint64_t counter = 0;
  return ++counter;
}
}  // namespace detail

template <class T>
Var<T> make_node(Mat<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->id = detail::next_node_id();
  return n;
}

// Trainable leaf: participates in gradient accumulation.
template <class T>
Var<T> leaf(Mat<T> value) {
  auto n = make_node<T>(std::move(value));
  n->requires_grad = true;
  return n;
}

// Non-trainable input (data, masks, embeddings of constants).
template <class T>
Var<T> constant(Mat<T> value) {
  return make_node<T>(std::move(value));
}

template <class T>
void accumulate_grad(const Var<T>& v, const Mat<T>& g) {
  if (!v->requires_grad) return;
  if (v->grad.size() == 0) {
    v->grad = g;
  } else {
    v->grad += g;
  }
}

// Marks a node as requiring grad if any input does, and wires inputs.
template <class T, class F>
void wire(const Var<T>& out, std::initializer_list<Var<T>> inputs, F&& bw) {
  bool needs = false;
  for (const auto& in : inputs) {
    out->inputs.push_back(in);
    needs = needs || in->requires_grad;
  }
  if (needs) {
    out->requires_grad = true;
    out->backward = std::forward<F>(bw);
  }
}

// Runs reverse-mode accumulation from `root` (must be 1x1). Gradients of all
// reachable requires_grad nodes, leaves included, are overwritten.
template <class T>
void backward(const Var<T>& root) {
  require(root->value.size() == 1, "backward: root must be a scalar (1x1)");

  // Collect the reachable subgraph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) {
        stack.push_back(in.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

  for (Node<T>* n : order) n->grad.setZero(n->value.rows(), n->value.cols());
  root->grad.setOnes(1, 1);
  for (Node<T>* n : order) {
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

template <class T>
void zero_grad(const Var<T>& v) {
  v->grad.resize(0, 0);
}

}  // namespace sf
