#pragma once

#include <functional>
#include <type_traits>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pansharp/tensor.hpp"

namespace pansharp {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward_fn;

  Tensor<Scalar>& grad_buffer() {
    if (grad.empty()) grad = Tensor<Scalar>(value.shape());
    return grad;
  }
  Node& parent(std::size_t i) { return *parents[i]; }
};

/// Handle to a value in the computation graph. Copies share the node.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  static Var parameter(Tensor<Scalar> value) { return Var(std::move(value), true); }
  static Var constant(Tensor<Scalar> value) { return Var(std::move(value), false); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Scalar item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  void zero_grad() const { node_->grad = Tensor<Scalar>(); }

  /// Cuts the graph: same value, no history.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<Scalar>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Builds an op result. History is recorded only when a parent requires
/// grad, so inference graphs free intermediates immediately.
template <typename Scalar>
Var<Scalar> make_op(Tensor<Scalar> value, const std::type_identity_t<std::vector<Var<Scalar>>>& parents,
                    std::type_identity_t<std::function<void(Node<Scalar>&)>> backward_fn) {
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return Var<Scalar>(std::move(value), false);
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->parents.reserve(parents.size());
  for (const auto& p : parents) node->parents.push_back(p.node());
  node->backward_fn = std::move(backward_fn);
  return Var<Scalar>(std::move(node));
}

template <typename Scalar>
Var<Scalar> make_op(Tensor<Scalar> value, std::type_identity_t<std::initializer_list<Var<Scalar>>> parents,
                    std::type_identity_t<std::function<void(Node<Scalar>&)>> backward_fn) {
  return make_op(std::move(value), std::vector<Var<Scalar>>(parents), std::move(backward_fn));
}

/// Reverse-mode sweep from a scalar. Leaf grads accumulate across calls
/// until zero_grad(); interior grads are released as the sweep proceeds.
template <typename Scalar>
void backward(const Var<Scalar>& root) {
  if (root.value().size() != 1) throw ArgumentError("backward() needs a scalar root, got " + root.shape().str());
  if (!root.requires_grad()) return;

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().data().setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (!node->backward_fn) continue;
    if (!node->grad.empty()) node->backward_fn(*node);
    node->grad = Tensor<Scalar>();
  }
}

}  // namespace pansharp
