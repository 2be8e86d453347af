#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "costformer/tensor.hpp"

namespace costformer {

// Graph recording switch; off inside NoGradGuard scopes (finite differences, inference).
class GradMode {
 public:
  static bool enabled() noexcept { return flag(); }
  static void set_enabled(bool on) noexcept { flag() = on; }

 private:
  static bool& flag() noexcept {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }

  Node& input(std::size_t i) const { return *inputs[i]; }
  bool input_needs_grad(std::size_t i) const { return inputs[i] && inputs[i]->requires_grad; }
};

// Handle to a value in the (possibly recorded) computation graph.
template <typename T>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;
  using BackwardFn = std::function<void(Node<T>&)>;

  Var() = default;

  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  // Result of a differentiable op. The backward closure is dropped when no input needs grad
  // or recording is disabled.
  static Var make_result(Tensor<T> value, std::initializer_list<const Var*> inputs, BackwardFn backward) {
    Var out(std::move(value));
    if (!GradMode::enabled()) return out;
    bool needs = false;
    for (const Var* in : inputs) needs = needs || (in && in->requires_grad());
    if (!needs) return out;
    out.node_->requires_grad = true;
    for (const Var* in : inputs) out.node_->inputs.push_back(in && in->defined() ? in->node_ : nullptr);
    out.node_->backward = std::move(backward);
    return out;
  }

  static Var make_result(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn backward) {
    Var out(std::move(value));
    if (!GradMode::enabled()) return out;
    bool needs = false;
    for (const Var& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    out.node_->requires_grad = true;
    for (const Var& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return checked()->value; }
  Tensor<T>& mutable_value() { return checked()->value; }
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  const Tensor<T>& grad() const { return checked()->grad; }
  void zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(T(0));
  }

  Var detach() const { return Var(value()); }

  void backward() const {
    if (value().numel() != 1) throw std::logic_error("backward: root must be a scalar");
    backward(Tensor<T>(value().shape(), T(1)));
  }

  void backward(const Tensor<T>& seed) const {
    if (!requires_grad()) throw std::logic_error("backward: value does not require grad");
    if (seed.shape() != value().shape()) throw std::invalid_argument("backward: seed shape mismatch");

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].get();
        if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    Tensor<T>& root = node_->grad_buffer();
    for (std::size_t i = 0; i < root.numel(); ++i) root[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* node = *it;
      if (node->backward && !node->grad.empty()) node->backward(*node);
    }
  }

  Node<T>* node() const noexcept { return node_.get(); }

 private:
  Node<T>* checked() const {
    if (!node_) throw std::logic_error("var: undefined");
    return node_.get();
  }

  NodePtr node_;
};

}  // namespace costformer
