#pragma once
// Reverse-mode differentiation tape.
//
// A Graph records every intermediate value in creation order. Each recorded
// node keeps a closure that, given the gradient flowing into the node,
// accumulates gradients into its inputs. backward() walks the tape in reverse.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "borelog/core.hpp"
#include "borelog/params.hpp"

namespace borelog {

class Graph;

/// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value, std::string label = "constant") {
    return push(Node{std::move(label), std::move(value), {}, false, nullptr, {}});
  }

  Var input(Tensor value, bool requires_grad, std::string label = "input") {
    return push(Node{std::move(label), std::move(value), {}, requires_grad, nullptr, {}});
  }

  /// Leaf bound to a named parameter. Repeated requests share one node.
  Var parameter(const ParameterStore& store, const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{this, it->second};
    Var v = push(Node{"param:" + name, store.at(name), {}, true, nullptr, name});
    param_nodes_.emplace(name, v.id);
    return v;
  }

  /// Records an op output. `backward` may be null when no input needs a gradient.
  Var record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    if (!value.all_finite()) throw Error("non-finite value produced by " + op + " (node " + std::to_string(nodes_.size()) + ")");
    bool needs = false;
    for (const Var& in : inputs) {
      if (in.graph != this) throw Error(op + ": input belongs to another graph");
      needs = needs || nodes_[in.id].requires_grad;
    }
    return push(Node{std::move(op), std::move(value), {}, needs, needs ? std::move(backward) : nullptr, {}});
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::string& label(Var v) const { return nodes_.at(v.id).label; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient accumulated at a leaf after backward(). Zeros if unreached.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
  }

  /// Adds `g` into the gradient buffer of `v` (used by op backward closures).
  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape())
      throw Error("gradient shape " + shape_str(g.shape()) + " does not match " + n.label + " " + shape_str(n.value.shape()));
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    double* dst = n.grad.data();
    const double* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  }

  void accumulate(Var v, Tensor&& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.empty() && g.shape() == n.value.shape()) {
      n.grad = std::move(g);
      return;
    }
    accumulate(v, static_cast<const Tensor&>(g));
  }

  bool needs_grad(Var v) const { return nodes_[v.id].requires_grad; }

  void backward(Var loss) {
    if (value(loss).size() != 1) throw Error("backward() needs a scalar loss, got shape " + shape_str(value(loss).shape()));
    for (Node& n : nodes_) n.grad = Tensor();
    Node& root = nodes_[loss.id];
    if (!root.requires_grad) return;
    root.grad = Tensor(root.value.shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      Tensor g = std::move(n.grad);
      n.backward(*this, g);
      if (!g.all_finite()) throw Error("non-finite gradient at " + n.label);
      n.grad = Tensor();  // interior gradients are released once propagated
    }
  }

  /// Gradient for every parameter leaf in the graph, keyed by name.
  GradientMap parameter_gradients() const {
    GradientMap out;
    for (const auto& [name, id] : param_nodes_) out.emplace(name, grad(Var{const_cast<Graph*>(this), id}));
    return out;
  }

 private:
  struct Node {
    std::string label;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::string param_name;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

}  // namespace borelog
