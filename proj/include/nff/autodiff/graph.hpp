#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// Nodes are appended in evaluation order, so node ids are already a topological
// order and backward() is a single reverse sweep. A node only keeps a backward
// rule when at least one of its inputs requires a gradient; graphs built purely
// from constants therefore cost no more than plain evaluation.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "nff/tensor.hpp"

namespace nff::ad {

template <typename T>
class ParamStore;
template <typename T>
class Graph;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* g, std::size_t id) : graph_(g), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Graph {
 public:
  /// Propagates the gradient of `self` (already accumulated in grad_of(self)) into its inputs.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);

  /// Binds a ParamStore entry. With trainable=true the gradient is added to the
  /// store's gradient buffer at the end of backward(); otherwise the weights
  /// enter the graph as constants.
  Var<T> param(ParamStore<T>& store, std::string_view name, bool trainable = true);

  /// Appends the result of a primitive. `fn` is dropped when no input requires a gradient.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn);

  void backward(Var<T> loss);

  /// Gradient of a node after backward(); zeros when the node received none.
  Tensor<T> grad(Var<T> v) const;

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Gradient buffer of a node, zero-initialised on first access. Backward rules
  /// accumulate into it; they must not overwrite.
  Tensor<T>& grad_of(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::string op;
    BackwardFn backward;
    ParamStore<T>* store = nullptr;
    std::size_t store_index = 0;
  };

  Var<T> push(Node node);
  void check(std::string_view op, const Tensor<T>& value, std::span<const Var<T>> inputs) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return graph_->requires_grad(id_);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace nff::ad
