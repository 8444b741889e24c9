#include "nff/autodiff/graph.hpp"

#include "nff/autodiff/params.hpp"

namespace nff::ad {

template <typename T>
Var<T> Graph<T>::push(Node node) {
  if (consumed_) contract_fail("Graph", "graph already consumed by backward(); build a new graph");
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.op = "leaf";
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::param(ParamStore<T>& store, std::string_view name, bool trainable) {
  const std::size_t i = store.index(name);
  Node n;
  n.value = store.at(i).value;
  n.op = "param";
  if (trainable) {
    n.requires_grad = true;
    n.store = &store;
    n.store_index = i;
  }
  return push(std::move(n));
}

template <typename T>
void Graph<T>::check(std::string_view op, const Tensor<T>& value, std::span<const Var<T>> inputs) const {
  for (const auto& in : inputs) {
    if (in.valid() && &in.graph() != this) contract_fail(std::string(op), "input belongs to a different graph");
  }
  if (!value.all_finite()) {
    std::string shapes;
    for (const auto& in : inputs) shapes += shape_str(in.shape()) + " ";
    throw NumericError(std::string(op) + ": non-finite output (inputs " + shapes + ")");
  }
}

template <typename T>
Var<T> Graph<T>::record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
  check(op, value, inputs);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  Node n;
  n.value = std::move(value);
  n.op = std::string(op);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
}

template <typename T>
Tensor<T>& Graph<T>::grad_of(std::size_t id) {
  auto& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (!loss.valid() || &loss.graph() != this) contract_fail("backward", "loss does not belong to this graph");
  if (consumed_) contract_fail("backward", "graph already consumed");
  if (loss.size() != 1) contract_fail("backward", "loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!nodes_[loss.id()].requires_grad) contract_fail("backward", "loss is detached from every trainable leaf");

  grad_of(loss.id())[0] = T(1);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) {
      n.backward(*this, id);
      n.backward = nullptr;
    }
  }
  for (auto& n : nodes_) {
    if (n.store == nullptr || n.grad.empty()) continue;
    auto& dst = n.store->at(n.store_index).grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
  consumed_ = true;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor<T>(n.value.shape());
  return n.grad;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace nff::ad
