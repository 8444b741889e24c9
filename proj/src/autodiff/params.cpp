#include "nff/autodiff/params.hpp"

#include <cmath>

namespace nff::ad {

template <typename T>
std::size_t ParamStore<T>::add(std::string name, Tensor<T> init) {
  if (by_name_.contains(name)) contract_fail("ParamStore::add", "duplicate parameter name '" + name + "'");
  if (!init.all_finite()) throw NumericError("ParamStore::add: non-finite initial value for '" + name + "'");
  const std::size_t i = entries_.size();
  const bool shadowed = has_shadow();
  by_name_.emplace(name, i);
  ParamEntry<T> e;
  e.name = std::move(name);
  e.grad = Tensor<T>(init.shape());
  e.sq_avg = Tensor<T>(init.shape());
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  if (shadowed) entries_.back().shadow = entries_.back().value;
  return i;
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
  return by_name_.contains(std::string(name));
}

template <typename T>
std::size_t ParamStore<T>::index(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) contract_fail("ParamStore", "unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.grad.fill(T(0));
}

template <typename T>
double ParamStore<T>::grad_norm() const {
  double s = 0;
  for (const auto& e : entries_) {
    for (T g : e.grad.values()) s += double(g) * double(g);
  }
  return std::sqrt(s);
}

template <typename T>
double ParamStore<T>::checksum() const {
  double s = 0;
  double w = 1;
  for (const auto& e : entries_) {
    for (T v : e.value.values()) {
      s += w * double(v);
      w = w * 1.000001 + 1e-7;
    }
  }
  return s;
}

template <typename T>
void ParamStore<T>::enable_shadow() {
  for (auto& e : entries_) e.shadow = e.value;
}

template <typename T>
ParamStore<T> ParamStore<T>::shadow_store() const {
  if (!has_shadow()) contract_fail("ParamStore::shadow_store", "EMA shadow not enabled");
  ParamStore out;
  for (const auto& e : entries_) out.add(e.name, e.shadow);
  return out;
}

template <typename T>
void ParamStore<T>::copy_values_from(const ParamStore& other) {
  if (other.size() != size()) contract_fail("ParamStore::copy_values_from", "parameter count mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& src = other.at(i);
    auto& dst = entries_[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape()) {
      contract_fail("ParamStore::copy_values_from", "entry '" + src.name + "' does not match '" + dst.name + "'");
    }
    dst.value = src.value;
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace nff::ad
