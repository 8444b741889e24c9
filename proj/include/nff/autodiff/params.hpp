#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nff/tensor.hpp"

namespace nff::ad {

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> sq_avg;  // RMSprop second-moment accumulator
  Tensor<T> shadow;  // EMA copy; empty until enable_shadow()
};

/// Named trainable tensors with their optimizer state. Insertion order is
/// preserved and is the order used for checkpoints and flat views.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> init);

  bool contains(std::string_view name) const;
  std::size_t index(std::string_view name) const;

  ParamEntry<T>& entry(std::string_view name) { return entries_[index(name)]; }
  const ParamEntry<T>& entry(std::string_view name) const { return entries_[index(name)]; }
  ParamEntry<T>& at(std::size_t i) { return entries_.at(i); }
  const ParamEntry<T>& at(std::size_t i) const { return entries_.at(i); }

  Tensor<T>& value(std::string_view name) { return entry(name).value; }
  const Tensor<T>& value(std::string_view name) const { return entry(name).value; }
  Tensor<T>& grad(std::string_view name) { return entry(name).grad; }

  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const;
  void zero_grad();
  /// Sum of squared gradient entries, as an L2 norm.
  double grad_norm() const;
  /// Order-sensitive checksum of all live values.
  double checksum() const;

  /// Starts the EMA shadow as a copy of the live weights.
  void enable_shadow();
  bool has_shadow() const { return !entries_.empty() && !entries_.front().shadow.empty(); }
  /// Copy of this store whose live values are the EMA shadow.
  ParamStore shadow_store() const;

  /// Copies values from another store with identical names and shapes.
  void copy_values_from(const ParamStore& other);

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) {
      auto i = out.add(e.name, e.value.template cast<U>());
      if (!e.sq_avg.empty()) out.at(i).sq_avg = e.sq_avg.template cast<U>();
      if (!e.shadow.empty()) out.at(i).shadow = e.shadow.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace nff::ad
