#pragma once

// "NSF1" checkpoint files:
//   bytes 0..3   magic "NSF1"
//   bytes 4..11  manifest length L (uint64, little-endian)
//   next L bytes manifest JSON: {"version": "NSF1", "meta": {...},
//                "tensors": [{"name", "shape", "dtype": "f32"|"f64", "offset", "bytes"}]}
//   payload      raw little-endian floats; offsets are relative to the payload start

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "nff/autodiff/params.hpp"
#include "nff/tensor.hpp"

namespace nff::ad {

class Checkpoint {
 public:
  nlohmann::json meta = nlohmann::json::object();

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t);

  /// Converts on read when the stored dtype differs from T.
  template <typename T>
  Tensor<T> get(const std::string& name) const;

  bool contains(const std::string& name) const { return entries_.contains(name); }
  std::string dtype(const std::string& name) const;
  std::vector<std::string> names() const;

  /// Stores values (and, with optimizer_state, RMSprop accumulators and EMA shadows) under `prefix`.
  template <typename T>
  void put_store(const std::string& prefix, const ParamStore<T>& store, bool optimizer_state = true);
  /// Loads every entry of `store` from `prefix`; missing names are an error.
  template <typename T>
  void get_store(const std::string& prefix, ParamStore<T>& store) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  struct Entry {
    std::string dtype;
    Shape shape;
    std::vector<double> values;
  };
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
};

}  // namespace nff::ad
