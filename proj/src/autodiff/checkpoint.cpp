#include "nff/autodiff/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace nff::ad {
namespace {

constexpr char kMagic[4] = {'N', 'S', 'F', '1'};

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
}

template <typename F>
void append_raw(std::string& out, const std::vector<double>& values) {
  for (double d : values) {
    F v = to_little(F(d));
    out.append(reinterpret_cast<const char*>(&v), sizeof(F));
  }
}

template <typename F>
std::vector<double> read_raw(const char* p, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    F v;
    std::memcpy(&v, p + i * sizeof(F), sizeof(F));
    out[i] = double(to_little(v));
  }
  return out;
}

}  // namespace

template <typename T>
void Checkpoint::put(const std::string& name, const Tensor<T>& t) {
  Entry e;
  e.dtype = std::is_same_v<T, float> ? "f32" : "f64";
  e.shape = t.shape();
  e.values.assign(t.values().begin(), t.values().end());
  if (!entries_.contains(name)) order_.push_back(name);
  entries_[name] = std::move(e);
}

template <typename T>
Tensor<T> Checkpoint::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
  return Tensor<T>(it->second.shape, std::vector<T>(it->second.values.begin(), it->second.values.end()));
}

std::string Checkpoint::dtype(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
  return it->second.dtype;
}

std::vector<std::string> Checkpoint::names() const { return order_; }

template <typename T>
void Checkpoint::put_store(const std::string& prefix, const ParamStore<T>& store, bool optimizer_state) {
  for (const auto& e : store.entries()) {
    put(prefix + e.name, e.value);
    if (optimizer_state) {
      if (!e.sq_avg.empty()) put(prefix + e.name + "@sq_avg", e.sq_avg);
      if (!e.shadow.empty()) put(prefix + e.name + "@ema", e.shadow);
    }
  }
}

template <typename T>
void Checkpoint::get_store(const std::string& prefix, ParamStore<T>& store) const {
  for (auto& e : store.entries()) {
    auto v = get<T>(prefix + e.name);
    if (v.shape() != e.value.shape()) {
      throw IoError("checkpoint: shape mismatch for '" + e.name + "': stored " + shape_str(v.shape()) + ", expected " +
                    shape_str(e.value.shape()));
    }
    e.value = std::move(v);
    if (contains(prefix + e.name + "@sq_avg")) e.sq_avg = get<T>(prefix + e.name + "@sq_avg");
    if (contains(prefix + e.name + "@ema")) e.shadow = get<T>(prefix + e.name + "@ema");
  }
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json manifest;
  manifest["version"] = "NSF1";
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& name : order_) {
    const Entry& e = entries_.at(name);
    const std::size_t offset = payload.size();
    if (e.dtype == "f32") {
      append_raw<float>(payload, e.values);
    } else {
      append_raw<double>(payload, e.values);
    }
    manifest["tensors"].push_back({{"name", name},
                                   {"shape", e.shape},
                                   {"dtype", e.dtype},
                                   {"offset", offset},
                                   {"bytes", payload.size() - offset}});
  }
  const std::string text = manifest.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write " + tmp);
    out.write(kMagic, 4);
    const std::uint64_t len = to_little(std::uint64_t(text.size()));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), std::streamsize(text.size()));
    out.write(payload.data(), std::streamsize(payload.size()));
    if (!out) throw IoError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("checkpoint: " + path.string() + " is not an NSF1 file");
  }
  std::uint64_t len;
  std::memcpy(&len, bytes.data() + 4, sizeof(len));
  len = to_little(len);
  if (12 + len > bytes.size()) throw IoError("checkpoint: truncated manifest in " + path.string());
  const auto manifest = nlohmann::json::parse(bytes.substr(12, len));
  const char* payload = bytes.data() + 12 + len;
  const std::size_t payload_size = bytes.size() - 12 - len;

  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& t : manifest.at("tensors")) {
    Entry e;
    e.dtype = t.at("dtype").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    const std::size_t offset = t.at("offset").get<std::size_t>();
    const std::size_t count = shape_numel(e.shape);
    const std::size_t width = e.dtype == "f32" ? 4 : 8;
    if (e.dtype != "f32" && e.dtype != "f64") throw IoError("checkpoint: unknown dtype " + e.dtype);
    if (offset + count * width > payload_size) throw IoError("checkpoint: truncated payload in " + path.string());
    e.values = e.dtype == "f32" ? read_raw<float>(payload + offset, count) : read_raw<double>(payload + offset, count);
    const auto name = t.at("name").get<std::string>();
    ck.order_.push_back(name);
    ck.entries_[name] = std::move(e);
  }
  return ck;
}

template void Checkpoint::put<float>(const std::string&, const Tensor<float>&);
template void Checkpoint::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> Checkpoint::get<float>(const std::string&) const;
template Tensor<double> Checkpoint::get<double>(const std::string&) const;
template void Checkpoint::put_store<float>(const std::string&, const ParamStore<float>&, bool);
template void Checkpoint::put_store<double>(const std::string&, const ParamStore<double>&, bool);
template void Checkpoint::get_store<float>(const std::string&, ParamStore<float>&) const;
template void Checkpoint::get_store<double>(const std::string&, ParamStore<double>&) const;

}  // namespace nff::ad
