#include "nff/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "nff/error.hpp"

namespace nff::data {

namespace fs = std::filesystem;

double Primitive::footprint_radius() const { return kind == PrimitiveKind::sphere ? size : size * std::sqrt(2.0); }

SynthConfig SynthConfig::clevr_n(int n) {
  SynthConfig c;
  c.name = "clevr" + std::to_string(n);
  c.counts = {n};
  return c;
}

SynthConfig SynthConfig::clevr_2345() {
  SynthConfig c;
  c.name = "clevr2345";
  c.counts = {2, 3, 4, 5};
  c.size_max = 0.3;
  return c;
}

void SynthConfig::validate() const {
  if (counts.empty()) contract_fail("SynthConfig", "counts must not be empty");
  for (int n : counts)
    if (n < 0) contract_fail("SynthConfig", "negative object count");
  if (resolution == 0) contract_fail("SynthConfig", "resolution must be positive");
  if (!(size_min > 0) || size_max < size_min) contract_fail("SynthConfig", "invalid size range");
  if (!(placement_range >= 0)) contract_fail("SynthConfig", "invalid placement range");
  if (sphere_probability < 0 || sphere_probability > 1) contract_fail("SynthConfig", "sphere_probability outside [0, 1]");
  if (ambient < 0 || ambient > 1) contract_fail("SynthConfig", "ambient outside [0, 1]");
  camera.validate();
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"name", c.name},
       {"counts", c.counts},
       {"resolution", c.resolution},
       {"size_min", c.size_min},
       {"size_max", c.size_max},
       {"placement_range", c.placement_range},
       {"sphere_probability", c.sphere_probability},
       {"ambient", c.ambient},
       {"saturation", c.saturation},
       {"value", c.value},
       {"background", c.background},
       {"camera", c.camera}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  SynthConfig d;
  c.name = j.value("name", d.name);
  c.counts = j.value("counts", d.counts);
  c.resolution = j.value("resolution", d.resolution);
  c.size_min = j.value("size_min", d.size_min);
  c.size_max = j.value("size_max", d.size_max);
  c.placement_range = j.value("placement_range", d.placement_range);
  c.sphere_probability = j.value("sphere_probability", d.sphere_probability);
  c.ambient = j.value("ambient", d.ambient);
  c.saturation = j.value("saturation", d.saturation);
  c.value = j.value("value", d.value);
  c.background = j.value("background", d.background);
  c.camera = j.contains("camera") ? j.at("camera").get<scene::SamplingConfig>() : d.camera;
  c.validate();
}

Vec3 hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = std::min(int(hh), 5);
  const double f = hh - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

PrimitiveScene sample_primitive_scene(const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  PrimitiveScene s;
  s.background = cfg.background;
  s.ambient = cfg.ambient;
  const int n = cfg.counts[rng.below(cfg.counts.size())];
  for (int restart = 0; restart < 100; ++restart) {
    s.primitives.clear();
    for (int k = 0; k < n; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        Primitive p;
        p.kind = rng.uniform() < cfg.sphere_probability ? PrimitiveKind::sphere : PrimitiveKind::cube;
        p.size = rng.uniform(cfg.size_min, cfg.size_max);
        p.center = {rng.uniform(-cfg.placement_range, cfg.placement_range),
                    rng.uniform(-cfg.placement_range, cfg.placement_range), p.size};
        p.yaw = p.kind == PrimitiveKind::cube ? rng.uniform(0.0, 2 * std::numbers::pi) : 0.0;
        p.color = hsv_to_rgb(rng.uniform(), cfg.saturation, cfg.value);
        const double reach = p.footprint_radius();
        placed = std::abs(p.center[0]) + reach <= 1.0 && std::abs(p.center[1]) + reach <= 1.0 && 2 * p.size <= 1.0;
        placed = placed && std::all_of(s.primitives.begin(), s.primitives.end(), [&](const Primitive& o) {
          const double dx = o.center[0] - p.center[0], dy = o.center[1] - p.center[1];
          return std::hypot(dx, dy) >= o.footprint_radius() + p.footprint_radius();
        });
        if (placed) s.primitives.push_back(p);
      }
      if (!placed) break;
    }
    if (int(s.primitives.size()) == n) {
      s.camera = scene::sample_camera(cfg.camera, rng);
      return s;
    }
  }
  contract_fail("sample_primitive_scene", "could not place " + std::to_string(n) + " non-overlapping objects");
}

std::optional<double> intersect(const Primitive& p, const Vec3& origin, const Vec3& dir, Vec3* normal) {
  const Vec3 o = origin - p.center;
  if (p.kind == PrimitiveKind::sphere) {
    const double b = dot(o, dir), c = dot(o, o) - p.size * p.size;
    const double disc = b * b - c;
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t <= 0) t = -b + sq;
    if (t <= 0) return std::nullopt;
    if (normal) *normal = normalize(o + t * dir);
    return t;
  }
  const Mat3 r = yaw_rotation(p.yaw);
  const Vec3 lo = mul_transposed(r, o), ld = mul_transposed(r, dir);
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ld[a]) < 1e-15) {
      if (std::abs(lo[a]) > p.size) return std::nullopt;
      continue;
    }
    double ta = (-p.size - lo[a]) / ld[a], tb = (p.size - lo[a]) / ld[a];
    double s = -1;
    if (ta > tb) std::swap(ta, tb), s = 1;
    if (ta > t0) t0 = ta, axis = a, sign = s;
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t1 <= 0 || t0 <= 0 || axis < 0) return std::nullopt;
  if (normal) {
    Vec3 n{0, 0, 0};
    n[axis] = sign;
    *normal = mul(r, n);
  }
  return t0;
}

namespace {

io::Image8 blank(std::size_t res, std::size_t channels) {
  io::Image8 img;
  img.height = img.width = res;
  img.channels = channels;
  img.pixels.assign(res * res * channels, 0);
  return img;
}

}  // namespace

RenderedScene raytrace_scene(const PrimitiveScene& scene, std::size_t resolution) {
  const auto rays = scene::generate_rays(scene.camera, resolution, resolution);
  RenderedScene out;
  out.rgb = blank(resolution, 3);
  out.masks.assign(scene.primitives.size(), blank(resolution, 1));
  for (std::size_t px = 0; px < rays.dirs.size(); ++px) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t hit = scene.primitives.size();
    Vec3 n_hit{0, 0, 1};
    for (std::size_t k = 0; k < scene.primitives.size(); ++k) {
      Vec3 n;
      const auto t = intersect(scene.primitives[k], rays.origins[px], rays.dirs[px], &n);
      if (t && *t < best) best = *t, hit = k, n_hit = n;
    }
    Vec3 color = scene.background;
    if (hit < scene.primitives.size()) {
      const double lambert = std::max(0.0, dot(n_hit, scene.light_dir));
      color = (scene.ambient + (1 - scene.ambient) * lambert) * scene.primitives[hit].color;
      out.masks[hit].pixels[px] = 255;
    }
    for (int c = 0; c < 3; ++c) out.rgb.pixels[px * 3 + c] = io::quantize(color[c]);
  }
  return out;
}

io::Image8 silhouette(const Primitive& p, const scene::CameraPose& camera, std::size_t resolution) {
  const auto rays = scene::generate_rays(camera, resolution, resolution);
  auto mask = blank(resolution, 1);
  for (std::size_t px = 0; px < rays.dirs.size(); ++px)
    if (intersect(p, rays.origins[px], rays.dirs[px])) mask.pixels[px] = 255;
  return mask;
}

std::uint64_t config_hash(const SynthConfig& cfg) {
  const std::string text = nlohmann::json(cfg).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) h = (h ^ ch) * 1099511628211ull;
  return h;
}

namespace {

std::string index_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

nlohmann::json primitive_json(const Primitive& p) {
  return {{"kind", p.kind == PrimitiveKind::sphere ? "sphere" : "cube"},
          {"center", p.center},
          {"size", p.size},
          {"yaw", p.yaw},
          {"color", p.color}};
}

}  // namespace

nlohmann::json generate_dataset(const SynthConfig& cfg, std::size_t count, std::uint64_t seed, const fs::path& root) {
  cfg.validate();
  const fs::path dir = root / cfg.name;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError("generate_dataset: cannot create " + dir.string() + ": " + ec.message());

  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  nlohmann::json manifest = {{"name", cfg.name}, {"count", count},   {"resolution", cfg.resolution},
                             {"seed", seed},     {"config", cfg},    {"config_hash", hash}};
  auto& items = manifest["items"] = nlohmann::json::array();
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const auto scene = sample_primitive_scene(cfg, rng);
    const auto rendered = raytrace_scene(scene, cfg.resolution);
    const std::string image = "images/" + index_name(i) + ".png";
    io::write_png((dir / image).string(), rendered.rgb);
    nlohmann::json item = {{"image", image}, {"camera", scene.camera}};
    auto& masks = item["masks"] = nlohmann::json::array();
    auto& prims = item["primitives"] = nlohmann::json::array();
    for (std::size_t k = 0; k < rendered.masks.size(); ++k) {
      const std::string mask = "masks/" + index_name(i) + "_" + std::to_string(k) + ".png";
      io::write_png((dir / mask).string(), rendered.masks[k]);
      masks.push_back(mask);
      prims.push_back(primitive_json(scene.primitives[k]));
    }
    items.push_back(std::move(item));
  }
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("generate_dataset: cannot write manifest in " + dir.string());
  os << manifest.dump(2) << '\n';
  return manifest;
}

Dataset Dataset::load(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("Dataset::load: missing manifest.json in " + dir.string());
  Dataset d;
  try {
    d.manifest_ = nlohmann::json::parse(is);
    d.resolution_ = d.manifest_.at("resolution").get<std::size_t>();
    for (const auto& item : d.manifest_.at("items")) {
      auto img = io::read_png((dir / item.at("image").get<std::string>()).string());
      if (img.height != d.resolution_ || img.width != d.resolution_ || img.channels != 3)
        throw IoError("Dataset::load: unexpected image shape in " + item.at("image").get<std::string>());
      d.images_.push_back(std::move(img));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("Dataset::load: bad manifest: ") + e.what());
  }
  if (d.images_.empty()) throw IoError("Dataset::load: no images in " + dir.string());
  return d;
}

Dataset Dataset::from_images(std::vector<io::Image8> images) {
  if (images.empty()) contract_fail("Dataset::from_images", "no images");
  Dataset d;
  d.resolution_ = images.front().height;
  for (const auto& img : images) {
    if (img.height != d.resolution_ || img.width != d.resolution_ || img.channels != 3)
      contract_fail("Dataset::from_images", "images must be square RGB of one size");
  }
  d.images_ = std::move(images);
  d.manifest_ = {{"count", d.images_.size()}, {"resolution", d.resolution_}};
  return d;
}

template <typename T>
Tensor<T> Dataset::batch(const std::vector<std::size_t>& indices) const {
  const std::size_t r = resolution_, per = r * r * 3;
  Tensor<T> out({indices.size(), r, r, 3});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& px = images_.at(indices[b]).pixels;
    for (std::size_t k = 0; k < per; ++k) out[b * per + k] = T(px[k]) / T(255);
  }
  return out;
}

template Tensor<float> Dataset::batch<float>(const std::vector<std::size_t>&) const;
template Tensor<double> Dataset::batch<double>(const std::vector<std::size_t>&) const;

DatasetIterator::DatasetIterator(std::size_t size, std::size_t batch, std::uint64_t seed)
    : size_(size), batch_(batch), seed_(seed) {
  if (size == 0 || batch == 0) contract_fail("DatasetIterator", "size and batch must be positive");
  reshuffle();
}

void DatasetIterator::reshuffle() {
  order_.resize(size_);
  std::iota(order_.begin(), order_.end(), std::size_t(0));
  Rng rng(seed_ ^ (0xD1B54A32D192ED03ull * (epoch_ + 1)));
  for (std::size_t i = size_; i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
}

std::vector<std::size_t> DatasetIterator::next() {
  std::vector<std::size_t> out;
  out.reserve(batch_);
  while (out.size() < batch_) {
    if (pos_ == size_) {
      ++epoch_, pos_ = 0;
      reshuffle();
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

nlohmann::json DatasetIterator::state() const { return {{"epoch", epoch_}, {"position", pos_}}; }

void DatasetIterator::set_state(const nlohmann::json& s) {
  const auto epoch = s.at("epoch").get<std::size_t>(), pos = s.at("position").get<std::size_t>();
  if (pos > size_) contract_fail("DatasetIterator::set_state", "position beyond dataset size");
  epoch_ = epoch;
  reshuffle();
  pos_ = pos;
}

}  // namespace nff::data
