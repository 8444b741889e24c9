#pragma once

// Synthetic training data: Lambertian spheres and cubes resting on an invisible
// ground plane in front of a flat background, rendered with the same pinhole
// camera model and camera distribution the generator uses.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nff/geometry.hpp"
#include "nff/image_io.hpp"
#include "nff/rng.hpp"
#include "nff/scene.hpp"

namespace nff::data {

enum class PrimitiveKind { sphere, cube };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Vec3 center{0, 0, 0};
  double size = 0.3;  // sphere radius or cube half-extent
  double yaw = 0;     // cubes only
  Vec3 color{1, 1, 1};

  /// Radius of the footprint disc on the ground, used for the no-overlap rule.
  double footprint_radius() const;
};

struct PrimitiveScene {
  std::vector<Primitive> primitives;
  Vec3 light_dir = normalize(Vec3{0.4, -0.3, 0.85});
  Vec3 background{0.5, 0.5, 0.5};
  double ambient = 0.3;
  scene::CameraPose camera;
};

struct SynthConfig {
  std::string name = "clevr2";
  std::vector<int> counts{2};
  std::size_t resolution = 64;
  double size_min = 0.2;
  double size_max = 0.4;
  double placement_range = 0.6;
  double sphere_probability = 0.5;
  double ambient = 0.3;
  double saturation = 0.75;
  double value = 0.9;
  Vec3 background{0.5, 0.5, 0.5};
  scene::SamplingConfig camera;  // only the camera fields are used

  static SynthConfig clevr_n(int n);
  static SynthConfig clevr_2345();
  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

Vec3 hsv_to_rgb(double h, double s, double v);

/// Rejection-samples primitives so no two footprints overlap and every footprint stays inside
/// [-1, 1]^2; deterministic given rng.
PrimitiveScene sample_primitive_scene(const SynthConfig& cfg, Rng& rng);

struct RenderedScene {
  io::Image8 rgb;
  std::vector<io::Image8> masks;  // per primitive: pixels where it is the first surface hit
};

RenderedScene raytrace_scene(const PrimitiveScene& scene, std::size_t resolution);

/// Unoccluded silhouette of one primitive as seen from `camera`.
io::Image8 silhouette(const Primitive& p, const scene::CameraPose& camera, std::size_t resolution);

/// First-hit distance along a unit ray, if any.
std::optional<double> intersect(const Primitive& p, const Vec3& origin, const Vec3& dir, Vec3* normal = nullptr);

std::uint64_t config_hash(const SynthConfig& cfg);

/// Writes <root>/<name>/{images,masks,manifest.json}; returns the manifest.
nlohmann::json generate_dataset(const SynthConfig& cfg, std::size_t count, std::uint64_t seed,
                                const std::filesystem::path& root);

/// Images of a generated dataset held in memory as 8-bit pixels.
class Dataset {
 public:
  static Dataset load(const std::filesystem::path& dir);
  /// In-memory dataset of equally sized square RGB images.
  static Dataset from_images(std::vector<io::Image8> images);

  std::size_t size() const { return images_.size(); }
  std::size_t resolution() const { return resolution_; }
  const nlohmann::json& manifest() const { return manifest_; }
  const io::Image8& raw(std::size_t i) const { return images_.at(i); }

  /// [B, H, W, 3] in [0, 1].
  template <typename T>
  Tensor<T> batch(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<io::Image8> images_;
  std::size_t resolution_ = 0;
  nlohmann::json manifest_;
};

/// Epoch-shuffled index batches. The permutation of epoch e is derived from (seed, e), so the
/// whole iterator state is (epoch, position) and resumes exactly.
class DatasetIterator {
 public:
  DatasetIterator(std::size_t size, std::size_t batch, std::uint64_t seed);

  std::vector<std::size_t> next();
  std::size_t epoch() const { return epoch_; }

  nlohmann::json state() const;
  void set_state(const nlohmann::json& s);

 private:
  void reshuffle();

  std::size_t size_, batch_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0, pos_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace nff::data
