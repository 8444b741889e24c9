#pragma once

// Scene space: entity transforms, camera, sampling of scene configurations and
// the density-weighted composition of entity fields.
//
// Conventions: z is up, the ground plane is z = 0, cameras look at the origin.
// Entities 0 .. N-2 are objects; entity N-1 is the background.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "nff/autodiff/graph.hpp"
#include "nff/fields.hpp"
#include "nff/geometry.hpp"
#include "nff/rng.hpp"

namespace nff::scene {

struct AffineTransform {
  Vec3 scale{1, 1, 1};
  Vec3 translation{0, 0, 0};
  Mat3 rotation = identity3();

  /// Throws ContractError unless s > 0 componentwise and R is a proper rotation.
  void validate() const;
  friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

/// k(x) = R diag(s) x + t
Vec3 transform_to_scene(const AffineTransform& T, const Vec3& x);
/// diag(1/s) R^T (x - t)
Vec3 inverse_transform_point(const AffineTransform& T, const Vec3& x);
/// diag(1/s) R^T d, not renormalised
Vec3 inverse_transform_dir(const AffineTransform& T, const Vec3& d);

struct CameraPose {
  double radius = 2.7;
  double elevation = 0.0;  // radians above the ground plane
  double azimuth = 0.0;    // radians
  double fov = 0.8726646259971648;  // vertical, radians (50 degrees)

  Vec3 position() const;
  /// Columns: right, up, forward (toward the origin).
  Mat3 basis() const;
  friend bool operator==(const CameraPose&, const CameraPose&) = default;
};

struct SceneSample {
  std::vector<fields::LatentCodes> codes;
  std::vector<AffineTransform> transforms;
  CameraPose camera;

  std::size_t entity_count() const { return transforms.size(); }
  std::size_t background_index() const { return transforms.size() - 1; }
  void validate(std::size_t max_entities) const;
  friend bool operator==(const SceneSample&, const SceneSample&) = default;
};

struct SamplingConfig {
  std::vector<int> object_counts{2};  // p_N: uniform over these object counts
  double scale_min = 0.2;
  double scale_max = 0.5;
  double translation_range = 0.6;  // x, y uniform in [-r, r]
  bool rest_on_ground = true;      // t_z = s_z, so the canonical box sits on z = 0
  double yaw_min = 0.0;
  double yaw_max = 6.283185307179586;
  bool full_rotation = false;  // uniform SO(3) instead of yaw only
  double background_scale = 1.0;
  double radius = 2.7;
  double elevation_min = 0.3490658503988659;  // 20 degrees
  double elevation_max = 0.6108652381980153;  // 35 degrees
  double azimuth_min = 0.0;
  double azimuth_max = 6.283185307179586;
  double fov = 0.8726646259971648;
  int latent_shape = 64;
  int latent_app = 64;

  int max_objects() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const SamplingConfig& c);
void from_json(const nlohmann::json& j, SamplingConfig& c);
void to_json(nlohmann::json& j, const AffineTransform& t);
void from_json(const nlohmann::json& j, AffineTransform& t);
void to_json(nlohmann::json& j, const CameraPose& c);
void from_json(const nlohmann::json& j, CameraPose& c);
void to_json(nlohmann::json& j, const SceneSample& s);
void from_json(const nlohmann::json& j, SceneSample& s);

AffineTransform sample_object_transform(const SamplingConfig& cfg, Rng& rng);
AffineTransform background_transform(const SamplingConfig& cfg);
CameraPose sample_camera(const SamplingConfig& cfg, Rng& rng);
SceneSample sample_scene(const SamplingConfig& cfg, Rng& rng);

struct Rays {
  std::size_t height = 0, width = 0;
  std::vector<Vec3> origins;
  std::vector<Vec3> dirs;  // unit length
};

/// Pinhole ray through continuous image coordinates (u right, v down), both in [0, 1].
Vec3 ray_direction(const CameraPose& cam, double u, double v, double aspect = 1.0);
/// One ray per pixel centre, row-major from the top-left pixel.
Rays generate_rays(const CameraPose& cam, std::size_t height, std::size_t width);

/// Density-weighted feature mean for one point, on plain values.
struct PointEval {
  double sigma = 0;
  std::vector<double> feature;
};
PointEval compose(std::span<const PointEval> entities);

inline constexpr double kComposeEps = 1e-10;

/// Differentiable composition over N entity outputs of equal shape.
template <typename T>
fields::FieldOutput<T> compose(const std::vector<fields::FieldOutput<T>>& entities);

/// Object and background fields plus the encoding they read.
template <typename T>
struct SceneFields {
  fields::EncodingConfig encoding;
  fields::FeatureField<T> object;
  fields::FeatureField<T> background;
  /// When set, an object's density is zero outside its canonical box [-1-pad, 1+pad]^3
  /// and points there are not evaluated.
  std::optional<double> object_box_padding;

  SceneFields(fields::EncodingConfig enc, fields::FieldConfig object_cfg, fields::FieldConfig background_cfg);
};

template <typename T>
struct SceneWeights {
  fields::FieldWeights<T> object;
  fields::FieldWeights<T> background;
};

/// Latent codes of entity i as graph leaves (so gradients w.r.t. them can be inspected).
template <typename T>
struct EntityLatents {
  ad::Var<T> z_shape;
  ad::Var<T> z_app;
};

/// Evaluates entity i at scene points/directions ([P, 3] each) in its canonical frame.
template <typename T>
fields::FieldOutput<T> evaluate_entity(ad::Graph<T>& g, const SceneFields<T>& fields, const SceneWeights<T>& w,
                                       const SceneSample& sample, std::size_t entity, std::span<const Vec3> points,
                                       std::span<const Vec3> dirs, const EntityLatents<T>& latents);

template <typename T>
EntityLatents<T> latent_leaves(ad::Graph<T>& g, const SceneSample& sample, std::size_t entity, bool requires_grad);

extern template struct SceneFields<float>;
extern template struct SceneFields<double>;

}  // namespace nff::scene
