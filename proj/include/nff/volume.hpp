#pragma once

// Feature-space volume rendering along camera rays.
//
// Sample j of a ray at depth t_j carries density sigma_j and spacing delta_j =
// t_{j+1} - t_j (rays are unit length); the last spacing reaches the far plane.
// alpha_j = 1 - exp(-sigma_j delta_j), tau_j = prod_{k<j} (1 - alpha_k), and the
// rendered value is sum_j tau_j alpha_j f_j.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nff/autodiff/graph.hpp"
#include "nff/rng.hpp"
#include "nff/scene.hpp"

namespace nff::render {

struct VolumeConfig {
  double near = 0.5;
  double far = 6.0;
  int samples = 64;
  /// Training draws one depth per bin; evaluation uses bin midpoints.
  bool stratified = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const VolumeConfig& c);
void from_json(const nlohmann::json& j, VolumeConfig& c);

struct RaySamples {
  std::vector<double> depths;  // strictly increasing
  std::vector<double> deltas;  // > 0, sum = far - near
};

/// One uniform depth per equal-width bin of [near, far]; midpoints when rng is null.
RaySamples stratified_sample(double near, double far, int samples, Rng* rng);

double alpha_from_density(double sigma, double delta);

struct RayResult {
  std::vector<double> feature;
  double alpha = 0;
  std::vector<double> transmittance;  // tau_j per sample
};

/// Plain-value compositing of one ray; features are [N_s, C] row-major.
RayResult volume_render_ray(std::span<const double> sigma, std::span<const double> delta,
                            std::span<const double> features, std::size_t channels);

/// Sample points of every ray in ray-major order.
struct RayBatch {
  std::size_t height = 0, width = 0, samples = 0;
  std::vector<Vec3> points;
  std::vector<Vec3> dirs;
  std::vector<double> deltas;

  std::size_t rays() const { return height * width; }
  std::size_t size() const { return points.size(); }
};

RayBatch sample_rays(const scene::Rays& rays, const VolumeConfig& cfg, Rng* rng);

template <typename T>
struct FeatureImage {
  ad::Var<T> feature;  // [1, H, W, C]
  ad::Var<T> alpha;    // [1, H, W, 1]
};

/// Integrates per-sample density [P, 1] and features [P, C] of a ray batch.
template <typename T>
FeatureImage<T> integrate(const RayBatch& batch, ad::Var<T> sigma, ad::Var<T> feature);

/// Renders the composed scene: every entity evaluated at every sample, composed, integrated.
/// `latents` holds one entry per entity; missing entries are created as constants.
template <typename T>
FeatureImage<T> render_feature_image(ad::Graph<T>& g, const scene::SceneFields<T>& fields,
                                     const scene::SceneWeights<T>& w, const scene::SceneSample& sample,
                                     std::size_t height, std::size_t width, const VolumeConfig& cfg, Rng* rng,
                                     std::vector<scene::EntityLatents<T>> latents = {});

template <typename T>
struct FeatureTensors {
  Tensor<T> feature;  // [1, H, W, C]
  Tensor<T> alpha;    // [1, H, W, 1]
};

/// Inference-only rendering in chunks of at most `max_rays` rays, so memory stays bounded at
/// any resolution. `entities` selects which entities contribute (empty = all).
template <typename T>
FeatureTensors<T> render_features_nograd(const scene::SceneFields<T>& fields, ad::ParamStore<T>& store,
                                         const scene::SceneSample& sample, std::size_t height, std::size_t width,
                                         const VolumeConfig& cfg, Rng* rng, const std::vector<std::size_t>& entities = {},
                                         std::size_t max_rays = 1024);

/// Accumulated alpha [H, W] with only entity i's density active (midpoint sampling).
template <typename T>
Tensor<T> render_entity_alpha_map(const scene::SceneFields<T>& fields, ad::ParamStore<T>& store,
                                  const scene::SceneSample& sample, std::size_t entity, std::size_t height,
                                  std::size_t width, const VolumeConfig& cfg);

/// [H, W] slice of any single-channel map to an 8-bit grayscale PNG (values clamped to [0, 1]).
void write_alpha_png(const std::string& path, const Tensor<double>& alpha);

}  // namespace nff::render
