#include "nff/volume.hpp"

#include <cmath>

#include "nff/autodiff/ops.hpp"
#include "nff/image_io.hpp"

namespace nff::render {

using ad::Var;

void VolumeConfig::validate() const {
  if (!(near >= 0) || !(far > near)) {
    contract_fail("VolumeConfig", "need far > near >= 0, got near " + std::to_string(near) + " far " + std::to_string(far));
  }
  if (samples < 1) contract_fail("VolumeConfig", "samples per ray must be >= 1");
}

void to_json(nlohmann::json& j, const VolumeConfig& c) {
  j = {{"near", c.near}, {"far", c.far}, {"samples", c.samples}, {"stratified", c.stratified}};
}

void from_json(const nlohmann::json& j, VolumeConfig& c) {
  VolumeConfig d;
  c.near = j.value("near", d.near);
  c.far = j.value("far", d.far);
  c.samples = j.value("samples", d.samples);
  c.stratified = j.value("stratified", d.stratified);
  c.validate();
}

RaySamples stratified_sample(double near, double far, int samples, Rng* rng) {
  VolumeConfig{near, far, samples, rng != nullptr}.validate();
  RaySamples s;
  const double bin = (far - near) / samples;
  s.depths.resize(std::size_t(samples));
  for (int j = 0; j < samples; ++j) {
    const double offset = rng ? rng->uniform() : 0.5;
    s.depths[std::size_t(j)] = near + (j + offset) * bin;
  }
  s.deltas.resize(s.depths.size());
  for (std::size_t j = 0; j + 1 < s.depths.size(); ++j) s.deltas[j] = s.depths[j + 1] - s.depths[j];
  s.deltas.back() = far - s.depths.back();
  // A draw at the very end of the last bin would give a zero spacing.
  if (!(s.deltas.back() > 0)) s.deltas.back() = 1e-9 * (far - near);
  return s;
}

double alpha_from_density(double sigma, double delta) { return -std::expm1(-sigma * delta); }

RayResult volume_render_ray(std::span<const double> sigma, std::span<const double> delta,
                            std::span<const double> features, std::size_t channels) {
  if (sigma.size() != delta.size() || features.size() != sigma.size() * channels) {
    contract_fail("volume_render_ray", "sample arrays disagree in length");
  }
  RayResult r;
  r.feature.assign(channels, 0.0);
  r.transmittance.resize(sigma.size());
  double tau = 1.0;
  for (std::size_t j = 0; j < sigma.size(); ++j) {
    r.transmittance[j] = tau;
    const double a = alpha_from_density(sigma[j], delta[j]);
    const double wgt = tau * a;
    for (std::size_t c = 0; c < channels; ++c) r.feature[c] += wgt * features[j * channels + c];
    r.alpha += wgt;
    tau *= std::exp(-sigma[j] * delta[j]);
  }
  return r;
}

RayBatch sample_rays(const scene::Rays& rays, const VolumeConfig& cfg, Rng* rng) {
  cfg.validate();
  RayBatch b;
  b.height = rays.height;
  b.width = rays.width;
  b.samples = std::size_t(cfg.samples);
  const std::size_t n = rays.dirs.size() * b.samples;
  b.points.reserve(n);
  b.dirs.reserve(n);
  b.deltas.reserve(n);
  for (std::size_t r = 0; r < rays.dirs.size(); ++r) {
    const auto s = stratified_sample(cfg.near, cfg.far, cfg.samples, cfg.stratified ? rng : nullptr);
    for (std::size_t j = 0; j < b.samples; ++j) {
      b.points.push_back(rays.origins[r] + s.depths[j] * rays.dirs[r]);
      b.dirs.push_back(rays.dirs[r]);
      b.deltas.push_back(s.deltas[j]);
    }
  }
  return b;
}

template <typename T>
FeatureImage<T> integrate(const RayBatch& batch, Var<T> sigma, Var<T> feature) {
  const std::size_t p = batch.size(), r = batch.rays(), s = batch.samples;
  if (sigma.shape() != Shape{p, 1} || feature.shape().size() != 2 || feature.shape()[0] != p) {
    contract_fail("integrate", "density " + shape_str(sigma.shape()) + " / feature " + shape_str(feature.shape()) +
                                   " do not match " + std::to_string(p) + " samples");
  }
  auto& g = sigma.graph();
  const std::size_t c = feature.shape()[1];
  Tensor<T> delta({p, 1});
  for (std::size_t i = 0; i < p; ++i) delta[i] = T(batch.deltas[i]);
  auto trans = ad::exp(ad::neg(ad::mul(sigma, g.constant(std::move(delta)))));
  auto alpha = ad::add_scalar(ad::neg(trans), T(1));
  auto tau = ad::cumprod(ad::reshape(trans, Shape{r, s}), 1, true);
  auto weights = ad::mul(tau, ad::reshape(alpha, Shape{r, s}));
  auto weighted = ad::mul(ad::repeat_last(ad::reshape(weights, Shape{p, 1}), c), feature);
  auto img = ad::reshape(ad::sum(ad::reshape(weighted, Shape{r, s, c}), 1), Shape{1, batch.height, batch.width, c});
  auto acc = ad::reshape(ad::sum(weights, 1), Shape{1, batch.height, batch.width, 1});
  return {img, acc};
}

template <typename T>
FeatureImage<T> render_feature_image(ad::Graph<T>& g, const scene::SceneFields<T>& fields,
                                     const scene::SceneWeights<T>& w, const scene::SceneSample& sample,
                                     std::size_t height, std::size_t width, const VolumeConfig& cfg, Rng* rng,
                                     std::vector<scene::EntityLatents<T>> latents) {
  const std::size_t n = sample.entity_count();
  if (n == 0 || sample.codes.size() != n) contract_fail("render_feature_image", "malformed scene sample");
  if (!latents.empty() && latents.size() != n) contract_fail("render_feature_image", "one latent pair per entity expected");
  const auto batch = sample_rays(scene::generate_rays(sample.camera, height, width), cfg, rng);
  std::vector<fields::FieldOutput<T>> outs;
  outs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lat = latents.empty() ? scene::latent_leaves(g, sample, i, false) : latents[i];
    outs.push_back(scene::evaluate_entity(g, fields, w, sample, i, batch.points, batch.dirs, lat));
  }
  const auto composed = scene::compose(outs);
  return integrate(batch, composed.sigma, composed.feature);
}

template <typename T>
FeatureTensors<T> render_features_nograd(const scene::SceneFields<T>& fields, ad::ParamStore<T>& store,
                                         const scene::SceneSample& sample, std::size_t height, std::size_t width,
                                         const VolumeConfig& cfg, Rng* rng, const std::vector<std::size_t>& entities,
                                         std::size_t max_rays) {
  std::vector<std::size_t> active = entities;
  if (active.empty()) {
    for (std::size_t i = 0; i < sample.entity_count(); ++i) active.push_back(i);
  }
  for (std::size_t i : active) {
    if (i >= sample.entity_count()) contract_fail("render_features", "entity " + std::to_string(i) + " out of range");
  }
  if (max_rays == 0) contract_fail("render_features", "chunk size must be positive");
  const auto rays = scene::generate_rays(sample.camera, height, width);
  const std::size_t total = height * width;
  const std::size_t c = std::size_t(fields.object.config().feature_dim);
  FeatureTensors<T> out{Tensor<T>({1, height, width, c}), Tensor<T>({1, height, width, 1})};
  for (std::size_t start = 0; start < total; start += max_rays) {
    const std::size_t n = std::min(max_rays, total - start);
    scene::Rays chunk;
    chunk.height = 1;
    chunk.width = n;
    chunk.origins.assign(rays.origins.begin() + long(start), rays.origins.begin() + long(start + n));
    chunk.dirs.assign(rays.dirs.begin() + long(start), rays.dirs.begin() + long(start + n));
    const auto batch = sample_rays(chunk, cfg, rng);
    ad::Graph<T> g;
    scene::SceneWeights<T> w{fields.object.bind(g, store, false), fields.background.bind(g, store, false)};
    std::vector<fields::FieldOutput<T>> outs;
    for (std::size_t i : active) {
      outs.push_back(scene::evaluate_entity(g, fields, w, sample, i, batch.points, batch.dirs,
                                            scene::latent_leaves(g, sample, i, false)));
    }
    const auto composed = scene::compose(outs);
    const auto img = integrate(batch, composed.sigma, composed.feature);
    std::copy(img.feature.value().data(), img.feature.value().data() + n * c, out.feature.data() + start * c);
    std::copy(img.alpha.value().data(), img.alpha.value().data() + n, out.alpha.data() + start);
  }
  return out;
}

template <typename T>
Tensor<T> render_entity_alpha_map(const scene::SceneFields<T>& fields, ad::ParamStore<T>& store,
                                  const scene::SceneSample& sample, std::size_t entity, std::size_t height,
                                  std::size_t width, const VolumeConfig& cfg) {
  if (entity >= sample.entity_count()) {
    contract_fail("render_entity_alpha_map", "entity " + std::to_string(entity) + " out of range");
  }
  auto alpha = render_features_nograd(fields, store, sample, height, width, cfg, nullptr, {entity}).alpha;
  alpha.reshape({height, width});
  return alpha;
}

void write_alpha_png(const std::string& path, const Tensor<double>& alpha) { io::write_png(path, io::to_image(alpha)); }

#define NFF_INSTANTIATE(T)                                                                                        \
  template FeatureImage<T> integrate<T>(const RayBatch&, Var<T>, Var<T>);                                        \
  template FeatureImage<T> render_feature_image<T>(ad::Graph<T>&, const scene::SceneFields<T>&,                  \
                                                   const scene::SceneWeights<T>&, const scene::SceneSample&,     \
                                                   std::size_t, std::size_t, const VolumeConfig&, Rng*,          \
                                                   std::vector<scene::EntityLatents<T>>);                        \
  template Tensor<T> render_entity_alpha_map<T>(const scene::SceneFields<T>&, ad::ParamStore<T>&,                \
                                                const scene::SceneSample&, std::size_t, std::size_t, std::size_t, \
                                                const VolumeConfig&);                                            \
  template FeatureTensors<T> render_features_nograd<T>(const scene::SceneFields<T>&, ad::ParamStore<T>&,         \
                                                       const scene::SceneSample&, std::size_t, std::size_t,      \
                                                       const VolumeConfig&, Rng*, const std::vector<std::size_t>&, \
                                                       std::size_t);
NFF_INSTANTIATE(float)
NFF_INSTANTIATE(double)
#undef NFF_INSTANTIATE

}  // namespace nff::render
