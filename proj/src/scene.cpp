#include "nff/scene.hpp"

#include <algorithm>
#include <cmath>

#include "nff/autodiff/ops.hpp"

namespace nff::scene {

using ad::Var;

void AffineTransform::validate() const {
  for (double s : scale) {
    if (!(s > 1e-9)) contract_fail("AffineTransform", "degenerate scale component " + std::to_string(s));
  }
  const Mat3 rtr = matmul3(transpose3(rotation), rotation);
  const Mat3 id = identity3();
  for (int i = 0; i < 9; ++i) {
    if (std::abs(rtr[i] - id[i]) > 1e-9) contract_fail("AffineTransform", "rotation is not orthonormal");
  }
  if (std::abs(det3(rotation) - 1.0) > 1e-9) contract_fail("AffineTransform", "rotation determinant is not +1");
}

Vec3 transform_to_scene(const AffineTransform& T, const Vec3& x) {
  return mul(T.rotation, Vec3{T.scale[0] * x[0], T.scale[1] * x[1], T.scale[2] * x[2]}) + T.translation;
}

namespace {

void require_nondegenerate(const AffineTransform& T) {
  for (double s : T.scale) {
    if (!(s > 1e-9)) contract_fail("inverse_transform", "degenerate transform: scale component " + std::to_string(s));
  }
}

}  // namespace

Vec3 inverse_transform_point(const AffineTransform& T, const Vec3& x) {
  require_nondegenerate(T);
  const Vec3 r = mul_transposed(T.rotation, x - T.translation);
  return {r[0] / T.scale[0], r[1] / T.scale[1], r[2] / T.scale[2]};
}

Vec3 inverse_transform_dir(const AffineTransform& T, const Vec3& d) {
  require_nondegenerate(T);
  const Vec3 r = mul_transposed(T.rotation, d);
  return {r[0] / T.scale[0], r[1] / T.scale[1], r[2] / T.scale[2]};
}

Vec3 CameraPose::position() const {
  return {radius * std::cos(elevation) * std::cos(azimuth), radius * std::cos(elevation) * std::sin(azimuth),
          radius * std::sin(elevation)};
}

Mat3 CameraPose::basis() const {
  const Vec3 fwd = normalize(-1.0 * position());
  const Vec3 right = normalize(cross(fwd, Vec3{0, 0, 1}));
  const Vec3 up = cross(right, fwd);
  return {right[0], up[0], fwd[0], right[1], up[1], fwd[1], right[2], up[2], fwd[2]};
}

void SceneSample::validate(std::size_t max_entities) const {
  const std::size_t n = transforms.size();
  if (n < 2 || n > max_entities) {
    contract_fail("SceneSample", "entity count " + std::to_string(n) + " outside [2, " + std::to_string(max_entities) + "]");
  }
  if (codes.size() != n) contract_fail("SceneSample", "latent code count does not match entity count");
  for (const auto& t : transforms) t.validate();
}

int SamplingConfig::max_objects() const { return *std::max_element(object_counts.begin(), object_counts.end()); }

void SamplingConfig::validate() const {
  if (object_counts.empty()) contract_fail("SamplingConfig", "object_counts is empty");
  for (int c : object_counts) {
    if (c < 1) contract_fail("SamplingConfig", "object counts must be >= 1");
  }
  if (!(scale_min > 0) || scale_max < scale_min) contract_fail("SamplingConfig", "invalid scale range");
  if (translation_range < 0) contract_fail("SamplingConfig", "negative translation range");
  if (elevation_max < elevation_min || elevation_max >= 1.5707963267948966) {
    contract_fail("SamplingConfig", "invalid elevation range");
  }
  if (!(radius > 0) || !(fov > 0) || !(background_scale > 0)) contract_fail("SamplingConfig", "non-positive camera/background parameter");
}

void to_json(nlohmann::json& j, const SamplingConfig& c) {
  j = {{"object_counts", c.object_counts}, {"scale_min", c.scale_min},
       {"scale_max", c.scale_max},         {"translation_range", c.translation_range},
       {"rest_on_ground", c.rest_on_ground}, {"yaw_min", c.yaw_min},
       {"yaw_max", c.yaw_max},             {"full_rotation", c.full_rotation},
       {"background_scale", c.background_scale}, {"radius", c.radius},
       {"elevation_min", c.elevation_min}, {"elevation_max", c.elevation_max},
       {"azimuth_min", c.azimuth_min},     {"azimuth_max", c.azimuth_max},
       {"fov", c.fov},                     {"latent_shape", c.latent_shape},
       {"latent_app", c.latent_app}};
}

void from_json(const nlohmann::json& j, SamplingConfig& c) {
  SamplingConfig d;
  c.object_counts = j.value("object_counts", d.object_counts);
  c.scale_min = j.value("scale_min", d.scale_min);
  c.scale_max = j.value("scale_max", d.scale_max);
  c.translation_range = j.value("translation_range", d.translation_range);
  c.rest_on_ground = j.value("rest_on_ground", d.rest_on_ground);
  c.yaw_min = j.value("yaw_min", d.yaw_min);
  c.yaw_max = j.value("yaw_max", d.yaw_max);
  c.full_rotation = j.value("full_rotation", d.full_rotation);
  c.background_scale = j.value("background_scale", d.background_scale);
  c.radius = j.value("radius", d.radius);
  c.elevation_min = j.value("elevation_min", d.elevation_min);
  c.elevation_max = j.value("elevation_max", d.elevation_max);
  c.azimuth_min = j.value("azimuth_min", d.azimuth_min);
  c.azimuth_max = j.value("azimuth_max", d.azimuth_max);
  c.fov = j.value("fov", d.fov);
  c.latent_shape = j.value("latent_shape", d.latent_shape);
  c.latent_app = j.value("latent_app", d.latent_app);
  c.validate();
}

void to_json(nlohmann::json& j, const AffineTransform& t) {
  j = {{"scale", t.scale}, {"translation", t.translation}, {"rotation", t.rotation}};
}

void from_json(const nlohmann::json& j, AffineTransform& t) {
  t.scale = j.at("scale").get<Vec3>();
  t.translation = j.at("translation").get<Vec3>();
  t.rotation = j.value("rotation", identity3());
}

void to_json(nlohmann::json& j, const CameraPose& c) {
  j = {{"radius", c.radius}, {"elevation", c.elevation}, {"azimuth", c.azimuth}, {"fov", c.fov}};
}

void from_json(const nlohmann::json& j, CameraPose& c) {
  CameraPose d;
  c.radius = j.value("radius", d.radius);
  c.elevation = j.value("elevation", d.elevation);
  c.azimuth = j.value("azimuth", d.azimuth);
  c.fov = j.value("fov", d.fov);
}

void to_json(nlohmann::json& j, const SceneSample& s) {
  j = nlohmann::json::object();
  j["camera"] = s.camera;
  j["entities"] = nlohmann::json::array();
  for (std::size_t i = 0; i < s.entity_count(); ++i) {
    j["entities"].push_back({{"transform", s.transforms[i]},
                             {"z_shape", s.codes[i].z_shape},
                             {"z_app", s.codes[i].z_app},
                             {"background", i == s.background_index()}});
  }
}

void from_json(const nlohmann::json& j, SceneSample& s) {
  s.camera = j.at("camera").get<CameraPose>();
  s.transforms.clear();
  s.codes.clear();
  for (const auto& e : j.at("entities")) {
    s.transforms.push_back(e.at("transform").get<AffineTransform>());
    s.codes.push_back({e.at("z_shape").get<std::vector<double>>(), e.at("z_app").get<std::vector<double>>()});
  }
}

namespace {

Mat3 random_rotation(Rng& rng) {
  double q[4];
  double n = 0;
  do {
    n = 0;
    for (double& v : q) {
      v = rng.normal();
      n += v * v;
    }
  } while (n < 1e-12);
  n = std::sqrt(n);
  const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
  return {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
          2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
          2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
}

}  // namespace

AffineTransform sample_object_transform(const SamplingConfig& cfg, Rng& rng) {
  AffineTransform t;
  const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
  t.scale = {s, s, s};
  const double r = cfg.translation_range;
  t.translation = {rng.uniform(-r, r), rng.uniform(-r, r), cfg.rest_on_ground ? s : 0.0};
  t.rotation = cfg.full_rotation ? random_rotation(rng) : yaw_rotation(rng.uniform(cfg.yaw_min, cfg.yaw_max));
  return t;
}

AffineTransform background_transform(const SamplingConfig& cfg) {
  AffineTransform t;
  t.scale = {cfg.background_scale, cfg.background_scale, cfg.background_scale};
  return t;
}

CameraPose sample_camera(const SamplingConfig& cfg, Rng& rng) {
  CameraPose c;
  c.radius = cfg.radius;
  c.elevation = rng.uniform(cfg.elevation_min, cfg.elevation_max);
  c.azimuth = rng.uniform(cfg.azimuth_min, cfg.azimuth_max);
  c.fov = cfg.fov;
  return c;
}

SceneSample sample_scene(const SamplingConfig& cfg, Rng& rng) {
  cfg.validate();
  SceneSample s;
  const int objects = cfg.object_counts[rng.below(cfg.object_counts.size())];
  const std::size_t n = std::size_t(objects) + 1;
  s.codes = fields::sample_latents(n, std::size_t(cfg.latent_shape), std::size_t(cfg.latent_app), rng);
  for (int i = 0; i < objects; ++i) s.transforms.push_back(sample_object_transform(cfg, rng));
  s.transforms.push_back(background_transform(cfg));
  s.camera = sample_camera(cfg, rng);
  return s;
}

Vec3 ray_direction(const CameraPose& cam, double u, double v, double aspect) {
  const double t = std::tan(cam.fov / 2);
  const double x = (2 * u - 1) * t * aspect;
  const double y = (1 - 2 * v) * t;
  const Mat3 b = cam.basis();
  const Vec3 right{b[0], b[3], b[6]}, up{b[1], b[4], b[7]}, fwd{b[2], b[5], b[8]};
  return normalize(fwd + x * right + y * up);
}

Rays generate_rays(const CameraPose& cam, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) contract_fail("generate_rays", "zero image extent");
  Rays r;
  r.height = height;
  r.width = width;
  const Vec3 origin = cam.position();
  const double aspect = double(width) / double(height);
  r.origins.assign(height * width, origin);
  r.dirs.reserve(height * width);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      r.dirs.push_back(ray_direction(cam, (double(j) + 0.5) / double(width), (double(i) + 0.5) / double(height), aspect));
    }
  }
  return r;
}

PointEval compose(std::span<const PointEval> entities) {
  if (entities.empty()) contract_fail("compose", "no entities");
  for (const auto& e : entities) {
    if (e.sigma < 0) contract_fail("compose", "negative density " + std::to_string(e.sigma));
    if (e.feature.size() != entities[0].feature.size()) contract_fail("compose", "feature sizes differ");
  }
  if (entities.size() == 1) return entities[0];
  PointEval out;
  out.feature.assign(entities[0].feature.size(), 0.0);
  for (const auto& e : entities) {
    out.sigma += e.sigma;
    for (std::size_t k = 0; k < e.feature.size(); ++k) out.feature[k] += e.sigma * e.feature[k];
  }
  if (out.sigma > 0) {
    for (auto& f : out.feature) f /= out.sigma;
  } else {
    std::fill(out.feature.begin(), out.feature.end(), 0.0);
  }
  return out;
}

template <typename T>
fields::FieldOutput<T> compose(const std::vector<fields::FieldOutput<T>>& entities) {
  if (entities.empty()) contract_fail("compose", "no entities");
  const Shape fs = entities[0].feature.shape();
  for (const auto& e : entities) {
    if (e.feature.shape() != fs || e.sigma.shape() != Shape{fs[0], 1}) {
      contract_fail("compose", "entity outputs are not congruent: " + shape_str(e.sigma.shape()) + " / " +
                                   shape_str(e.feature.shape()));
    }
    for (T v : e.sigma.value().values()) {
      if (v < T(0)) contract_fail("compose", "negative density input");
    }
  }
  if (entities.size() == 1) return entities[0];
  const std::size_t c = fs[1];
  Var<T> sigma = entities[0].sigma;
  Var<T> weighted = ad::mul(ad::repeat_last(entities[0].sigma, c), entities[0].feature);
  for (std::size_t i = 1; i < entities.size(); ++i) {
    sigma = ad::add(sigma, entities[i].sigma);
    weighted = ad::add(weighted, ad::mul(ad::repeat_last(entities[i].sigma, c), entities[i].feature));
  }
  auto denom = ad::repeat_last(ad::add_scalar(sigma, T(kComposeEps)), c);
  return {sigma, ad::div(weighted, denom)};
}

template <typename T>
SceneFields<T>::SceneFields(fields::EncodingConfig enc, fields::FieldConfig object_cfg, fields::FieldConfig background_cfg)
    : encoding(std::move(enc)),
      object("object.", object_cfg, encoding.dim_x(), encoding.dim_d()),
      background("background.", background_cfg, encoding.dim_x(), encoding.dim_d()) {
  if (object_cfg.feature_dim != background_cfg.feature_dim) {
    contract_fail("SceneFields", "object and background feature dims must agree");
  }
}

template <typename T>
EntityLatents<T> latent_leaves(ad::Graph<T>& g, const SceneSample& sample, std::size_t entity, bool requires_grad) {
  const auto& c = sample.codes.at(entity);
  return {g.leaf(fields::latent_row<T>(c.z_shape), requires_grad), g.leaf(fields::latent_row<T>(c.z_app), requires_grad)};
}

template <typename T>
fields::FieldOutput<T> evaluate_entity(ad::Graph<T>& g, const SceneFields<T>& f, const SceneWeights<T>& w,
                                       const SceneSample& sample, std::size_t entity, std::span<const Vec3> points,
                                       std::span<const Vec3> dirs, const EntityLatents<T>& latents) {
  if (entity >= sample.entity_count()) contract_fail("evaluate_entity", "entity index out of range");
  if (points.size() != dirs.size()) contract_fail("evaluate_entity", "points and directions differ in count");
  const bool is_background = entity == sample.background_index();
  const AffineTransform& T_i = sample.transforms[entity];
  const auto& field = is_background ? f.background : f.object;
  const auto& weights = is_background ? w.background : w.object;
  const std::size_t p = points.size();
  const std::size_t mf = std::size_t(field.config().feature_dim);

  std::vector<double> xs, ds;
  std::vector<std::size_t> rows;
  xs.reserve(3 * p);
  ds.reserve(3 * p);
  const double limit = f.object_box_padding ? 1.0 + *f.object_box_padding : 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    const Vec3 x = inverse_transform_point(T_i, points[i]);
    if (!is_background && f.object_box_padding) {
      if (std::abs(x[0]) > limit || std::abs(x[1]) > limit || std::abs(x[2]) > limit) continue;
      rows.push_back(i);
    }
    const Vec3 d = inverse_transform_dir(T_i, dirs[i]);
    xs.insert(xs.end(), x.begin(), x.end());
    ds.insert(ds.end(), d.begin(), d.end());
  }
  const bool masked = !is_background && f.object_box_padding.has_value();
  const std::size_t active = xs.size() / 3;
  if (masked && active == 0) {
    return {g.constant(Tensor<T>({p, 1})), g.constant(Tensor<T>({p, mf}))};
  }
  auto x_enc = g.constant(fields::encode_points<T>(xs, active, f.encoding, false));
  auto d_enc = g.constant(fields::encode_points<T>(ds, active, f.encoding, true));
  auto out = field.forward(weights, x_enc, d_enc, latents.z_shape, latents.z_app);
  if (masked && active < p) {
    out.sigma = ad::scatter_rows(out.sigma, rows, p);
    out.feature = ad::scatter_rows(out.feature, rows, p);
  }
  return out;
}

template fields::FieldOutput<float> compose<float>(const std::vector<fields::FieldOutput<float>>&);
template fields::FieldOutput<double> compose<double>(const std::vector<fields::FieldOutput<double>>&);
template struct SceneFields<float>;
template struct SceneFields<double>;
template EntityLatents<float> latent_leaves<float>(ad::Graph<float>&, const SceneSample&, std::size_t, bool);
template EntityLatents<double> latent_leaves<double>(ad::Graph<double>&, const SceneSample&, std::size_t, bool);
template fields::FieldOutput<float> evaluate_entity<float>(ad::Graph<float>&, const SceneFields<float>&,
                                                           const SceneWeights<float>&, const SceneSample&, std::size_t,
                                                           std::span<const Vec3>, std::span<const Vec3>,
                                                           const EntityLatents<float>&);
template fields::FieldOutput<double> evaluate_entity<double>(ad::Graph<double>&, const SceneFields<double>&,
                                                             const SceneWeights<double>&, const SceneSample&,
                                                             std::size_t, std::span<const Vec3>, std::span<const Vec3>,
                                                             const EntityLatents<double>&);

}  // namespace nff::scene
