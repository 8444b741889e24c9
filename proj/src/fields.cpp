#include "nff/fields.hpp"

#include <cmath>
#include <numbers>

#include "nff/autodiff/ops.hpp"

namespace nff::fields {

using ad::Var;

namespace {

template <typename T>
Tensor<T> normal_tensor(Rng& rng, Shape s, double stddev) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = T(rng.normal() * stddev);
  return t;
}

}  // namespace

void EncodingConfig::make_fourier_matrices(Rng& rng) {
  fourier_x = Tensor<double>({3 * std::size_t(octaves_x), 3});
  fourier_d = Tensor<double>({3 * std::size_t(octaves_d), 3});
  for (auto& v : fourier_x.values()) v = rng.normal() * fourier_scale;
  for (auto& v : fourier_d.values()) v = rng.normal() * fourier_scale;
}

void to_json(nlohmann::json& j, const EncodingConfig& c) {
  j = {{"octaves_x", c.octaves_x},
       {"octaves_d", c.octaves_d},
       {"mode", c.mode == EncodingMode::axis_aligned ? "axis-aligned" : "random-fourier"},
       {"fourier_scale", c.fourier_scale}};
  if (!c.fourier_x.empty()) {
    j["fourier_x"] = c.fourier_x.storage();
    j["fourier_d"] = c.fourier_d.storage();
  }
}

void from_json(const nlohmann::json& j, EncodingConfig& c) {
  c.octaves_x = j.value("octaves_x", 10);
  c.octaves_d = j.value("octaves_d", 4);
  const auto mode = j.value("mode", std::string("axis-aligned"));
  if (mode == "axis-aligned") {
    c.mode = EncodingMode::axis_aligned;
  } else if (mode == "random-fourier") {
    c.mode = EncodingMode::random_fourier;
  } else {
    contract_fail("EncodingConfig", "unknown mode '" + mode + "'");
  }
  c.fourier_scale = j.value("fourier_scale", 2.0);
  if (c.octaves_x < 1 || c.octaves_d < 1) contract_fail("EncodingConfig", "octave counts must be >= 1");
  if (j.contains("fourier_x")) {
    c.fourier_x = Tensor<double>({3 * std::size_t(c.octaves_x), 3}, j.at("fourier_x").get<std::vector<double>>());
    c.fourier_d = Tensor<double>({3 * std::size_t(c.octaves_d), 3}, j.at("fourier_d").get<std::vector<double>>());
  }
}

std::vector<double> positional_encode(std::span<const double> v, int octaves) {
  if (octaves < 1) contract_fail("positional_encode", "octave count must be >= 1, got " + std::to_string(octaves));
  std::vector<double> out;
  out.reserve(2 * std::size_t(octaves) * v.size());
  for (double t : v) {
    // higher octaves by the double-angle recurrence; error grows about 2^l ulp
    double s = std::sin(std::numbers::pi * t), c = std::cos(std::numbers::pi * t);
    for (int l = 0; l < octaves; ++l) {
      out.push_back(s);
      out.push_back(c);
      const double s2 = 2 * s * c, c2 = (c - s) * (c + s);
      s = s2, c = c2;
    }
  }
  return out;
}

std::vector<double> random_fourier_encode(std::span<const double> v, const Tensor<double>& matrix) {
  if (matrix.rank() != 2 || matrix.dim(1) != v.size()) {
    contract_fail("random_fourier_encode", "matrix " + shape_str(matrix.shape()) + " incompatible with a " +
                                               std::to_string(v.size()) + "-vector");
  }
  const std::size_t m = matrix.dim(0);
  std::vector<double> out(2 * m);
  for (std::size_t r = 0; r < m; ++r) {
    double p = 0;
    for (std::size_t c = 0; c < v.size(); ++c) p += matrix[r * v.size() + c] * v[c];
    p *= 2 * std::numbers::pi;
    out[r] = std::sin(p);
    out[m + r] = std::cos(p);
  }
  return out;
}

template <typename T>
Tensor<T> encode_points(std::span<const double> points, std::size_t count, const EncodingConfig& cfg, bool directions) {
  if (points.size() != 3 * count) contract_fail("encode_points", "expected " + std::to_string(3 * count) + " coordinates");
  const std::size_t dim = directions ? cfg.dim_d() : cfg.dim_x();
  const int octaves = directions ? cfg.octaves_d : cfg.octaves_x;
  const Tensor<double>& matrix = directions ? cfg.fourier_d : cfg.fourier_x;
  if (cfg.mode == EncodingMode::random_fourier && matrix.empty()) {
    contract_fail("encode_points", "random-fourier mode without a persisted matrix");
  }
  Tensor<T> out({count, dim});
  for (std::size_t p = 0; p < count; ++p) {
    const auto e = cfg.mode == EncodingMode::axis_aligned ? positional_encode(points.subspan(3 * p, 3), octaves)
                                                          : random_fourier_encode(points.subspan(3 * p, 3), matrix);
    for (std::size_t i = 0; i < dim; ++i) out[p * dim + i] = T(e[i]);
  }
  return out;
}

std::vector<LatentCodes> sample_latents(std::size_t n, std::size_t dim_shape, std::size_t dim_app, Rng& rng) {
  std::vector<LatentCodes> out(n);
  for (auto& c : out) {
    c.z_shape.resize(dim_shape);
    c.z_app.resize(dim_app);
    for (auto& v : c.z_shape) v = rng.normal();
    for (auto& v : c.z_app) v = rng.normal();
  }
  return out;
}

FieldConfig FieldConfig::background_for(const FieldConfig& object) {
  FieldConfig bg = object;
  bg.depth = std::max(1, object.depth / 2);
  bg.hidden = std::max(1, object.hidden / 2);
  return bg;
}

void to_json(nlohmann::json& j, const FieldConfig& c) {
  j = {{"depth", c.depth},
       {"hidden", c.hidden},
       {"latent_shape", c.latent_shape},
       {"latent_app", c.latent_app},
       {"feature_dim", c.feature_dim}};
}

void from_json(const nlohmann::json& j, FieldConfig& c) {
  FieldConfig d;
  c.depth = j.value("depth", d.depth);
  c.hidden = j.value("hidden", d.hidden);
  c.latent_shape = j.value("latent_shape", d.latent_shape);
  c.latent_app = j.value("latent_app", d.latent_app);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  if (c.depth < 1 || c.hidden < 1 || c.latent_shape < 1 || c.latent_app < 1 || c.feature_dim < 1) {
    contract_fail("FieldConfig", "all dimensions must be positive");
  }
}

template <typename T>
Tensor<T> latent_row(const std::vector<double>& z) {
  return Tensor<T>({1, z.size()}, std::vector<T>(z.begin(), z.end()));
}

template <typename T>
FeatureField<T>::FeatureField(std::string prefix, FieldConfig cfg, std::size_t dim_x, std::size_t dim_d)
    : prefix_(std::move(prefix)), cfg_(cfg), dim_x_(dim_x), dim_d_(dim_d) {}

template <typename T>
void FeatureField<T>::init(ad::ParamStore<T>& store, Rng& rng) const {
  const std::size_t h = std::size_t(cfg_.hidden);
  const std::size_t ms = std::size_t(cfg_.latent_shape), ma = std::size_t(cfg_.latent_app);
  const std::size_t mf = std::size_t(cfg_.feature_dim);
  const double in_std = std::sqrt(2.0 / double(dim_x_ + ms));
  store.add(name("trunk.0.wx"), normal_tensor<T>(rng, {dim_x_, h}, in_std));
  store.add(name("trunk.0.wz"), normal_tensor<T>(rng, {ms, h}, in_std));
  store.add(name("trunk.0.b"), Tensor<T>({h}));
  for (int i = 1; i < cfg_.depth; ++i) {
    store.add(name("trunk." + std::to_string(i) + ".w"), normal_tensor<T>(rng, {h, h}, std::sqrt(2.0 / double(h))));
    store.add(name("trunk." + std::to_string(i) + ".b"), Tensor<T>({h}));
  }
  store.add(name("density.w"), normal_tensor<T>(rng, {h, 1}, 0.1 * std::sqrt(2.0 / double(h))));
  store.add(name("density.b"), Tensor<T>({1}));
  const double head_std = std::sqrt(2.0 / double(h + dim_d_ + ma));
  store.add(name("feature.wh"), normal_tensor<T>(rng, {h, mf}, head_std));
  store.add(name("feature.wd"), normal_tensor<T>(rng, {dim_d_, mf}, head_std));
  store.add(name("feature.wa"), normal_tensor<T>(rng, {ma, mf}, head_std));
  store.add(name("feature.b"), Tensor<T>({mf}));
}

template <typename T>
std::size_t FeatureField<T>::trunk_parameter_count() const {
  const std::size_t h = std::size_t(cfg_.hidden);
  return (dim_x_ + std::size_t(cfg_.latent_shape)) * h + h + std::size_t(cfg_.depth - 1) * (h * h + h);
}

template <typename T>
std::size_t FeatureField<T>::parameter_count() const {
  const std::size_t h = std::size_t(cfg_.hidden), mf = std::size_t(cfg_.feature_dim);
  return trunk_parameter_count() + (h + 1) + (h + dim_d_ + std::size_t(cfg_.latent_app)) * mf + mf;
}

template <typename T>
FieldWeights<T> FeatureField<T>::bind(ad::Graph<T>& g, ad::ParamStore<T>& store, bool trainable) const {
  FieldWeights<T> w;
  w.trunk_wx = g.param(store, name("trunk.0.wx"), trainable);
  w.trunk_wz = g.param(store, name("trunk.0.wz"), trainable);
  w.trunk_b0 = g.param(store, name("trunk.0.b"), trainable);
  for (int i = 1; i < cfg_.depth; ++i) {
    w.trunk_w.push_back(g.param(store, name("trunk." + std::to_string(i) + ".w"), trainable));
    w.trunk_b.push_back(g.param(store, name("trunk." + std::to_string(i) + ".b"), trainable));
  }
  w.density_w = g.param(store, name("density.w"), trainable);
  w.density_b = g.param(store, name("density.b"), trainable);
  w.feature_wh = g.param(store, name("feature.wh"), trainable);
  w.feature_wd = g.param(store, name("feature.wd"), trainable);
  w.feature_wa = g.param(store, name("feature.wa"), trainable);
  w.feature_b = g.param(store, name("feature.b"), trainable);
  return w;
}

template <typename T>
FieldOutput<T> FeatureField<T>::forward(const FieldWeights<T>& w, Var<T> x_enc, Var<T> d_enc, Var<T> z_shape,
                                        Var<T> z_app) const {
  const auto& xs = x_enc.shape();
  const auto& ds = d_enc.shape();
  if (xs.size() != 2 || xs[1] != dim_x_ || ds.size() != 2 || ds[1] != dim_d_ || ds[0] != xs[0]) {
    contract_fail("feature_field", "encoded inputs " + shape_str(xs) + " / " + shape_str(ds) + " do not match dims " +
                                       std::to_string(dim_x_) + " / " + std::to_string(dim_d_));
  }
  if (z_shape.shape() != Shape{1, std::size_t(cfg_.latent_shape)} ||
      z_app.shape() != Shape{1, std::size_t(cfg_.latent_app)}) {
    contract_fail("feature_field", "latent codes " + shape_str(z_shape.shape()) + " / " + shape_str(z_app.shape()) +
                                       " do not match configured dims");
  }
  const std::size_t h = std::size_t(cfg_.hidden), mf = std::size_t(cfg_.feature_dim);

  // Per-entity bias from the shape code, shared by every point.
  auto z_bias = ad::add(ad::reshape(ad::matmul(z_shape, w.trunk_wz), Shape{h}), w.trunk_b0);
  auto hdn = ad::relu(ad::bias_add(ad::matmul(x_enc, w.trunk_wx), z_bias));
  for (std::size_t i = 0; i < w.trunk_w.size(); ++i) {
    hdn = ad::relu(ad::bias_add(ad::matmul(hdn, w.trunk_w[i]), w.trunk_b[i]));
  }
  auto sigma = ad::relu(ad::bias_add(ad::matmul(hdn, w.density_w), w.density_b));

  auto a_bias = ad::add(ad::reshape(ad::matmul(z_app, w.feature_wa), Shape{mf}), w.feature_b);
  auto feat = ad::bias_add(ad::add(ad::matmul(hdn, w.feature_wh), ad::matmul(d_enc, w.feature_wd)), a_bias);
  return {sigma, feat};
}

template Tensor<float> encode_points<float>(std::span<const double>, std::size_t, const EncodingConfig&, bool);
template Tensor<double> encode_points<double>(std::span<const double>, std::size_t, const EncodingConfig&, bool);
template Tensor<float> latent_row<float>(const std::vector<double>&);
template Tensor<double> latent_row<double>(const std::vector<double>&);
template class FeatureField<float>;
template class FeatureField<double>;

}  // namespace nff::fields
