#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "nff/autodiff/finite_diff.hpp"
#include "nff/autodiff/ops.hpp"
#include "nff/image_io.hpp"
#include "nff/volume.hpp"

using namespace nff;
using namespace nff::render;
using G = ad::Graph<double>;

namespace {

fields::FieldConfig small_field() {
  fields::FieldConfig c;
  c.depth = 3;
  c.hidden = 32;
  c.latent_shape = 8;
  c.latent_app = 8;
  c.feature_dim = 8;
  return c;
}

struct SmallScene {
  scene::SceneFields<double> fields;
  ad::ParamStore<double> store;
  explicit SmallScene(std::uint64_t seed = 3)
      : fields({}, small_field(), fields::FieldConfig::background_for(small_field())) {
    Rng rng(seed);
    fields.object.init(store, rng);
    fields.background.init(store, rng);
  }
  scene::SceneWeights<double> bind(G& g, bool trainable = false) {
    return {fields.object.bind(g, store, trainable), fields.background.bind(g, store, trainable)};
  }
};

scene::SceneSample small_sample(Rng& rng, std::vector<int> counts = {2}) {
  scene::SamplingConfig cfg;
  cfg.object_counts = std::move(counts);
  cfg.latent_shape = 8;
  cfg.latent_app = 8;
  return scene::sample_scene(cfg, rng);
}

VolumeConfig eval_config(int samples = 32) {
  VolumeConfig c;
  c.samples = samples;
  c.stratified = false;
  return c;
}

/// Analytic density: a Gaussian blob at the origin.
double blob(const Vec3& x, double peak, double width) { return peak * std::exp(-dot(x, x) / (2 * width * width)); }

}  // namespace

TEST_CASE("stratified_sample examples") {
  const auto mid = stratified_sample(0.0, 1.0, 2, nullptr);
  CHECK(mid.depths == std::vector<double>{0.25, 0.75});
  CHECK(mid.deltas == std::vector<double>{0.5, 0.25});
  CHECK_THROWS_AS(stratified_sample(0.5, 6.0, 0, nullptr), ContractError);
  CHECK_THROWS_AS(stratified_sample(2.0, 1.0, 4, nullptr), ContractError);

  Rng rng(1);
  const int ns = 8;
  std::vector<double> all;
  for (int trial = 0; trial < 1250; ++trial) {
    const auto s = stratified_sample(0.5, 6.0, ns, &rng);
    const double bin = 5.5 / ns;
    double sum = 0;
    for (int j = 0; j < ns; ++j) {
      CHECK(s.depths[j] >= 0.5 + j * bin);
      CHECK(s.depths[j] <= 0.5 + (j + 1) * bin);
      CHECK(s.deltas[j] > 0);
      sum += s.deltas[j];
      all.push_back(s.depths[j]);
    }
    CHECK(sum == doctest::Approx(6.0 - s.depths[0]).epsilon(1e-12));
  }
  REQUIRE(all.size() == 10000);
  // Kolmogorov-Smirnov against U(0.5, 6.0); 1.628 / sqrt(n) is the p = 0.01 critical value.
  std::sort(all.begin(), all.end());
  double ks = 0;
  const double n = double(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    const double cdf = (all[i] - 0.5) / 5.5;
    ks = std::max({ks, std::abs(cdf - double(i) / n), std::abs(double(i + 1) / n - cdf)});
  }
  CHECK(ks < 1.628 / std::sqrt(n));
}

TEST_CASE("alpha_from_density examples and monotonicity") {
  CHECK(alpha_from_density(0.0, 0.3) == 0.0);
  CHECK(alpha_from_density(std::log(2.0), 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double s = rng.uniform(0, 5), d = rng.uniform(1e-3, 2), ds = rng.uniform(1e-6, 1);
    const double a = alpha_from_density(s, d);
    CHECK(a >= 0);
    CHECK(a < 1);
    CHECK(alpha_from_density(s + ds, d) >= a);
    CHECK(alpha_from_density(s, d + ds) >= a);
  }
}

TEST_CASE("volume_render_ray examples") {
  const double big[] = {1e4}, one[] = {1.0}, f1[] = {0.3, -0.7};
  const auto opaque = volume_render_ray(big, one, f1, 2);
  CHECK(opaque.alpha == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(opaque.feature[0] == doctest::Approx(0.3));
  CHECK(opaque.feature[1] == doctest::Approx(-0.7));

  const double s2[] = {std::log(2.0), std::log(2.0)}, d2[] = {1.0, 1.0}, f2[] = {1, 0, 0, 1};
  const auto two = volume_render_ray(s2, d2, f2, 2);
  CHECK(two.feature[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(two.feature[1] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(two.alpha == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("piecewise-constant media match analytic exponential attenuation") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = stratified_sample(0.5, 6.0, 64, &rng);
    std::vector<double> sigma(64), feat(64, 0.0);
    for (auto& v : sigma) v = rng.uniform(0, 2);
    const auto r = volume_render_ray(sigma, s.deltas, feat, 1);
    double optical = 0;
    for (std::size_t j = 0; j < 64; ++j) {
      CHECK(std::abs(r.transmittance[j] - std::exp(-optical)) < 1e-12);
      if (j > 0) CHECK(r.transmittance[j] <= r.transmittance[j - 1]);
      optical += sigma[j] * s.deltas[j];
    }
    CHECK(r.transmittance[0] == 1.0);
    CHECK(std::abs(r.alpha - (1 - std::exp(-optical))) < 1e-12);
    CHECK(r.alpha >= 0);
    CHECK(r.alpha <= 1);
  }
}

TEST_CASE("graph integration matches the plain ray compositor") {
  Rng rng(4);
  scene::CameraPose cam;
  cam.elevation = 0.4;
  const auto batch = sample_rays(scene::generate_rays(cam, 3, 4), eval_config(16), nullptr);
  const std::size_t c = 3;
  Tensor<double> sigma({batch.size(), 1}), feat({batch.size(), c});
  for (auto& v : sigma.values()) v = rng.uniform(0, 3);
  for (auto& v : feat.values()) v = rng.uniform(-1, 1);
  G g;
  const auto img = integrate(batch, g.constant(sigma), g.constant(feat));
  REQUIRE(img.feature.shape() == Shape{1, 3, 4, c});
  REQUIRE(img.alpha.shape() == Shape{1, 3, 4, 1});
  for (std::size_t r = 0; r < batch.rays(); ++r) {
    const std::size_t s = batch.samples;
    const auto ref = volume_render_ray(std::span<const double>(sigma.data() + r * s, s),
                                       std::span<const double>(batch.deltas.data() + r * s, s),
                                       std::span<const double>(feat.data() + r * s * c, s * c), c);
    CHECK(std::abs(img.alpha.value()[r] - ref.alpha) < 1e-12);
    for (std::size_t k = 0; k < c; ++k) CHECK(std::abs(img.feature.value()[r * c + k] - ref.feature[k]) < 1e-12);
  }
}

TEST_CASE("rendered pixel gradients with respect to densities match finite differences") {
  Rng rng(5);
  scene::CameraPose cam;
  const auto batch = sample_rays(scene::generate_rays(cam, 2, 2), eval_config(8), nullptr);
  const std::size_t c = 2;
  std::vector<double> sigma(batch.size()), feat(batch.size() * c);
  for (auto& v : sigma) v = rng.uniform(0.1, 2);
  for (auto& v : feat) v = rng.uniform(-1, 1);
  std::vector<double> pix_weights(batch.rays() * c);
  for (auto& v : pix_weights) v = rng.uniform(-1, 1);

  auto loss = [&](G& g, ad::Var<double> s) {
    const auto img = integrate(batch, s, g.constant(Tensor<double>({batch.size(), c}, feat)));
    auto wimg = ad::mul(img.feature, g.constant(Tensor<double>({1, 2, 2, c}, pix_weights)));
    return ad::add(ad::sum_all(wimg), ad::sum_all(img.alpha));
  };
  G g;
  auto s = g.leaf(Tensor<double>({batch.size(), 1}, sigma));
  g.backward(loss(g, s));
  const auto grad = g.grad(s);
  const auto fd = ad::finite_difference_gradient(
      [&](const Tensor<double>& t) {
        G h;
        return loss(h, h.constant(t)).value()[0];
      },
      Tensor<double>({batch.size(), 1}, sigma), 1e-6);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    CHECK(ad::relative_error(grad[i], fd[i], 1e-3) <= 1e-4);
  }
}

TEST_CASE("zero-weight fields render a zero feature image") {
  SmallScene sc;
  for (auto& e : sc.store.entries()) e.value.fill(0.0);
  Rng rng(6);
  const auto sample = small_sample(rng);
  G g;
  const auto img = render_feature_image(g, sc.fields, sc.bind(g), sample, 4, 4, eval_config(8), nullptr);
  for (double v : img.feature.value().values()) CHECK(v == 0.0);
  for (double v : img.alpha.value().values()) CHECK(v == 0.0);
}

TEST_CASE("a background-only scene renders the background field directly") {
  SmallScene sc;
  Rng rng(7);
  auto sample = small_sample(rng);
  const std::size_t bg = sample.background_index();
  scene::SceneSample only;
  only.camera = sample.camera;
  only.transforms = {sample.transforms[bg]};
  only.codes = {sample.codes[bg]};
  const auto cfg = eval_config(16);
  G g;
  const auto w = sc.bind(g);
  const auto img = render_feature_image(g, sc.fields, w, only, 4, 4, cfg, nullptr);
  const auto batch = sample_rays(scene::generate_rays(only.camera, 4, 4), cfg, nullptr);
  const auto out = scene::evaluate_entity(g, sc.fields, w, only, 0, batch.points, batch.dirs,
                                          scene::latent_leaves(g, only, 0, false));
  const auto direct = integrate(batch, out.sigma, out.feature);
  CHECK(img.feature.value() == direct.feature.value());
  CHECK(img.alpha.value() == direct.alpha.value());
}

TEST_CASE("doubling the resolution preserves a smooth analytic rendering") {
  scene::CameraPose cam;
  cam.elevation = 0.45;
  cam.azimuth = 0.7;
  const auto cfg = eval_config(64);
  auto render = [&](std::size_t res) {
    const auto batch = sample_rays(scene::generate_rays(cam, res, res), cfg, nullptr);
    Tensor<double> sigma({batch.size(), 1}), feat({batch.size(), 1});
    for (std::size_t i = 0; i < batch.size(); ++i) {
      sigma[i] = blob(batch.points[i], 2.0, 0.8);
      feat[i] = 0.5 + 0.5 * std::sin(batch.points[i][2]);
    }
    G g;
    const auto img = integrate(batch, g.constant(sigma), g.constant(feat));
    return std::pair{img.alpha.value(), img.feature.value()};
  };
  const std::size_t lo = 16;
  const auto a = render(lo);
  const auto b = render(2 * lo);
  // Pixel centres of the coarse grid sit at the centre of each 2x2 fine block.
  double worst = 0;
  for (std::size_t i = 0; i < lo; ++i) {
    for (std::size_t j = 0; j < lo; ++j) {
      for (int which = 0; which < 2; ++which) {
        const auto& fine = which == 0 ? b.first : b.second;
        const auto& coarse = which == 0 ? a.first : a.second;
        double avg = 0;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) avg += fine[(2 * i + di) * 2 * lo + 2 * j + dj] / 4;
        worst = std::max(worst, std::abs(avg - coarse[i * lo + j]));
      }
    }
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("an opaque centred sphere gives alpha 1 inside and 0 outside") {
  scene::CameraPose cam;
  cam.elevation = 0.3;
  const std::size_t res = 32;
  const auto batch = sample_rays(scene::generate_rays(cam, res, res), eval_config(256), nullptr);
  const double radius = 0.5;
  Tensor<double> sigma({batch.size(), 1}), feat({batch.size(), 1});
  for (std::size_t i = 0; i < batch.size(); ++i) sigma[i] = norm(batch.points[i]) < radius ? 1e3 : 0.0;
  G g;
  const auto img = integrate(batch, g.constant(sigma), g.constant(feat));
  const auto rays = scene::generate_rays(cam, res, res);
  int inside = 0, outside = 0;
  for (std::size_t r = 0; r < rays.dirs.size(); ++r) {
    // Distance from the centre to the ray's line.
    const Vec3 o = rays.origins[r], d = rays.dirs[r];
    const double miss = norm(o - dot(o, d) * d);
    if (miss < radius - 0.05) {
      CHECK(img.alpha.value()[r] > 0.999);
      ++inside;
    } else if (miss > radius + 0.05) {
      CHECK(img.alpha.value()[r] == 0.0);
      ++outside;
    }
  }
  CHECK(inside > 20);
  CHECK(outside > 20);
}

TEST_CASE("entity alpha maps") {
  SmallScene sc(8);
  Rng rng(9);
  const auto sample = small_sample(rng, {3});
  const auto cfg = eval_config(16);
  const std::size_t res = 6;
  std::vector<Tensor<double>> maps;
  for (std::size_t i = 0; i < sample.entity_count(); ++i) {
    maps.push_back(render_entity_alpha_map(sc.fields, sc.store, sample, i, res, res, cfg));
    for (double v : maps.back().values()) {
      CHECK(v >= 0);
      CHECK(v <= 1);
    }
  }
  G g;
  const auto joint = render_feature_image(g, sc.fields, sc.bind(g), sample, res, res, cfg, nullptr);
  for (std::size_t p = 0; p < res * res; ++p) {
    double sum = 0;
    for (const auto& m : maps) sum += m[p];
    CHECK(sum >= joint.alpha.value()[p] - 1e-12);
  }
  CHECK_THROWS_AS(render_entity_alpha_map(sc.fields, sc.store, sample, 4, res, res, cfg), ContractError);

  SmallScene empty(8);
  for (auto& e : empty.store.entries()) e.value.fill(0.0);
  const auto none = render_entity_alpha_map(empty.fields, empty.store, sample, 0, res, res, cfg);
  for (double v : none.values()) CHECK(v == 0.0);
}

TEST_CASE("gradients reach the shape code of every entity with density on the ray") {
  SmallScene sc(10);
  // Lift the density bias so every entity is visible somewhere.
  sc.store.entry("object.density.b").value[0] = 0.5;
  sc.store.entry("background.density.b").value[0] = 0.05;
  Rng rng(11);
  const auto sample = small_sample(rng, {2});
  G g;
  std::vector<scene::EntityLatents<double>> lat;
  for (std::size_t i = 0; i < sample.entity_count(); ++i) lat.push_back(scene::latent_leaves(g, sample, i, true));
  const auto img = render_feature_image(g, sc.fields, sc.bind(g), sample, 4, 4, eval_config(16), nullptr, lat);
  g.backward(ad::sum_all(img.feature));
  for (const auto& l : lat) {
    const auto gz = g.grad(l.z_shape);
    const auto& v = gz.values();
    CHECK(std::any_of(v.begin(), v.end(), [](double x) { return x != 0.0; }));
  }
}

TEST_CASE("alpha maps export as grayscale png") {
  Tensor<double> a({3, 5});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = double(i) / 14.0;
  a[0] = -0.5;
  a[1] = 2.0;
  const auto path = (std::filesystem::temp_directory_path() / "nff_alpha_test.png").string();
  write_alpha_png(path, a);
  const auto img = io::read_png(path);
  CHECK(img.height == 3);
  CHECK(img.width == 5);
  CHECK(img.channels == 1);
  CHECK(img.pixels[0] == 0);
  CHECK(img.pixels[1] == 255);
  CHECK(img.pixels[14] == 255);
  CHECK(img.pixels[7] == io::quantize(0.5));
  std::filesystem::remove(path);
}
