#include "nff/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "nff/autodiff/finite_diff.hpp"
#include "nff/autodiff/ops.hpp"
#include "nff/discriminator.hpp"
#include "nff/training.hpp"

namespace nff::checks {

namespace {

using G = ad::Graph<double>;

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

fields::FieldConfig compact_field() {
  fields::FieldConfig c;
  c.depth = 3;
  c.hidden = 32;
  c.latent_shape = 8;
  c.latent_app = 8;
  c.feature_dim = 8;
  return c;
}

Tensor<double> block_average(const Tensor<double>& alpha, std::size_t target) {
  const std::size_t res = alpha.shape()[1];
  const std::size_t f = res / target;
  Tensor<double> out({target, target});
  for (std::size_t y = 0; y < res; ++y)
    for (std::size_t x = 0; x < res; ++x) out[(y / f) * target + x / f] += alpha[y * res + x];
  for (auto& v : out.values()) v /= double(f * f);
  return out;
}

}  // namespace

CheckResult timed(const std::string& name, const std::function<CheckResult()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = fn();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string format(const CheckResult& r) {
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.2f s", r.seconds);
  return std::string(r.passed ? "PASS " : "FAIL ") + r.name + " (" + r.detail + ", " + secs + ")";
}

CheckResult gradient_integrity(std::uint64_t seed) {
  auto cfg = GeneratorConfig::small();
  cfg.feature_res = 4;
  cfg.image_res = 8;
  cfg.volume.samples = 16;
  cfg.finalize();
  Generator<double> gen(cfg);
  ad::ParamStore<double> store;
  Rng rng(seed + 11);
  gen.init(store, rng);
  const auto sample = scene::sample_scene(cfg.sampling, rng);
  Tensor<double> weights({1, 8, 8, 3});
  for (auto& v : weights.values()) v = rng.uniform(-1, 1);

  auto loss = [&](G& g, bool trainable) {
    const auto out = gen.forward(g, store, sample, trainable, nullptr);
    return ad::sum_all(ad::mul(out.rgb, g.constant(weights)));
  };
  store.zero_grad();
  {
    G g;
    g.backward(loss(g, true));
  }

  // Uniform over flat parameter indices, so every layer is hit in proportion to its size.
  std::vector<std::size_t> offsets{0};
  for (const auto& e : store.entries()) offsets.push_back(offsets.back() + e.value.size());
  // Gradients far below the typical magnitude are compared against a floor at the
  // central-difference roundoff scale instead of their own size.
  double sq = 0;
  for (const auto& e : store.entries())
    for (double v : e.grad.values()) sq += v * v;
  const double floor = 1e-3 * std::sqrt(sq / double(offsets.back()));
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_name;
  for (std::size_t k = 0; k < tol::gradient_params; ++k) {
    const std::size_t flat = rng.below(offsets.back());
    const std::size_t ei = std::size_t(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin()) - 1;
    auto& e = store.at(ei);
    const std::size_t i = flat - offsets[ei];
    const std::vector<std::size_t> coord{i};
    const auto fd = ad::finite_difference_at(
        [&] {
          G h;
          return loss(h, false).value()[0];
        },
        e.value.values(), coord, 1e-5);
    const double err = ad::relative_error(e.grad[i], fd[0], floor);
    if (err > worst) {
      worst = err;
      worst_name = e.name + "[" + std::to_string(i) + "]";
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CheckResult r;
  r.passed = worst <= tol::gradient_rel && secs < tol::gradient_seconds;
  r.detail = fmt("%g params, max rel err %.3g, floor %.2g", double(tol::gradient_params), worst, floor) + " at " + worst_name;
  return r;
}

CheckResult volume_oracle(std::uint64_t seed) {
  Rng rng(seed + 21);
  scene::CameraPose cam;
  cam.elevation = 0.5;
  render::VolumeConfig vc;
  vc.samples = 24;
  vc.stratified = true;
  // 25 x 40 = 1000 rays, stratified depths, one constant density and feature per bin.
  const auto batch = render::sample_rays(scene::generate_rays(cam, 25, 40), vc, &rng);
  const std::size_t s = batch.samples, c = 3;
  Tensor<double> sigma({batch.size(), 1}), feat({batch.size(), c});
  for (auto& v : sigma.values()) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0, 4);
  for (auto& v : feat.values()) v = rng.uniform(-1, 1);
  G g;
  const auto img = render::integrate(batch, g.constant(sigma), g.constant(feat));
  double worst = 0;
  for (std::size_t r = 0; r < batch.rays(); ++r) {
    double optical = 0;
    std::vector<double> expect(c, 0.0);
    for (std::size_t j = 0; j < s; ++j) {
      const std::size_t p = r * s + j;
      const double entering = std::exp(-optical);
      optical += sigma[p] * batch.deltas[p];
      const double weight = entering - std::exp(-optical);
      for (std::size_t k = 0; k < c; ++k) expect[k] += weight * feat[p * c + k];
    }
    const double alpha = 1 - std::exp(-optical);
    const auto plain = render::volume_render_ray(std::span<const double>(sigma.data() + r * s, s),
                                                 std::span<const double>(batch.deltas.data() + r * s, s),
                                                 std::span<const double>(feat.data() + r * s * c, s * c), c);
    worst = std::max({worst, std::abs(plain.alpha - alpha), std::abs(img.alpha.value()[r] - alpha)});
    for (std::size_t k = 0; k < c; ++k)
      worst = std::max({worst, std::abs(plain.feature[k] - expect[k]),
                        std::abs(img.feature.value()[r * c + k] - expect[k])});
  }
  CheckResult r;
  r.passed = worst <= tol::volume_abs;
  r.detail = fmt("%g rays, max abs err %.3g", double(batch.rays()), worst);
  return r;
}

CheckResult composition_laws(std::uint64_t seed) {
  scene::SceneFields<double> fields({}, compact_field(), fields::FieldConfig::background_for(compact_field()));
  ad::ParamStore<double> store;
  Rng rng(seed + 31);
  fields.object.init(store, rng);
  fields.background.init(store, rng);
  scene::SamplingConfig sc;
  sc.object_counts = {1, 2, 3, 4};
  sc.latent_shape = sc.latent_app = 8;
  render::VolumeConfig vc;
  vc.samples = 16;
  vc.stratified = false;

  const std::size_t points = 32, res = 4;
  double identity = 0, permutation = 0, additivity = 0, occlusion = 0;
  for (std::size_t n = 0; n < tol::composition_scenes; ++n) {
    const auto sample = scene::sample_scene(sc, rng);
    const std::size_t ne = sample.entity_count();
    std::vector<Vec3> xs(points), ds(points);
    for (std::size_t p = 0; p < points; ++p) {
      xs[p] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1)};
      ds[p] = normalize(Vec3{rng.normal(), rng.normal(), rng.normal()});
    }
    G g;
    const scene::SceneWeights<double> w{fields.object.bind(g, store, false), fields.background.bind(g, store, false)};
    std::vector<fields::FieldOutput<double>> outs;
    for (std::size_t e = 0; e < ne; ++e)
      outs.push_back(scene::evaluate_entity(g, fields, w, sample, e, xs, ds, scene::latent_leaves(g, sample, e, false)));
    const std::size_t mf = outs[0].feature.shape()[1];

    for (std::size_t p = 0; p < points; ++p) {
      std::vector<scene::PointEval> evals(ne);
      for (std::size_t e = 0; e < ne; ++e) {
        evals[e].sigma = outs[e].sigma.value()[p];
        const auto& f = outs[e].feature.value();
        evals[e].feature.assign(f.data() + p * mf, f.data() + (p + 1) * mf);
      }
      const auto ref = scene::compose(evals);
      const auto single = scene::compose(std::span<const scene::PointEval>(evals.data(), 1));
      identity = std::max(identity, std::abs(single.sigma - evals[0].sigma));
      for (std::size_t k = 0; k < mf; ++k) identity = std::max(identity, std::abs(single.feature[k] - evals[0].feature[k]));

      auto shuffled = evals;
      for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
      const auto perm = scene::compose(shuffled);
      permutation = std::max(permutation, std::abs(perm.sigma - ref.sigma) / std::max(1.0, ref.sigma));
      for (std::size_t k = 0; k < mf; ++k)
        permutation = std::max(permutation, std::abs(perm.feature[k] - ref.feature[k]) / std::max(1.0, std::abs(ref.feature[k])));

      double total = 0;
      for (const auto& e : evals) total += e.sigma;
      additivity = std::max(additivity, std::abs(ref.sigma - total) / std::max(1.0, total));
    }

    const auto joint = render::render_features_nograd(fields, store, sample, res, res, vc, nullptr).alpha;
    std::vector<double> sum(res * res, 0.0);
    for (std::size_t e = 0; e < ne; ++e) {
      const auto m = render::render_entity_alpha_map(fields, store, sample, e, res, res, vc);
      for (std::size_t p = 0; p < res * res; ++p) sum[p] += m[p];
    }
    for (std::size_t p = 0; p < res * res; ++p) occlusion = std::max(occlusion, joint[p] - sum[p]);
  }
  const double float_tol = 1e-12;
  CheckResult r;
  r.passed = identity == 0 && permutation <= float_tol && additivity <= float_tol && occlusion <= float_tol;
  r.detail = fmt("%g scenes, identity %.3g, permutation %.3g", double(tol::composition_scenes), identity, permutation) +
             fmt(", additivity %.3g, occlusion excess %.3g", additivity, occlusion);
  return r;
}

CheckResult parameter_budget() {
  const Generator<float> gen(GeneratorConfig::standard());
  const double n = double(gen.parameter_count());
  CheckResult r;
  r.passed = std::abs(n - tol::parameter_target) <= tol::parameter_band * tol::parameter_target;
  r.detail = fmt("%.0f parameters, %+.1f%% vs 410k", n, 100 * (n - tol::parameter_target) / tol::parameter_target);
  return r;
}

CheckResult encoding_dimensions() {
  const fields::EncodingConfig enc;
  const std::vector<double> p{0.1, -0.2, 0.3};
  const auto x = fields::encode_points<double>(p, 1, enc, false);
  const auto d = fields::encode_points<double>(p, 1, enc, true);
  const auto gx = fields::positional_encode(p, 10).size();
  const auto gd = fields::positional_encode(p, 4).size();
  CheckResult r;
  r.passed = x.shape()[1] == 60 && d.shape()[1] == 24 && gx == 60 && gd == 24 && enc.dim_x() == 60 && enc.dim_d() == 24;
  r.detail = fmt("L_x %g, L_d %g", double(x.shape()[1]), double(d.shape()[1]));
  return r;
}

CheckResult closed_forms() {
  double worst = std::abs(gan::nonsat_term(0.0) + std::log(2.0));

  gan::Discriminator<double> d({4, 8, 2}, 2);
  ad::ParamStore<double> ds;
  Rng rng(41);
  d.init(ds, rng);
  auto& lw = ds.value("disc.linear.w");
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = i % 3 == 0 ? 1.0 : 0.0;
  for (std::size_t b : {1, 4}) {
    Tensor<double> images({b, 2, 2, 3});
    for (auto& v : images.values()) v = rng.uniform();
    G g;
    const auto w = d.bind(g, ds, false);
    const auto pass = d.forward(w, g.constant(images));
    // D sums the red channel of 4 pixels: the input gradient is a 4-vector of ones.
    worst = std::max(worst, std::abs(gan::r1_penalty(d, w, pass, 10.0).value()[0] - 10.0 * 4));
  }

  Tensor<double> shadow({1}, {0.0});
  const Tensor<double> live({1}, {2.5});
  for (int k = 1; k <= 500; ++k) gan::ema_update(shadow, live, 0.999);
  worst = std::max(worst, std::abs(shadow[0] - 2.5 * (1 - std::pow(0.999, 500))));

  ad::ParamEntry<double> e;
  e.name = "p";
  e.value = Tensor<double>({1}, {0.5});
  e.grad = Tensor<double>({1}, {-2.0});
  gan::rmsprop_step(e, 1e-4, 0.99, 1e-8);
  const double v = 0.01 * 4.0;
  worst = std::max({worst, std::abs(e.sq_avg[0] - v), std::abs(e.value[0] - (0.5 + 1e-4 * 2.0 / (std::sqrt(v) + 1e-8)))});

  CheckResult r;
  r.passed = worst <= tol::closed_form_abs;
  r.detail = fmt("max abs err %.3g", worst);
  return r;
}

template <typename T>
CheckResult resolution_generalization(const Generator<T>& gen, ad::ParamStore<T>& store,
                                      const scene::SceneSample& sample) {
  const auto& cfg = gen.config();
  const std::size_t up = cfg.image_res / cfg.feature_res;
  std::vector<Tensor<double>> alphas;
  std::string detail;
  bool ok = true;
  for (std::size_t res : {16, 64, 256}) {
    const auto img = gen.render(store, sample, res);
    const bool shapes = img.rgb.shape() == Shape{1, res * up, res * up, 3} && img.alpha.shape() == Shape{1, res, res, 1};
    const bool finite = img.rgb.all_finite() && img.alpha.all_finite();
    ok = ok && shapes && finite;
    Tensor<double> a({1, res, res, 1});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = double(img.alpha[i]);
    alphas.push_back(std::move(a));
  }
  const auto base = block_average(alphas[0], 16);
  double worst = 0;
  for (std::size_t k = 1; k < alphas.size(); ++k) {
    const auto avg = block_average(alphas[k], 16);
    double mae = 0;
    for (std::size_t i = 0; i < avg.size(); ++i) mae += std::abs(avg[i] - base[i]);
    mae /= double(avg.size());
    worst = std::max(worst, mae);
    if (!detail.empty()) detail += ", ";
    detail += fmt("%g^2 alpha MAE %.4f", double(alphas[k].shape()[1]), mae);
  }
  CheckResult r;
  r.passed = ok && worst <= tol::resolution_alpha_mae;
  r.detail = (ok ? "" : "bad shape or non-finite render, ") + detail;
  return r;
}

template CheckResult resolution_generalization<float>(const Generator<float>&, ad::ParamStore<float>&,
                                                      const scene::SceneSample&);
template CheckResult resolution_generalization<double>(const Generator<double>&, ad::ParamStore<double>&,
                                                       const scene::SceneSample&);

CheckResult resolution_generalization_random(std::uint64_t seed) {
  auto cfg = GeneratorConfig::small();
  cfg.volume.samples = 32;
  cfg.object_box_padding = 0.1;
  cfg.finalize();
  Generator<float> gen(cfg);
  ad::ParamStore<float> store;
  Rng rng(seed + 51);
  gen.init(store, rng);
  return resolution_generalization(gen, store, scene::sample_scene(cfg.sampling, rng));
}

namespace {

CheckResult within(CheckResult r, double limit) {
  if (r.seconds >= limit) {
    r.passed = false;
    r.detail += fmt(", over the %g s budget", limit);
  }
  return r;
}

}  // namespace

std::vector<CheckResult> run_fast_checks(std::uint64_t seed, bool with_resolution) {
  std::vector<CheckResult> out{
      within(timed("gradient integrity", [&] { return gradient_integrity(seed); }), tol::gradient_seconds),
      within(timed("volume rendering oracle", [&] { return volume_oracle(seed); }), tol::volume_seconds),
      within(timed("composition laws", [&] { return composition_laws(seed); }), tol::composition_seconds),
      timed("parameter budget", [] { return parameter_budget(); }),
      timed("encoding dimensionality", [] { return encoding_dimensions(); }),
      timed("loss and optimizer closed forms", [] { return closed_forms(); }),
  };
  if (with_resolution)
    out.push_back(timed("resolution generalization", [&] { return resolution_generalization_random(seed); }));
  return out;
}

}  // namespace nff::checks
