#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "doctest.h"
#include "nff/autodiff/finite_diff.hpp"
#include "nff/autodiff/ops.hpp"
#include "nff/training.hpp"

using namespace nff;
using namespace nff::gan;
using G = ad::Graph<double>;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nff_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

Tensor<double> random_images(Rng& rng, std::size_t b, std::size_t res) {
  Tensor<double> t({b, res, res, 3});
  for (auto& v : t.values()) v = rng.uniform();
  return t;
}

double r1_value(const Discriminator<double>& d, ad::ParamStore<double>& store, const Tensor<double>& images,
                double lambda) {
  G g;
  const auto w = d.bind(g, store, false);
  const auto pass = d.forward(w, g.constant(images));
  return r1_penalty(d, w, pass, lambda).value()[0];
}

GeneratorConfig tiny_generator(std::size_t feature_res, std::size_t image_res) {
  auto cfg = GeneratorConfig::small();
  cfg.object.hidden = 16;
  cfg.object.depth = 2;
  cfg.object.feature_dim = 8;
  cfg.object.latent_shape = cfg.object.latent_app = 4;
  cfg.background = fields::FieldConfig::background_for(cfg.object);
  cfg.sampling.latent_shape = cfg.sampling.latent_app = 4;
  cfg.volume.samples = 8;
  cfg.feature_res = feature_res;
  cfg.image_res = image_res;
  cfg.renderer.min_channels = 4;
  cfg.finalize();
  return cfg;
}

TrainConfig tiny_train(std::uint64_t seed = 0) {
  TrainConfig c;
  c.generator = tiny_generator(4, 8);
  c.discriminator = {4, 8, 4};
  c.batch = 2;
  c.seed = seed;
  c.precision = "f64";
  c.checkpoint_every = 0;
  return c;
}

data::Dataset tiny_dataset(std::size_t n = 6, std::size_t res = 8) {
  Rng rng(99);
  std::vector<io::Image8> images;
  for (std::size_t i = 0; i < n; ++i) {
    io::Image8 img;
    img.height = img.width = res;
    img.channels = 3;
    for (std::size_t k = 0; k < res * res * 3; ++k) img.pixels.push_back(std::uint8_t(rng.below(256)));
    images.push_back(std::move(img));
  }
  return data::Dataset::from_images(std::move(images));
}

}  // namespace

TEST_CASE("non-saturating term closed forms and asymptotics") {
  CHECK(std::abs(nonsat_term(0.0) + std::log(2.0)) <= 1e-12);
  const long double oracle = -(50.0L + std::log1p(std::exp(-50.0L)));
  CHECK(std::abs((nonsat_term(-50.0) - double(oracle)) / double(oracle)) <= 1e-12);
  CHECK(std::abs(nonsat_term(-1000.0) + 1000.0) <= 1e-12);
  CHECK(nonsat_term(50.0) <= 0.0);
  CHECK(std::abs(nonsat_term(50.0) + std::exp(-50.0)) <= 1e-30);
  CHECK(nonsat_term(800.0) == 0.0);
  for (double t : {-3.0, -0.5, 0.7, 4.0}) CHECK(std::abs(nonsat_term(t) + std::log1p(std::exp(-t))) <= 1e-15);
  // the graph losses use softplus(-t) = -f(t)
  G g;
  auto t = g.constant(Tensor<double>({3}, {-50.0, 0.0, 3.0}));
  const auto sp = ad::softplus(ad::neg(t)).value();
  CHECK(std::abs(sp[0] + nonsat_term(-50.0)) <= 1e-12);
  CHECK(std::abs(sp[1] + nonsat_term(0.0)) <= 1e-15);
  CHECK(std::abs(sp[2] + nonsat_term(3.0)) <= 1e-15);
}

TEST_CASE("R1 of a linear discriminator equals lambda times the squared norm of ones") {
  // 2x2 images, no conv stages: D(I) = sum of the red channel over 4 pixels.
  Discriminator<double> d({4, 8, 2}, 2);
  CHECK(d.stages() == 0);
  ad::ParamStore<double> store;
  Rng rng(1);
  d.init(store, rng);
  auto& w = store.value("disc.linear.w");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = i % 3 == 0 ? 1.0 : 0.0;
  for (std::size_t b : {1, 3}) CHECK(std::abs(r1_value(d, store, random_images(rng, b, 2), 10.0) - 40.0) <= 1e-12);
}

TEST_CASE("R1 vanishes exactly for a constant discriminator") {
  Discriminator<double> d({4, 8, 2}, 8);
  ad::ParamStore<double> store;
  Rng rng(2);
  d.init(store, rng);
  for (auto& e : store.entries()) e.value.fill(0.0);
  store.value("disc.linear.b")[0] = 3.0;
  CHECK(r1_value(d, store, random_images(rng, 2, 8), 10.0) == 0.0);
  // nonzero weights give a nonzero input-gradient and so a nonzero penalty
  ad::ParamStore<double> live;
  d.init(live, rng);
  CHECK(r1_value(d, live, random_images(rng, 2, 8), 10.0) > 0.0);
}

TEST_CASE("the explicit input-gradient graph equals reverse-mode input gradients") {
  Rng rng(3);
  for (std::size_t res : {4, 8, 16}) {
    Discriminator<double> d({3, 6, 2}, res);
    ad::ParamStore<double> store;
    d.init(store, rng);
    for (auto& e : store.entries())
      for (auto& v : e.value.values()) v = rng.uniform(-0.5, 0.5);
    const auto images = random_images(rng, 3, res);
    G g;
    const auto w = d.bind(g, store, false);
    auto x = g.leaf(images);
    const auto pass = d.forward(w, x);
    const auto explicit_grad = d.input_gradient(w, pass).value();
    g.backward(ad::sum_all(pass.logits));
    const auto grad = g.grad(x);
    REQUIRE(explicit_grad.shape() == grad.shape());
    CHECK(max_abs_diff(explicit_grad, grad) <= 1e-12);
  }
}

TEST_CASE("R1 parameter gradient matches finite differences on a two-stage discriminator") {
  Discriminator<double> d({2, 4, 2}, 8);
  CHECK(d.stages() == 2);
  ad::ParamStore<double> store;
  Rng rng(4);
  d.init(store, rng);
  for (auto& e : store.entries())
    for (auto& v : e.value.values()) v = rng.uniform(-0.6, 0.6);
  const auto images = random_images(rng, 2, 8);
  G g;
  const auto w = d.bind(g, store, true);
  const auto pass = d.forward(w, g.constant(images));
  g.backward(r1_penalty(d, w, pass, 10.0));
  std::size_t checked = 0;
  double worst = 0;
  for (auto& e : store.entries()) {
    auto values = e.value.values();
    std::vector<std::size_t> coords(values.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    const auto fd = ad::finite_difference_at([&] { return r1_value(d, store, images, 10.0); }, values, coords, 1e-6);
    for (std::size_t i = 0; i < coords.size(); ++i) {
      worst = std::max(worst, ad::relative_error(e.grad[i], fd[i], 1e-6));
      ++checked;
    }
  }
  CHECK(checked == d.parameter_count());
  CHECK(worst <= 1e-3);
}

TEST_CASE("RMSprop arithmetic") {
  ad::ParamEntry<double> e;
  e.name = "p";
  e.value = Tensor<double>({1}, {0.0});
  e.grad = Tensor<double>({1}, {1.0});
  rmsprop_step(e, 1e-4, 0.99, 1e-8);
  CHECK(std::abs(e.sq_avg[0] - 0.01) <= 1e-12);
  CHECK(std::abs(e.value[0] - (-1e-4 / (0.1 + 1e-8))) <= 1e-12);

  // zero gradient: value unchanged, accumulator decays
  e.grad[0] = 0.0;
  const double before = e.value[0];
  rmsprop_step(e, 1e-4, 0.99, 1e-8);
  CHECK(e.value[0] == before);
  CHECK(std::abs(e.sq_avg[0] - 0.0099) <= 1e-12);

  // constant gradient: the step approaches lr * g / (|g| + eps)
  ad::ParamEntry<double> c;
  c.name = "c";
  c.value = Tensor<double>({1}, {0.0});
  c.grad = Tensor<double>({1}, {0.3});
  double step = 0;
  for (int k = 0; k < 6000; ++k) {
    const double prev = c.value[0];
    rmsprop_step(c, 1e-3, 0.99, 1e-8);
    step = prev - c.value[0];
  }
  CHECK(std::abs(c.sq_avg[0] - 0.09) <= 1e-12);
  CHECK(std::abs(step - 1e-3 * 0.3 / (0.3 + 1e-8)) <= 1e-12);

  ad::ParamEntry<double> bad;
  bad.value = Tensor<double>({2});
  bad.grad = Tensor<double>({3});
  CHECK_THROWS_AS(rmsprop_step(bad, 1e-3, 0.99, 1e-8), ContractError);
}

TEST_CASE("EMA closed forms") {
  Tensor<double> shadow({1}, {0.0});
  const Tensor<double> live({1}, {1.0});
  ema_update(shadow, live, 0.999);
  CHECK(std::abs(shadow[0] - 0.001) <= 1e-12);

  const double c = 2.5;
  Tensor<double> s({1}, {0.0});
  const Tensor<double> target({1}, {c});
  for (int k = 1; k <= 1000; ++k) {
    ema_update(s, target, 0.999);
    if (k % 250 == 0) CHECK(std::abs(s[0] - c * (1 - std::pow(0.999, k))) <= 1e-12);
  }

  // arbitrary trajectory: shadow_K = d^K s_0 + sum_k (1 - d) d^(K-k) live_k
  Rng rng(5);
  const double d = 0.9;
  Tensor<double> sh({1}, {0.7});
  std::vector<double> traj;
  for (int k = 0; k < 50; ++k) {
    traj.push_back(rng.uniform(-1, 1));
    ema_update(sh, Tensor<double>({1}, {traj.back()}), d);
  }
  double expect = std::pow(d, 50) * 0.7;
  for (int k = 0; k < 50; ++k) expect += (1 - d) * std::pow(d, 49 - k) * traj[k];
  CHECK(std::abs(sh[0] - expect) <= 1e-12);
  CHECK_THROWS_AS(ema_update(sh, Tensor<double>({2}), d), ContractError);
}

TEST_CASE("train config json round trip and validation") {
  auto c = tiny_train(7);
  c.lr_g = 2.5e-4;
  nlohmann::json j = c;
  const auto back = j.get<TrainConfig>();
  CHECK(back.lr_g == 2.5e-4);
  CHECK(back.seed == 7);
  CHECK(back.generator.image_res == 8);
  CHECK(back.discriminator.base_channels == 4);
  const TrainConfig defaults;
  CHECK(defaults.batch == 32);
  CHECK(defaults.lr_d == 1e-4);
  CHECK(defaults.lr_g == 5e-4);
  CHECK(defaults.r1_weight == 10.0);
  CHECK(defaults.ema_decay == 0.999);
  CHECK(defaults.rms_smoothing == 0.99);
  CHECK(defaults.rms_eps == 1e-8);
  for (const char* key : {"batch", "lr_d", "ema_decay"}) {
    auto bad = j;
    bad[key] = 0;
    CHECK_THROWS_AS(bad.get<TrainConfig>(), ContractError);
  }
  auto bad = j;
  bad["precision"] = "f16";
  CHECK_THROWS_AS(bad.get<TrainConfig>(), ContractError);
}

TEST_CASE("each phase updates only its own network") {
  const auto data = tiny_dataset();
  Trainer<double> t(tiny_train(), data);
  const double g0 = t.generator_store().checksum(), d0 = t.discriminator_store().checksum();
  const auto real = data.batch<double>({0, 1});
  const auto dr = t.d_step(real);
  CHECK(t.generator_store().checksum() == g0);
  CHECK(t.discriminator_store().checksum() != d0);
  CHECK(dr.d_grad_norm > 0);
  CHECK(std::isfinite(dr.d_loss));
  CHECK(dr.r1 > 0);
  const double d1 = t.discriminator_store().checksum();
  const auto gr = t.g_step();
  CHECK(t.discriminator_store().checksum() == d1);
  CHECK(t.generator_store().checksum() != g0);
  CHECK(gr.g_grad_norm > 0);
  // EMA moved by (1 - decay) of the update
  for (const auto& e : t.generator_store().entries()) CHECK(e.shadow.shape() == e.value.shape());
}

TEST_CASE("the generator gradient survives a confident discriminator") {
  const auto data = tiny_dataset();
  auto cfg = tiny_train(1);
  cfg.r1_weight = 0;
  Trainer<double> t(cfg, data);
  t.discriminator_store().value("disc.linear.b")[0] = -40.0;
  Rng rng(6);
  const auto sample = scene::sample_scene(cfg.generator.sampling, rng);
  const auto img = t.generator().render(t.generator_store(), sample, 4);
  G g;
  const auto w = t.discriminator().bind(g, t.discriminator_store(), false);
  const double logit = t.discriminator().forward(w, g.constant(img.rgb)).logits.value()[0];
  CHECK(logit < -30.0);
  // d/dt softplus(-t) = -sigmoid(-t): magnitude ~1 here, while log(1 - sigmoid(t)) would give ~e^t
  const double slope = 1.0 / (1.0 + std::exp(logit));
  CHECK(slope > 0.999);
  const auto r = t.g_step();
  CHECK(r.g_grad_norm > 1e-6);
  CHECK(r.g_loss > 30.0);
}

TEST_CASE("end-to-end losses match finite differences on a 4x4 instance") {
  const auto gcfg = tiny_generator(2, 4);
  Generator<double> gen(gcfg);
  Discriminator<double> disc({2, 4, 2}, 4);
  ad::ParamStore<double> gs, ds;
  Rng rng(7);
  gen.init(gs, rng);
  disc.init(ds, rng);
  for (auto& e : ds.entries())
    for (auto& v : e.value.values()) v = rng.uniform(-0.5, 0.5);
  const auto sample = scene::sample_scene(gcfg.sampling, rng);
  const auto real = random_images(rng, 2, 4);

  auto g_loss = [&](G& g, bool train_g) {
    const auto out = gen.forward(g, gs, sample, train_g, nullptr);
    const auto w = disc.bind(g, ds, false);
    return ad::sum_all(ad::softplus(ad::neg(disc.forward(w, out.rgb).logits)));
  };
  auto d_loss = [&](G& g, bool train_d) {
    const auto fake = gen.render(gs, sample, 2).rgb;
    const auto w = disc.bind(g, ds, train_d);
    const auto rp = disc.forward(w, g.constant(real));
    const auto fp = disc.forward(w, g.constant(fake));
    auto l = ad::add(ad::mean_all(ad::softplus(ad::neg(rp.logits))), ad::mean_all(ad::softplus(fp.logits)));
    return ad::add(l, r1_penalty(disc, w, rp, 10.0));
  };

  {
    gs.zero_grad();
    G g;
    g.backward(g_loss(g, true));
    Rng pick(8);
    double worst = 0;
    for (int k = 0; k < 60; ++k) {
      auto& e = gs.at(pick.below(gs.size()));
      const std::size_t i = pick.below(e.value.size());
      const double analytic = e.grad[i];
      auto vals = e.value.values();
      const std::vector<std::size_t> coord{i};
      const auto fd = ad::finite_difference_at(
          [&] {
            G h;
            return g_loss(h, false).value()[0];
          },
          vals, coord, 1e-6);
      worst = std::max(worst, ad::relative_error(analytic, fd[0], 1e-6));
    }
    CHECK(worst <= 1e-4);
  }
  {
    ds.zero_grad();
    G g;
    g.backward(d_loss(g, true));
    double worst = 0;
    for (auto& e : ds.entries()) {
      auto vals = e.value.values();
      std::vector<std::size_t> coords(vals.size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
      const auto fd = ad::finite_difference_at(
          [&] {
            G h;
            return d_loss(h, false).value()[0];
          },
          vals, coords, 1e-6);
      for (std::size_t i = 0; i < coords.size(); ++i) worst = std::max(worst, ad::relative_error(e.grad[i], fd[i], 1e-6));
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("resuming from a checkpoint reproduces the next step at 64-bit") {
  const auto data = tiny_dataset();
  const auto dir = temp_dir("resume");
  std::filesystem::create_directories(dir);
  Trainer<double> a(tiny_train(3), data);
  for (int i = 0; i < 3; ++i) a.step();
  a.save_checkpoint(dir / "k.nsf");
  const auto next_a = a.step();

  auto b = Trainer<double>::resume(dir / "k.nsf", data);
  CHECK(b.iteration() == 3);
  const auto next_b = b.step();
  CHECK(std::abs(next_a.d_loss - next_b.d_loss) <= 1e-9);
  CHECK(std::abs(next_a.g_loss - next_b.g_loss) <= 1e-9);
  CHECK(std::abs(next_a.r1 - next_b.r1) <= 1e-9);
  CHECK(a.generator_store().checksum() == b.generator_store().checksum());
  CHECK(a.discriminator_store().checksum() == b.discriminator_store().checksum());
}

TEST_CASE("a training run writes metrics, checkpoints and sample grids") {
  const auto data = tiny_dataset();
  auto cfg = tiny_train(4);
  cfg.run_dir = temp_dir("run").string();
  cfg.checkpoint_every = 2;
  cfg.sample_every = 2;
  cfg.sample_count = 4;
  Trainer<double> t(cfg, data);
  const auto last = t.run(4);
  CHECK(last.iteration == 4);
  const std::filesystem::path dir(cfg.run_dir);
  std::ifstream csv(dir / "metrics.csv");
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 5);
  CHECK(std::filesystem::exists(dir / "checkpoints" / "ckpt_000002.nsf"));
  CHECK(std::filesystem::exists(dir / "latest.nsf"));
  CHECK(std::filesystem::exists(dir / "config.json"));
  const auto grid = io::read_png((dir / "samples" / "iter_000004.png").string());
  CHECK(grid.height == 16);
  CHECK(grid.width == 16);
}

TEST_CASE("losses stay finite over a short toy run") {
  const auto data = tiny_dataset(8);
  Trainer<double> t(tiny_train(0), data);
  for (int i = 0; i < 200; ++i) {
    const auto r = t.step();
    REQUIRE(std::isfinite(r.d_loss));
    REQUIRE(std::isfinite(r.g_loss));
  }
}

TEST_CASE("non-finite values abort training with a diagnostic dump") {
  const auto data = tiny_dataset();
  auto cfg = tiny_train(5);
  cfg.run_dir = temp_dir("abort").string();
  Trainer<double> t(cfg, data);
  t.discriminator_store().value("disc.linear.b")[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(t.step(), NumericError);
  CHECK(std::filesystem::exists(std::filesystem::path(cfg.run_dir) / "abort_000000.json"));
}

TEST_CASE("trainer rejects a dataset of the wrong resolution") {
  const auto data = tiny_dataset(4, 16);
  CHECK_THROWS_AS(Trainer<double>(tiny_train(), data), ContractError);
}
