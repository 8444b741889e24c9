#include "nff/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "nff/autodiff/ops.hpp"
#include "nff/error.hpp"

namespace nff::gan {

namespace fs = std::filesystem;
using ad::Var;

double nonsat_term(double t) {
  // -log(1 + e^{-t}) = -(max(-t, 0) + log1p(e^{-|t|}))
  return -(std::max(-t, 0.0) + std::log1p(std::exp(-std::abs(t))));
}

template <typename T>
Var<T> r1_penalty(const Discriminator<T>& d, const DiscriminatorWeights<T>& w, const DiscriminatorPass<T>& real_pass,
                  T lambda) {
  const auto grad = d.input_gradient(w, real_pass);
  const T per_image = lambda / T(real_pass.input_shape[0]);
  return ad::scale(ad::sum_all(ad::square(grad)), per_image);
}

template <typename T>
void rmsprop_step(ad::ParamEntry<T>& e, double lr, double smoothing, double eps) {
  if (e.grad.empty()) e.grad = Tensor<T>(e.value.shape());
  if (e.grad.shape() != e.value.shape()) {
    contract_fail("rmsprop_step", "gradient shape " + shape_str(e.grad.shape()) + " does not match parameter '" +
                                      e.name + "' " + shape_str(e.value.shape()));
  }
  if (e.sq_avg.empty()) e.sq_avg = Tensor<T>(e.value.shape());
  for (std::size_t i = 0; i < e.value.size(); ++i) {
    const double g = double(e.grad[i]);
    const double v = smoothing * double(e.sq_avg[i]) + (1 - smoothing) * g * g;
    e.sq_avg[i] = T(v);
    e.value[i] = T(double(e.value[i]) - lr * g / (std::sqrt(v) + eps));
  }
}

template <typename T>
void rmsprop_step(ad::ParamStore<T>& store, double lr, double smoothing, double eps) {
  for (auto& e : store.entries()) rmsprop_step(e, lr, smoothing, eps);
}

template <typename T>
void ema_update(Tensor<T>& shadow, const Tensor<T>& live, double decay) {
  if (shadow.shape() != live.shape()) contract_fail("ema_update", "shadow and live shapes differ");
  for (std::size_t i = 0; i < live.size(); ++i) shadow[i] = T(decay * double(shadow[i]) + (1 - decay) * double(live[i]));
}

template <typename T>
void ema_update(ad::ParamStore<T>& store, double decay) {
  if (!store.has_shadow()) store.enable_shadow();
  for (auto& e : store.entries()) ema_update(e.shadow, e.value, decay);
}

void TrainConfig::validate() const {
  if (batch == 0) contract_fail("TrainConfig", "batch must be positive");
  if (!(lr_d > 0) || !(lr_g > 0)) contract_fail("TrainConfig", "learning rates must be positive");
  if (!(r1_weight >= 0)) contract_fail("TrainConfig", "r1_weight must be non-negative");
  if (!(ema_decay > 0 && ema_decay < 1)) contract_fail("TrainConfig", "ema_decay must lie in (0, 1)");
  if (!(rms_smoothing >= 0 && rms_smoothing < 1)) contract_fail("TrainConfig", "rms_smoothing must lie in [0, 1)");
  if (!(rms_eps > 0)) contract_fail("TrainConfig", "rms_eps must be positive");
  if (precision != "f32" && precision != "f64") contract_fail("TrainConfig", "precision must be f32 or f64");
  if (log_every == 0) contract_fail("TrainConfig", "log_every must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"generator", c.generator},
       {"discriminator", c.discriminator},
       {"batch", c.batch},
       {"lr_d", c.lr_d},
       {"lr_g", c.lr_g},
       {"r1_weight", c.r1_weight},
       {"ema_decay", c.ema_decay},
       {"rms_smoothing", c.rms_smoothing},
       {"rms_eps", c.rms_eps},
       {"iterations", c.iterations},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"log_every", c.log_every},
       {"sample_every", c.sample_every},
       {"sample_count", c.sample_count},
       {"dataset", c.dataset},
       {"run_dir", c.run_dir},
       {"precision", c.precision}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.generator = j.contains("generator") ? j.at("generator").get<GeneratorConfig>() : d.generator;
  c.discriminator = j.value("discriminator", d.discriminator);
  c.batch = j.value("batch", d.batch);
  c.lr_d = j.value("lr_d", d.lr_d);
  c.lr_g = j.value("lr_g", d.lr_g);
  c.r1_weight = j.value("r1_weight", d.r1_weight);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
  c.rms_smoothing = j.value("rms_smoothing", d.rms_smoothing);
  c.rms_eps = j.value("rms_eps", d.rms_eps);
  c.iterations = j.value("iterations", d.iterations);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.log_every = j.value("log_every", d.log_every);
  c.sample_every = j.value("sample_every", d.sample_every);
  c.sample_count = j.value("sample_count", d.sample_count);
  c.dataset = j.value("dataset", d.dataset);
  c.run_dir = j.value("run_dir", d.run_dir);
  c.precision = j.value("precision", d.precision);
  c.validate();
}

template <typename T>
io::Image8 image_grid(const std::vector<Tensor<T>>& images) {
  if (images.empty()) contract_fail("image_grid", "no images");
  const auto& s0 = images.front().shape();
  const std::size_t h = s0[s0.size() - 3], w = s0[s0.size() - 2];
  const std::size_t cols = std::size_t(std::ceil(std::sqrt(double(images.size()))));
  const std::size_t rows = (images.size() + cols - 1) / cols;
  io::Image8 grid;
  grid.height = rows * h;
  grid.width = cols * w;
  grid.channels = 3;
  grid.pixels.assign(grid.height * grid.width * 3, 0);
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto img = io::to_image(images[k]);
    if (img.height != h || img.width != w || img.channels != 3) contract_fail("image_grid", "images differ in shape");
    const std::size_t oy = (k / cols) * h, ox = (k % cols) * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w * 3; ++x) grid.pixels[((oy + y) * grid.width + ox) * 3 + x] = img.pixels[y * w * 3 + x];
  }
  return grid;
}

namespace {

TrainConfig prepared(TrainConfig cfg) {
  cfg.validate();
  Rng enc(cfg.seed ^ 0x5DEECE66Dull);
  cfg.generator.prepare_encoding(enc);
  cfg.generator.finalize();
  return cfg;
}

std::string iteration_name(std::size_t it) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", it);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(TrainConfig cfg, const data::Dataset& dataset)
    : cfg_(prepared(std::move(cfg))),
      dataset_(&dataset),
      gen_(cfg_.generator),
      disc_(cfg_.discriminator, cfg_.generator.image_res),
      rng_(cfg_.seed),
      iter_(dataset.size(), cfg_.batch, cfg_.seed) {
  if (dataset.resolution() != cfg_.generator.image_res) {
    contract_fail("Trainer", "dataset resolution " + std::to_string(dataset.resolution()) +
                                 " differs from the generator output resolution " +
                                 std::to_string(cfg_.generator.image_res));
  }
  gen_.init(gstore_, rng_);
  disc_.init(dstore_, rng_);
  gstore_.enable_shadow();
  if (!cfg_.run_dir.empty()) {
    std::error_code ec;
    fs::create_directories(cfg_.run_dir, ec);
    if (ec) throw IoError("Trainer: cannot create run directory " + cfg_.run_dir + ": " + ec.message());
    std::ofstream(fs::path(cfg_.run_dir) / "config.json") << nlohmann::json(cfg_).dump(2) << '\n';
    const auto path = fs::path(cfg_.run_dir) / "metrics.csv";
    const bool fresh = !fs::exists(path);
    metrics_.open(path, std::ios::app);
    if (!metrics_) throw IoError("Trainer: cannot open " + path.string());
    if (fresh) metrics_ << "iteration,d_loss,g_loss,r1,d_real,d_fake,d_grad_norm,g_grad_norm,seconds\n";
  }
}

template <typename T>
Trainer<T> Trainer<T>::resume(const fs::path& checkpoint, const data::Dataset& dataset,
                              std::optional<TrainConfig> override_cfg) {
  const auto ck = ad::Checkpoint::load(checkpoint);
  TrainConfig cfg;
  try {
    cfg = override_cfg ? *override_cfg : ck.meta.at("config").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("Trainer::resume: checkpoint has no usable config: ") + e.what());
  }
  if (override_cfg) cfg.generator.encoding = ck.meta.at("config").at("generator").at("encoding").get<fields::EncodingConfig>();
  Trainer t(std::move(cfg), dataset);
  ck.get_store("G.", t.gstore_);
  ck.get_store("D.", t.dstore_);
  t.rng_.set_state(ck.meta.at("rng").get<std::string>());
  t.iter_.set_state(ck.meta.at("data_iterator"));
  t.iteration_ = ck.meta.at("iteration").get<std::size_t>();
  return t;
}

template <typename T>
std::vector<scene::SceneSample> Trainer<T>::sample_scenes(std::size_t n) {
  std::vector<scene::SceneSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(scene::sample_scene(cfg_.generator.sampling, rng_));
  return out;
}

template <typename T>
LossReport Trainer<T>::d_step(const Tensor<T>& real) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t b = real.shape().at(0);
  LossReport r;
  r.iteration = iteration_;
  try {
    const auto scenes = sample_scenes(b);
    const std::size_t res = cfg_.generator.image_res, per = res * res * 3;
    Tensor<T> fake({b, res, res, 3});
    for (std::size_t i = 0; i < b; ++i) {
      const auto img = gen_.render(gstore_, scenes[i], cfg_.generator.feature_res, &rng_);
      std::copy(img.rgb.values().begin(), img.rgb.values().end(), fake.values().begin() + i * per);
    }
    dstore_.zero_grad();
    ad::Graph<T> g;
    const auto w = disc_.bind(g, dstore_, true);
    const auto rp = disc_.forward(w, g.constant(real));
    const auto fp = disc_.forward(w, g.constant(std::move(fake)));
    auto loss = ad::add(ad::mean_all(ad::softplus(ad::neg(rp.logits))), ad::mean_all(ad::softplus(fp.logits)));
    if (cfg_.r1_weight > 0) {
      const auto r1 = r1_penalty(disc_, w, rp, T(cfg_.r1_weight));
      r.r1 = double(r1.value()[0]);
      loss = ad::add(loss, r1);
    }
    r.d_loss = double(loss.value()[0]);
    for (T v : rp.logits.value().values()) r.d_real += double(v) / double(b);
    for (T v : fp.logits.value().values()) r.d_fake += double(v) / double(b);
    if (!std::isfinite(r.d_loss)) throw NumericError("non-finite discriminator loss");
    g.backward(loss);
    r.d_grad_norm = dstore_.grad_norm();
    if (!std::isfinite(r.d_grad_norm)) throw NumericError("non-finite discriminator gradient");
    rmsprop_step(dstore_, cfg_.lr_d, cfg_.rms_smoothing, cfg_.rms_eps);
  } catch (const NumericError& e) {
    abort_with_dump("discriminator", e.what());
  }
  r.seconds = seconds_since(t0);
  return r;
}

template <typename T>
LossReport Trainer<T>::g_step() {
  const auto t0 = std::chrono::steady_clock::now();
  LossReport r;
  r.iteration = iteration_;
  try {
    const auto scenes = sample_scenes(cfg_.batch);
    gstore_.zero_grad();
    const T inv_b = T(1) / T(cfg_.batch);
    for (const auto& s : scenes) {
      ad::Graph<T> g;
      const auto out = gen_.forward(g, gstore_, s, true, &rng_);
      const auto w = disc_.bind(g, dstore_, false);
      const auto pass = disc_.forward(w, out.rgb);
      const auto loss = ad::scale(ad::sum_all(ad::softplus(ad::neg(pass.logits))), inv_b);
      r.g_loss += double(loss.value()[0]);
      g.backward(loss);
    }
    if (!std::isfinite(r.g_loss)) throw NumericError("non-finite generator loss");
    r.g_grad_norm = gstore_.grad_norm();
    if (!std::isfinite(r.g_grad_norm)) throw NumericError("non-finite generator gradient");
    rmsprop_step(gstore_, cfg_.lr_g, cfg_.rms_smoothing, cfg_.rms_eps);
    ema_update(gstore_, cfg_.ema_decay);
  } catch (const NumericError& e) {
    abort_with_dump("generator", e.what());
  }
  r.seconds = seconds_since(t0);
  return r;
}

template <typename T>
LossReport Trainer<T>::step() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto real = dataset_->batch<T>(iter_.next());
  auto r = d_step(real);
  const auto gr = g_step();
  r.g_loss = gr.g_loss;
  r.g_grad_norm = gr.g_grad_norm;
  ++iteration_;
  r.iteration = iteration_;
  r.seconds = seconds_since(t0);
  last_ = r;
  log(r);
  if (!cfg_.run_dir.empty()) {
    const fs::path dir(cfg_.run_dir);
    if (cfg_.checkpoint_every && iteration_ % cfg_.checkpoint_every == 0) {
      fs::create_directories(dir / "checkpoints");
      save_checkpoint(dir / "checkpoints" / ("ckpt_" + iteration_name(iteration_) + ".nsf"));
      save_checkpoint(dir / "latest.nsf");
    }
    if (cfg_.sample_every && iteration_ % cfg_.sample_every == 0) {
      fs::create_directories(dir / "samples");
      io::write_png((dir / "samples" / ("iter_" + iteration_name(iteration_) + ".png")).string(),
                    sample_grid(cfg_.seed + 1));
    }
  }
  return r;
}

template <typename T>
LossReport Trainer<T>::run(std::size_t iterations) {
  while (iteration_ < iterations) step();
  if (!cfg_.run_dir.empty()) save_checkpoint(fs::path(cfg_.run_dir) / "latest.nsf");
  return last_;
}

template <typename T>
void Trainer<T>::log(const LossReport& r) {
  if (!metrics_.is_open() || r.iteration % cfg_.log_every != 0) return;
  char line[512];
  std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.4f\n", r.iteration, r.d_loss, r.g_loss,
                r.r1, r.d_real, r.d_fake, r.d_grad_norm, r.g_grad_norm, r.seconds);
  metrics_ << line << std::flush;
}

template <typename T>
ad::Checkpoint Trainer<T>::checkpoint() const {
  ad::Checkpoint ck;
  ck.put_store("G.", gstore_);
  ck.put_store("D.", dstore_);
  ck.meta = {{"iteration", iteration_},
             {"rng", rng_.state()},
             {"data_iterator", iter_.state()},
             {"config", cfg_},
             {"precision", sizeof(T) == 8 ? "f64" : "f32"}};
  return ck;
}

template <typename T>
void Trainer<T>::save_checkpoint(const fs::path& path) const {
  checkpoint().save(path);
}

template <typename T>
io::Image8 Trainer<T>::sample_grid(std::uint64_t seed) const {
  Rng r(seed);
  auto store = gstore_.has_shadow() ? gstore_.shadow_store() : gstore_;
  std::vector<Tensor<T>> images;
  for (std::size_t i = 0; i < cfg_.sample_count; ++i) {
    const auto s = scene::sample_scene(cfg_.generator.sampling, r);
    images.push_back(gen_.render(store, s, cfg_.generator.feature_res).rgb);
  }
  return image_grid(images);
}

template <typename T>
void Trainer<T>::abort_with_dump(const std::string& phase, const std::string& what) {
  nlohmann::json dump = {{"iteration", iteration_},
                         {"phase", phase},
                         {"error", what},
                         {"rng", rng_.state()},
                         {"data_iterator", iter_.state()},
                         {"generator_checksum", gstore_.checksum()},
                         {"discriminator_checksum", dstore_.checksum()},
                         {"generator_grad_norm", gstore_.grad_norm()},
                         {"discriminator_grad_norm", dstore_.grad_norm()},
                         {"last_report",
                          {{"iteration", last_.iteration},
                           {"d_loss", last_.d_loss},
                           {"g_loss", last_.g_loss},
                           {"r1", last_.r1}}}};
  const fs::path dir = cfg_.run_dir.empty() ? fs::temp_directory_path() : fs::path(cfg_.run_dir);
  const fs::path path = dir / ("abort_" + iteration_name(iteration_) + ".json");
  std::ofstream(path) << dump.dump(2) << '\n';
  throw NumericError("training aborted in the " + phase + " step at iteration " + std::to_string(iteration_) + ": " +
                     what + " (diagnostics in " + path.string() + ")");
}

template Var<float> r1_penalty(const Discriminator<float>&, const DiscriminatorWeights<float>&,
                               const DiscriminatorPass<float>&, float);
template Var<double> r1_penalty(const Discriminator<double>&, const DiscriminatorWeights<double>&,
                                const DiscriminatorPass<double>&, double);
template void rmsprop_step(ad::ParamEntry<float>&, double, double, double);
template void rmsprop_step(ad::ParamEntry<double>&, double, double, double);
template void rmsprop_step(ad::ParamStore<float>&, double, double, double);
template void rmsprop_step(ad::ParamStore<double>&, double, double, double);
template void ema_update(Tensor<float>&, const Tensor<float>&, double);
template void ema_update(Tensor<double>&, const Tensor<double>&, double);
template void ema_update(ad::ParamStore<float>&, double);
template void ema_update(ad::ParamStore<double>&, double);
template io::Image8 image_grid(const std::vector<Tensor<float>>&);
template io::Image8 image_grid(const std::vector<Tensor<double>>&);
template class Trainer<float>;
template class Trainer<double>;

}  // namespace nff::gan
