#pragma once

// Adversarial training of the generator against the image discriminator:
// non-saturating loss with an R1 penalty on real images, RMSprop for both
// networks, and an exponential moving average of the generator weights.
//
// With f(t) = -log(1 + exp(-t)) and D(I) high for real images:
//   D step minimizes  -f(D(real)) - f(-D(fake)) + lambda * mean_b |grad_I D(real_b)|^2
//   G step minimizes  -f(D(G(z)))

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nff/autodiff/checkpoint.hpp"
#include "nff/autodiff/graph.hpp"
#include "nff/autodiff/params.hpp"
#include "nff/data_synth.hpp"
#include "nff/discriminator.hpp"
#include "nff/generator.hpp"
#include "nff/rng.hpp"

namespace nff::gan {

/// f(t) = -log(1 + exp(-t)), evaluated without overflow for any finite t.
double nonsat_term(double t);

/// lambda / B * sum of squared input-gradient entries, where B is the batch size.
template <typename T>
ad::Var<T> r1_penalty(const Discriminator<T>& d, const DiscriminatorWeights<T>& w, const DiscriminatorPass<T>& real_pass,
                      T lambda);

/// v <- a v + (1 - a) g^2;  theta <- theta - lr g / (sqrt(v) + eps). Zero-initializes v on first use.
template <typename T>
void rmsprop_step(ad::ParamEntry<T>& e, double lr, double smoothing, double eps);
template <typename T>
void rmsprop_step(ad::ParamStore<T>& store, double lr, double smoothing, double eps);

/// shadow <- decay shadow + (1 - decay) live.
template <typename T>
void ema_update(Tensor<T>& shadow, const Tensor<T>& live, double decay);
template <typename T>
void ema_update(ad::ParamStore<T>& store, double decay);

struct TrainConfig {
  GeneratorConfig generator = GeneratorConfig::standard();
  DiscriminatorConfig discriminator;
  std::size_t batch = 32;
  double lr_d = 1e-4;
  double lr_g = 5e-4;
  double r1_weight = 10.0;
  double ema_decay = 0.999;
  double rms_smoothing = 0.99;
  double rms_eps = 1e-8;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1000;  // 0 disables periodic checkpoints
  std::size_t log_every = 1;
  std::size_t sample_every = 0;  // 0 disables sample grids
  std::size_t sample_count = 16;
  std::string dataset;  // directory holding manifest.json
  std::string run_dir;
  std::string precision = "f32";  // "f32" or "f64"

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossReport {
  std::size_t iteration = 0;
  double d_loss = 0, g_loss = 0, r1 = 0;
  double d_real = 0, d_fake = 0;  // mean logits seen in the D step
  double d_grad_norm = 0, g_grad_norm = 0;
  double seconds = 0;
};

/// Images arranged in a near-square grid; every input is [1, H, W, 3] or [H, W, 3].
template <typename T>
io::Image8 image_grid(const std::vector<Tensor<T>>& images);

template <typename T>
class Trainer {
 public:
  /// Fresh run: initializes both networks from the seed.
  Trainer(TrainConfig cfg, const data::Dataset& dataset);

  /// Restores parameters, optimizer state, RNG and dataset position from a checkpoint.
  static Trainer resume(const std::filesystem::path& checkpoint, const data::Dataset& dataset,
                        std::optional<TrainConfig> override_cfg = std::nullopt);

  const TrainConfig& config() const { return cfg_; }
  const Generator<T>& generator() const { return gen_; }
  const Discriminator<T>& discriminator() const { return disc_; }
  ad::ParamStore<T>& generator_store() { return gstore_; }
  ad::ParamStore<T>& discriminator_store() { return dstore_; }
  std::size_t iteration() const { return iteration_; }
  Rng& rng() { return rng_; }

  /// One discriminator update on `real` [B, H, W, 3] against freshly generated, detached fakes.
  LossReport d_step(const Tensor<T>& real);
  /// One generator update followed by the EMA update.
  LossReport g_step();
  /// Next real batch, D step, G step; logs and checkpoints per the config.
  LossReport step();
  /// Runs until `iterations` is reached; returns the last report.
  LossReport run(std::size_t iterations);

  ad::Checkpoint checkpoint() const;
  void save_checkpoint(const std::filesystem::path& path) const;
  /// Renders `sample_count` fixed scenes with the EMA weights into one grid image.
  io::Image8 sample_grid(std::uint64_t seed) const;

 private:
  std::vector<scene::SceneSample> sample_scenes(std::size_t n);
  void log(const LossReport& r);
  [[noreturn]] void abort_with_dump(const std::string& phase, const std::string& what);

  TrainConfig cfg_;
  const data::Dataset* dataset_;
  Generator<T> gen_;
  Discriminator<T> disc_;
  ad::ParamStore<T> gstore_, dstore_;
  Rng rng_;
  data::DatasetIterator iter_;
  std::size_t iteration_ = 0;
  LossReport last_;
  std::ofstream metrics_;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace nff::gan
