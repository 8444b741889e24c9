#include "nff/model.hpp"

#include <cstdio>

#include "nff/autodiff/checkpoint.hpp"
#include "nff/data_synth.hpp"
#include "nff/error.hpp"
#include "nff/training.hpp"

namespace nff::app {

namespace fs = std::filesystem;

Model Model::load(const fs::path& checkpoint, bool live) {
  const auto ck = ad::Checkpoint::load(checkpoint);
  if (!ck.meta.contains("config")) throw IoError("checkpoint " + checkpoint.string() + " has no training config");
  gan::TrainConfig cfg;
  try {
    cfg = ck.meta.at("config").get<gan::TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + checkpoint.string() + ": bad config: " + e.what());
  }
  Model m;
  m.gen_ = std::make_shared<Generator<float>>(cfg.generator);
  ad::ParamStore<float> store;
  Rng rng(0);
  m.gen_->init(store, rng);
  ck.get_store("G.", store);
  m.ema_ = !live && store.has_shadow();
  m.store_ = std::make_shared<ad::ParamStore<float>>(m.ema_ ? store.shadow_store() : std::move(store));
  char sum[32];
  std::snprintf(sum, sizeof sum, "%.10g", m.store_->checksum());
  m.id_ = checkpoint.filename().string() + "@" + std::to_string(ck.meta.value("iteration", 0)) + (m.ema_ ? ":ema:" : ":live:") + sum;
  return m;
}

Model Model::random(GeneratorConfig cfg, std::uint64_t seed) {
  Rng rng(seed);
  cfg.prepare_encoding(rng);
  Model m;
  m.gen_ = std::make_shared<Generator<float>>(cfg);
  m.store_ = std::make_shared<ad::ParamStore<float>>();
  m.gen_->init(*m.store_, rng);
  m.ema_ = false;
  m.id_ = "random:" + std::to_string(seed);
  return m;
}

edit::EditLimits Model::limits() const {
  edit::EditLimits l;
  l.latent_shape = std::size_t(config().sampling.latent_shape);
  l.latent_app = std::size_t(config().sampling.latent_app);
  l.sampling = config().sampling;
  return l;
}

edit::SessionState Model::initial_state(std::uint64_t seed) const {
  Rng rng(seed);
  edit::SessionState s;
  s.checkpoint = id_;
  s.ema = ema_;
  s.scene = scene::sample_scene(config().sampling, rng);
  s.resolution = config().feature_res;
  return s;
}

Tensor<float> Model::render_rgb(const scene::SceneSample& s, std::size_t feature_res,
                                const std::vector<std::size_t>& entities) const {
  return gen_->render(*store_, s, feature_res, nullptr, entities).rgb;
}

Tensor<float> Model::render_alpha(const scene::SceneSample& s, std::size_t entity, std::size_t feature_res) const {
  if (entity >= s.entity_count()) contract_fail("render_alpha", "entity index out of range");
  return render::render_entity_alpha_map(gen_->fields(), *store_, s, entity, feature_res, feature_res, config().volume);
}

std::string Model::render_png(const edit::SessionState& state) const {
  return io::encode_png(io::to_image(render_rgb(state.scene, state.resolution)));
}

std::string Model::alpha_png(const edit::SessionState& state, std::size_t entity) const {
  return io::encode_png(io::to_image(render_alpha(state.scene, entity, state.resolution)));
}

io::Image8 Model::alpha_layout(const std::vector<scene::SceneSample>& scenes, std::size_t feature_res) const {
  if (scenes.empty()) contract_fail("alpha_layout", "no scenes");
  std::vector<io::Image8> rows[4];
  for (const auto& s : scenes) {
    const std::size_t bg = s.background_index();
    std::vector<std::size_t> objects(bg);
    for (std::size_t i = 0; i < bg; ++i) objects[i] = i;
    rows[0].push_back(io::to_image(render_rgb(s, feature_res, {bg})));
    rows[1].push_back(io::to_image(render_rgb(s, feature_res, objects)));
    const auto full = io::to_image(render_rgb(s, feature_res));
    const std::size_t h = full.height, scale = h / feature_res;
    Tensor<double> coded({h, h, 3});
    for (std::size_t i = 0; i < bg; ++i) {
      const auto a = render_alpha(s, i, feature_res);
      const auto c = data::hsv_to_rgb(double(i) / double(bg) + 0.05, 0.9, 1.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < h; ++x)
          for (std::size_t k = 0; k < 3; ++k) coded[(y * h + x) * 3 + k] += double(a[(y / scale) * feature_res + x / scale]) * c[k];
    }
    rows[2].push_back(io::to_image(coded));
    rows[3].push_back(full);
  }
  const std::size_t h = rows[3][0].height, w = rows[3][0].width;
  io::Image8 out;
  out.height = 4 * h;
  out.width = scenes.size() * w;
  out.channels = 3;
  out.pixels.assign(out.height * out.width * 3, 0);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < scenes.size(); ++c)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(rows[r][c].pixels.data() + y * w * 3, w * 3, out.pixels.data() + ((r * h + y) * out.width + c * w) * 3);
  return out;
}

}  // namespace nff::app
