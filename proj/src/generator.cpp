#include "nff/generator.hpp"

namespace nff {

GeneratorConfig GeneratorConfig::standard() {
  GeneratorConfig c;
  c.finalize();
  return c;
}

GeneratorConfig GeneratorConfig::small() {
  GeneratorConfig c;
  c.object.hidden = 64;
  c.object.feature_dim = 32;
  c.background = fields::FieldConfig::background_for(c.object);
  c.renderer.feature_dim = 32;
  c.finalize();
  return c;
}

void GeneratorConfig::finalize() {
  if (object.feature_dim != background.feature_dim) {
    contract_fail("GeneratorConfig", "object and background feature dims differ");
  }
  if (object.latent_shape != sampling.latent_shape || object.latent_app != sampling.latent_app ||
      background.latent_shape != sampling.latent_shape || background.latent_app != sampling.latent_app) {
    contract_fail("GeneratorConfig", "field latent dims must match the sampled latent dims");
  }
  renderer.feature_dim = object.feature_dim;
  renderer.blocks = neural::RendererConfig::blocks_for(feature_res, image_res);
  volume.validate();
  sampling.validate();
}

void GeneratorConfig::prepare_encoding(Rng& rng) {
  if (encoding.mode == fields::EncodingMode::random_fourier && encoding.fourier_x.empty()) {
    encoding.make_fourier_matrices(rng);
  }
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"encoding", c.encoding}, {"object", c.object},   {"background", c.background},
       {"renderer", c.renderer}, {"volume", c.volume},   {"sampling", c.sampling},
       {"feature_res", c.feature_res}, {"image_res", c.image_res}};
  j["object_box_padding"] = c.object_box_padding ? nlohmann::json(*c.object_box_padding) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  GeneratorConfig d;
  c.encoding = j.value("encoding", d.encoding);
  c.object = j.value("object", d.object);
  c.background = j.contains("background") ? j.at("background").get<fields::FieldConfig>()
                                           : fields::FieldConfig::background_for(c.object);
  c.renderer = j.value("renderer", d.renderer);
  c.volume = j.value("volume", d.volume);
  c.sampling = j.value("sampling", d.sampling);
  c.feature_res = j.value("feature_res", d.feature_res);
  c.image_res = j.value("image_res", d.image_res);
  c.object_box_padding.reset();
  if (j.contains("object_box_padding") && !j.at("object_box_padding").is_null()) {
    c.object_box_padding = j.at("object_box_padding").get<double>();
  }
  c.finalize();
}

template <typename T>
Generator<T>::Generator(GeneratorConfig cfg)
    : cfg_((cfg.finalize(), std::move(cfg))),
      fields_(cfg_.encoding, cfg_.object, cfg_.background),
      renderer_(cfg_.renderer) {
  if (cfg_.encoding.mode == fields::EncodingMode::random_fourier && cfg_.encoding.fourier_x.empty()) {
    contract_fail("Generator", "random-fourier encoding needs its matrices (call prepare_encoding)");
  }
  fields_.object_box_padding = cfg_.object_box_padding;
}

template <typename T>
void Generator<T>::init(ad::ParamStore<T>& store, Rng& rng) const {
  fields_.object.init(store, rng);
  fields_.background.init(store, rng);
  renderer_.init(store, rng);
}

template <typename T>
std::size_t Generator<T>::parameter_count() const {
  return fields_.object.parameter_count() + fields_.background.parameter_count() + renderer_.parameter_count();
}

template <typename T>
GeneratorOutput<T> Generator<T>::forward(ad::Graph<T>& g, ad::ParamStore<T>& store, const scene::SceneSample& sample,
                                         bool trainable, Rng* rng, std::vector<scene::EntityLatents<T>> latents,
                                         std::size_t feature_res) const {
  const std::size_t res = feature_res ? feature_res : cfg_.feature_res;
  scene::SceneWeights<T> w{fields_.object.bind(g, store, trainable), fields_.background.bind(g, store, trainable)};
  auto feats = render::render_feature_image(g, fields_, w, sample, res, res, cfg_.volume, rng, std::move(latents));
  auto rw = renderer_.bind(g, store, trainable);
  return {renderer_.forward(rw, feats.feature), feats};
}

template <typename T>
RenderedImage<T> Generator<T>::render(ad::ParamStore<T>& store, const scene::SceneSample& sample,
                                      std::size_t feature_res, Rng* rng,
                                      const std::vector<std::size_t>& entities) const {
  auto cfg = cfg_.volume;
  cfg.stratified = rng != nullptr;
  auto feats = render::render_features_nograd(fields_, store, sample, feature_res, feature_res, cfg, rng, entities);
  ad::Graph<T> g;
  auto rw = renderer_.bind(g, store, false);
  auto rgb = renderer_.forward(rw, g.constant(feats.feature));
  return {rgb.value(), std::move(feats.feature), std::move(feats.alpha)};
}

template class Generator<float>;
template class Generator<double>;

}  // namespace nff
