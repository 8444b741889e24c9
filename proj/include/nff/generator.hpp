#pragma once

// The full image generator: scene sample -> entity fields -> composition ->
// volume-rendered feature image -> neural renderer -> RGB.

#include <cstddef>
#include <optional>
#include <vector>

#include "json.hpp"
#include "nff/autodiff/graph.hpp"
#include "nff/autodiff/params.hpp"
#include "nff/fields.hpp"
#include "nff/neural_renderer.hpp"
#include "nff/scene.hpp"
#include "nff/volume.hpp"

namespace nff {

struct GeneratorConfig {
  fields::EncodingConfig encoding;
  fields::FieldConfig object;
  fields::FieldConfig background = fields::FieldConfig::background_for(fields::FieldConfig{});
  neural::RendererConfig renderer;
  render::VolumeConfig volume;
  scene::SamplingConfig sampling;
  std::size_t feature_res = 16;
  std::size_t image_res = 64;
  std::optional<double> object_box_padding;

  /// Full-size defaults at 64^2 output.
  static GeneratorConfig standard();
  /// Reduced model for CPU-scale training: M_f = 32, hidden 64.
  static GeneratorConfig small();

  /// Checks cross-field consistency and derives the renderer block count from the resolutions.
  void finalize();
  /// Draws the random Fourier matrices when that encoding is selected and none are stored.
  void prepare_encoding(Rng& rng);
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

template <typename T>
struct GeneratorOutput {
  ad::Var<T> rgb;                    // [1, H, W, 3]
  render::FeatureImage<T> features;  // [1, H_V, W_V, M_f] and alpha
};

template <typename T>
struct RenderedImage {
  Tensor<T> rgb;      // [1, H, W, 3]
  Tensor<T> feature;  // [1, H_V, W_V, M_f]
  Tensor<T> alpha;    // [1, H_V, W_V, 1]
};

template <typename T>
class Generator {
 public:
  explicit Generator(GeneratorConfig cfg);

  const GeneratorConfig& config() const { return cfg_; }
  const scene::SceneFields<T>& fields() const { return fields_; }
  const neural::NeuralRenderer<T>& renderer() const { return renderer_; }

  void init(ad::ParamStore<T>& store, Rng& rng) const;
  std::size_t parameter_count() const;
  std::size_t object_field_parameters() const { return fields_.object.parameter_count(); }
  std::size_t background_field_parameters() const { return fields_.background.parameter_count(); }

  /// Differentiable generation. `rng` drives stratified ray sampling (null = midpoints);
  /// `feature_res` = 0 uses the configured training resolution.
  GeneratorOutput<T> forward(ad::Graph<T>& g, ad::ParamStore<T>& store, const scene::SceneSample& sample,
                             bool trainable, Rng* rng, std::vector<scene::EntityLatents<T>> latents = {},
                             std::size_t feature_res = 0) const;

  /// Inference at any feature resolution, in bounded memory. Midpoint sampling when rng is null.
  /// `entities` restricts the scene to a subset (empty = all), e.g. background or objects only.
  RenderedImage<T> render(ad::ParamStore<T>& store, const scene::SceneSample& sample, std::size_t feature_res,
                          Rng* rng = nullptr, const std::vector<std::size_t>& entities = {}) const;

 private:
  GeneratorConfig cfg_;
  scene::SceneFields<T> fields_;
  neural::NeuralRenderer<T> renderer_;
};

extern template class Generator<float>;
extern template class Generator<double>;

}  // namespace nff
