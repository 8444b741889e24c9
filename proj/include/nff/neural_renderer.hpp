#pragma once

// 2D upsampler from a low-resolution feature image to RGB.
//
// Each block upsamples the features 2x, applies a 3x3 conv and a leaky ReLU. With
// skip connections on, a 3x3 conv maps the features to RGB at every resolution and
// the result is added to the upsampled RGB of the previous resolution; with them
// off, one RGB conv runs at the output resolution. A sigmoid finishes the image.
//
// Block b outputs max(M_f >> b, min_channels) channels, so block 0 keeps M_f.

#include <cstddef>
#include <vector>

#include "json.hpp"
#include "nff/autodiff/graph.hpp"
#include "nff/autodiff/params.hpp"
#include "nff/rng.hpp"

namespace nff::neural {

enum class Upsample { nearest, bilinear };

struct RendererConfig {
  int feature_dim = 128;
  int blocks = 2;  // output resolution = input resolution * 2^blocks
  int min_channels = 16;
  bool skip_connections = true;
  bool final_sigmoid = true;
  Upsample rgb_upsample = Upsample::bilinear;
  Upsample feature_upsample = Upsample::nearest;

  /// log2(image / feature); throws unless the ratio is a power of two >= 1.
  static int blocks_for(std::size_t feature_res, std::size_t image_res);
  std::size_t block_channels(int b) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const RendererConfig& c);
void from_json(const nlohmann::json& j, RendererConfig& c);

template <typename T>
struct RendererWeights {
  std::vector<ad::Var<T>> block_w, block_b;
  std::vector<ad::Var<T>> rgb_w, rgb_b;
};

template <typename T>
class NeuralRenderer {
 public:
  explicit NeuralRenderer(RendererConfig cfg, std::string prefix = "renderer.");

  const RendererConfig& config() const { return cfg_; }
  void init(ad::ParamStore<T>& store, Rng& rng) const;
  std::size_t parameter_count() const;
  RendererWeights<T> bind(ad::Graph<T>& g, ad::ParamStore<T>& store, bool trainable) const;

  /// [N, H_V, W_V, M_f] -> [N, H_V 2^n, W_V 2^n, 3]
  ad::Var<T> forward(const RendererWeights<T>& w, ad::Var<T> features) const;

 private:
  std::size_t rgb_convs() const { return cfg_.skip_connections ? std::size_t(cfg_.blocks) + 1 : 1; }

  RendererConfig cfg_;
  std::string prefix_;
};

extern template class NeuralRenderer<float>;
extern template class NeuralRenderer<double>;

}  // namespace nff::neural
