#pragma once

// Image discriminator: stride-2 3x3 convs with leaky ReLU, channels doubling from
// `base_channels` up to `max_channels`, one stage per factor of two down to
// `final_res`, then a linear map to one logit per image. Higher logits mean "real".

#include <cstddef>
#include <vector>

#include "json.hpp"
#include "nff/autodiff/graph.hpp"
#include "nff/autodiff/params.hpp"
#include "nff/rng.hpp"

namespace nff::gan {

struct DiscriminatorConfig {
  int base_channels = 64;
  int max_channels = 512;
  std::size_t final_res = 4;

  void validate() const;
};

void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);

template <typename T>
struct DiscriminatorWeights {
  std::vector<ad::Var<T>> conv_w, conv_b;
  ad::Var<T> linear_w, linear_b;
};

template <typename T>
struct DiscriminatorPass {
  ad::Var<T> logits;  // [B, 1]
  Shape input_shape;
  std::vector<Shape> stage_shapes;  // output shape of each conv stage
  std::vector<Tensor<T>> slopes;    // leaky-ReLU derivative at each stage's pre-activation
};

template <typename T>
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig cfg, std::size_t image_res, std::string prefix = "disc.");

  const DiscriminatorConfig& config() const { return cfg_; }
  std::size_t stages() const { return stages_; }
  std::size_t stage_channels(std::size_t k) const;

  void init(ad::ParamStore<T>& store, Rng& rng) const;
  std::size_t parameter_count() const;
  DiscriminatorWeights<T> bind(ad::Graph<T>& g, ad::ParamStore<T>& store, bool trainable) const;

  /// images [B, H, W, 3] -> logits [B, 1]
  DiscriminatorPass<T> forward(const DiscriminatorWeights<T>& w, ad::Var<T> images) const;

  /// d(sum of logits)/d(images), recorded as ordinary graph operations on the weights so
  /// a penalty on it can be differentiated with respect to the weights by one backward pass.
  /// The leaky-ReLU slopes are piecewise constant, so treating them as constants is exact
  /// wherever the gradient exists.
  ad::Var<T> input_gradient(const DiscriminatorWeights<T>& w, const DiscriminatorPass<T>& pass) const;

 private:
  DiscriminatorConfig cfg_;
  std::size_t image_res_, stages_;
  std::string prefix_;
};

extern template class Discriminator<float>;
extern template class Discriminator<double>;

}  // namespace nff::gan
