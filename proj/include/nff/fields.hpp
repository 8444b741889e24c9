#pragma once

// Positional encodings and the conditional feature-field MLPs.
//
// Field layout (all weights live in a ParamStore under a prefix):
//   trunk.0   : [x_enc, z_s] -> hidden, ReLU   (z_s enters through its own weight block)
//   trunk.i   : hidden -> hidden, ReLU          i = 1 .. depth-1
//   density   : hidden -> 1, ReLU
//   feature   : [trunk, d_enc, z_a] -> M_f, linear
// Concatenation with the latent codes is realised as separate weight blocks whose
// products are summed, which is the same function and parameter count as a
// concatenated input but avoids materialising per-point copies of the codes.

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "nff/autodiff/graph.hpp"
#include "nff/autodiff/params.hpp"
#include "nff/rng.hpp"
#include "nff/tensor.hpp"

namespace nff::fields {

enum class EncodingMode { axis_aligned, random_fourier };

struct EncodingConfig {
  int octaves_x = 10;
  int octaves_d = 4;
  EncodingMode mode = EncodingMode::axis_aligned;
  double fourier_scale = 2.0;
  // [3 * octaves, 3] Gaussian matrices; drawn once by make_fourier_matrices() and persisted.
  Tensor<double> fourier_x;
  Tensor<double> fourier_d;

  std::size_t dim_x() const { return 2 * 3 * std::size_t(octaves_x); }
  std::size_t dim_d() const { return 2 * 3 * std::size_t(octaves_d); }
  void make_fourier_matrices(Rng& rng);
};

void to_json(nlohmann::json& j, const EncodingConfig& c);
void from_json(const nlohmann::json& j, EncodingConfig& c);

/// Per component t: sin(2^0 t pi), cos(2^0 t pi), ..., sin(2^(L-1) t pi), cos(2^(L-1) t pi).
std::vector<double> positional_encode(std::span<const double> v, int octaves);

/// (sin(2 pi B v), cos(2 pi B v)) with B of shape [m, dim(v)].
std::vector<double> random_fourier_encode(std::span<const double> v, const Tensor<double>& matrix);

/// Encodes `points` ([P, 3] row-major) into a [P, dim] tensor using either mode.
template <typename T>
Tensor<T> encode_points(std::span<const double> points, std::size_t count, const EncodingConfig& cfg, bool directions);

struct LatentCodes {
  std::vector<double> z_shape;
  std::vector<double> z_app;
  friend bool operator==(const LatentCodes&, const LatentCodes&) = default;
};

std::vector<LatentCodes> sample_latents(std::size_t n, std::size_t dim_shape, std::size_t dim_app, Rng& rng);

struct FieldConfig {
  int depth = 8;
  int hidden = 128;
  int latent_shape = 64;
  int latent_app = 64;
  int feature_dim = 128;

  static FieldConfig object_default() { return {}; }
  /// Half the layers and half the hidden width of `object`.
  static FieldConfig background_for(const FieldConfig& object);
};

void to_json(nlohmann::json& j, const FieldConfig& c);
void from_json(const nlohmann::json& j, FieldConfig& c);

template <typename T>
struct FieldWeights {
  ad::Var<T> trunk_wx, trunk_wz, trunk_b0;
  std::vector<ad::Var<T>> trunk_w, trunk_b;
  ad::Var<T> density_w, density_b;
  ad::Var<T> feature_wh, feature_wd, feature_wa, feature_b;
};

template <typename T>
struct FieldOutput {
  ad::Var<T> sigma;    // [P, 1], >= 0
  ad::Var<T> feature;  // [P, M_f]
};

template <typename T>
class FeatureField {
 public:
  FeatureField(std::string prefix, FieldConfig cfg, std::size_t dim_x, std::size_t dim_d);

  const FieldConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  std::size_t dim_x() const { return dim_x_; }
  std::size_t dim_d() const { return dim_d_; }

  /// Registers the weights. Trunk and feature layers use N(0, 2/fan_in); the density head is scaled by 0.1.
  void init(ad::ParamStore<T>& store, Rng& rng) const;

  /// Parameters of the shared trunk (input layer and hidden layers), counted from the layer sizes.
  std::size_t trunk_parameter_count() const;
  std::size_t parameter_count() const;

  FieldWeights<T> bind(ad::Graph<T>& g, ad::ParamStore<T>& store, bool trainable) const;

  /// x_enc [P, dim_x], d_enc [P, dim_d], z_shape [1, M_s], z_app [1, M_a].
  FieldOutput<T> forward(const FieldWeights<T>& w, ad::Var<T> x_enc, ad::Var<T> d_enc, ad::Var<T> z_shape,
                         ad::Var<T> z_app) const;

 private:
  std::string name(const std::string& leaf) const { return prefix_ + leaf; }

  std::string prefix_;
  FieldConfig cfg_;
  std::size_t dim_x_, dim_d_;
};

/// [1, n] row tensor from a latent vector.
template <typename T>
Tensor<T> latent_row(const std::vector<double>& z);

extern template class FeatureField<float>;
extern template class FeatureField<double>;

}  // namespace nff::fields
