#include "nff/neural_renderer.hpp"

#include <algorithm>
#include <cmath>

#include "nff/autodiff/ops.hpp"

namespace nff::neural {

using ad::Var;

int RendererConfig::blocks_for(std::size_t feature_res, std::size_t image_res) {
  if (feature_res == 0 || image_res < feature_res || image_res % feature_res != 0) {
    contract_fail("neural_render", "image resolution " + std::to_string(image_res) +
                                       " is not a power-of-two multiple of feature resolution " +
                                       std::to_string(feature_res));
  }
  std::size_t ratio = image_res / feature_res;
  int n = 0;
  while (ratio > 1) {
    if (ratio % 2 != 0) contract_fail("neural_render", "resolution ratio is not a power of two");
    ratio /= 2;
    ++n;
  }
  return n;
}

std::size_t RendererConfig::block_channels(int b) const {
  return std::size_t(std::max(feature_dim >> b, min_channels));
}

void RendererConfig::validate() const {
  if (feature_dim < 1 || blocks < 0 || min_channels < 1) contract_fail("RendererConfig", "invalid dimensions");
}

namespace {

const char* upsample_name(Upsample u) { return u == Upsample::nearest ? "nearest" : "bilinear"; }

Upsample upsample_from(const std::string& s) {
  if (s == "nearest") return Upsample::nearest;
  if (s == "bilinear") return Upsample::bilinear;
  contract_fail("RendererConfig", "unknown upsampling mode '" + s + "'");
}

template <typename T>
Var<T> upsample(Var<T> x, Upsample mode) {
  return mode == Upsample::nearest ? ad::upsample_nearest2x(x) : ad::upsample_bilinear2x(x);
}

template <typename T>
Tensor<T> conv_init(Rng& rng, std::size_t cin, std::size_t cout, double gain) {
  Tensor<T> t({3, 3, cin, cout});
  const double stddev = gain * std::sqrt(2.0 / double(9 * cin));
  for (auto& v : t.values()) v = T(rng.normal() * stddev);
  return t;
}

}  // namespace

void to_json(nlohmann::json& j, const RendererConfig& c) {
  j = {{"feature_dim", c.feature_dim},
       {"blocks", c.blocks},
       {"min_channels", c.min_channels},
       {"skip_connections", c.skip_connections},
       {"final_sigmoid", c.final_sigmoid},
       {"rgb_upsample", upsample_name(c.rgb_upsample)},
       {"feature_upsample", upsample_name(c.feature_upsample)}};
}

void from_json(const nlohmann::json& j, RendererConfig& c) {
  RendererConfig d;
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.blocks = j.value("blocks", d.blocks);
  c.min_channels = j.value("min_channels", d.min_channels);
  c.skip_connections = j.value("skip_connections", d.skip_connections);
  c.final_sigmoid = j.value("final_sigmoid", d.final_sigmoid);
  c.rgb_upsample = upsample_from(j.value("rgb_upsample", std::string("bilinear")));
  c.feature_upsample = upsample_from(j.value("feature_upsample", std::string("nearest")));
  c.validate();
}

template <typename T>
NeuralRenderer<T>::NeuralRenderer(RendererConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) {
  cfg_.validate();
}

template <typename T>
void NeuralRenderer<T>::init(ad::ParamStore<T>& store, Rng& rng) const {
  std::size_t cin = std::size_t(cfg_.feature_dim);
  std::vector<std::size_t> rgb_in;
  if (cfg_.skip_connections) rgb_in.push_back(cin);
  for (int b = 0; b < cfg_.blocks; ++b) {
    const std::size_t cout = cfg_.block_channels(b);
    store.add(prefix_ + "block." + std::to_string(b) + ".w", conv_init<T>(rng, cin, cout, 1.0));
    store.add(prefix_ + "block." + std::to_string(b) + ".b", Tensor<T>({cout}));
    cin = cout;
    if (cfg_.skip_connections) rgb_in.push_back(cin);
  }
  if (!cfg_.skip_connections) rgb_in.push_back(cin);
  for (std::size_t k = 0; k < rgb_in.size(); ++k) {
    store.add(prefix_ + "rgb." + std::to_string(k) + ".w", conv_init<T>(rng, rgb_in[k], 3, 0.1));
    store.add(prefix_ + "rgb." + std::to_string(k) + ".b", Tensor<T>({3}));
  }
}

template <typename T>
std::size_t NeuralRenderer<T>::parameter_count() const {
  std::size_t n = 0, cin = std::size_t(cfg_.feature_dim);
  if (cfg_.skip_connections) n += 9 * cin * 3 + 3;
  for (int b = 0; b < cfg_.blocks; ++b) {
    const std::size_t cout = cfg_.block_channels(b);
    n += 9 * cin * cout + cout;
    cin = cout;
    if (cfg_.skip_connections) n += 9 * cin * 3 + 3;
  }
  if (!cfg_.skip_connections) n += 9 * cin * 3 + 3;
  return n;
}

template <typename T>
RendererWeights<T> NeuralRenderer<T>::bind(ad::Graph<T>& g, ad::ParamStore<T>& store, bool trainable) const {
  RendererWeights<T> w;
  for (int b = 0; b < cfg_.blocks; ++b) {
    w.block_w.push_back(g.param(store, prefix_ + "block." + std::to_string(b) + ".w", trainable));
    w.block_b.push_back(g.param(store, prefix_ + "block." + std::to_string(b) + ".b", trainable));
  }
  for (std::size_t k = 0; k < rgb_convs(); ++k) {
    w.rgb_w.push_back(g.param(store, prefix_ + "rgb." + std::to_string(k) + ".w", trainable));
    w.rgb_b.push_back(g.param(store, prefix_ + "rgb." + std::to_string(k) + ".b", trainable));
  }
  return w;
}

template <typename T>
Var<T> NeuralRenderer<T>::forward(const RendererWeights<T>& w, Var<T> features) const {
  const auto& s = features.shape();
  if (s.size() != 4 || s[3] != std::size_t(cfg_.feature_dim)) {
    contract_fail("neural_render", "feature image " + shape_str(s) + " does not have " +
                                       std::to_string(cfg_.feature_dim) + " channels");
  }
  Var<T> x = features;
  Var<T> rgb;
  if (cfg_.skip_connections) rgb = ad::conv2d(x, w.rgb_w[0], w.rgb_b[0]);
  for (int b = 0; b < cfg_.blocks; ++b) {
    x = ad::leaky_relu(ad::conv2d(upsample(x, cfg_.feature_upsample), w.block_w[b], w.block_b[b]));
    if (cfg_.skip_connections) {
      const auto k = std::size_t(b) + 1;
      rgb = ad::add(upsample(rgb, cfg_.rgb_upsample), ad::conv2d(x, w.rgb_w[k], w.rgb_b[k]));
    }
  }
  if (!cfg_.skip_connections) rgb = ad::conv2d(x, w.rgb_w[0], w.rgb_b[0]);
  return cfg_.final_sigmoid ? ad::sigmoid(rgb) : rgb;
}

template class NeuralRenderer<float>;
template class NeuralRenderer<double>;

}  // namespace nff::neural
