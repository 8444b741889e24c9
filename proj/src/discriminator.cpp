#include "nff/discriminator.hpp"

#include <algorithm>
#include <cmath>

#include "nff/autodiff/ops.hpp"

namespace nff::gan {

using ad::Var;

void DiscriminatorConfig::validate() const {
  if (base_channels < 1 || max_channels < base_channels || final_res < 1) {
    contract_fail("DiscriminatorConfig", "invalid channel counts or final resolution");
  }
}

void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"base_channels", c.base_channels}, {"max_channels", c.max_channels}, {"final_res", c.final_res}};
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  DiscriminatorConfig d;
  c.base_channels = j.value("base_channels", d.base_channels);
  c.max_channels = j.value("max_channels", d.max_channels);
  c.final_res = j.value("final_res", d.final_res);
  c.validate();
}

template <typename T>
Discriminator<T>::Discriminator(DiscriminatorConfig cfg, std::size_t image_res, std::string prefix)
    : cfg_(cfg), image_res_(image_res), stages_(0), prefix_(std::move(prefix)) {
  cfg_.validate();
  if (image_res < cfg_.final_res || image_res % cfg_.final_res != 0) {
    contract_fail("Discriminator", "image resolution must be a power-of-two multiple of the final resolution");
  }
  for (std::size_t r = image_res; r > cfg_.final_res; r /= 2) {
    if (r % 2 != 0) contract_fail("Discriminator", "image resolution must halve evenly down to the final resolution");
    ++stages_;
  }
}

template <typename T>
std::size_t Discriminator<T>::stage_channels(std::size_t k) const {
  return std::size_t(std::min(cfg_.base_channels << k, cfg_.max_channels));
}

template <typename T>
void Discriminator<T>::init(ad::ParamStore<T>& store, Rng& rng) const {
  std::size_t cin = 3;
  for (std::size_t k = 0; k < stages_; ++k) {
    const std::size_t cout = stage_channels(k);
    Tensor<T> w({3, 3, cin, cout});
    const double stddev = std::sqrt(2.0 / double(9 * cin));
    for (auto& v : w.values()) v = T(rng.normal() * stddev);
    store.add(prefix_ + "conv." + std::to_string(k) + ".w", std::move(w));
    store.add(prefix_ + "conv." + std::to_string(k) + ".b", Tensor<T>({cout}));
    cin = cout;
  }
  const std::size_t flat = cfg_.final_res * cfg_.final_res * cin;
  Tensor<T> lw({flat, 1});
  for (auto& v : lw.values()) v = T(rng.normal() * std::sqrt(1.0 / double(flat)));
  store.add(prefix_ + "linear.w", std::move(lw));
  store.add(prefix_ + "linear.b", Tensor<T>({1}));
}

template <typename T>
std::size_t Discriminator<T>::parameter_count() const {
  std::size_t n = 0, cin = 3;
  for (std::size_t k = 0; k < stages_; ++k) {
    const std::size_t cout = stage_channels(k);
    n += 9 * cin * cout + cout;
    cin = cout;
  }
  return n + cfg_.final_res * cfg_.final_res * cin + 1;
}

template <typename T>
DiscriminatorWeights<T> Discriminator<T>::bind(ad::Graph<T>& g, ad::ParamStore<T>& store, bool trainable) const {
  DiscriminatorWeights<T> w;
  for (std::size_t k = 0; k < stages_; ++k) {
    w.conv_w.push_back(g.param(store, prefix_ + "conv." + std::to_string(k) + ".w", trainable));
    w.conv_b.push_back(g.param(store, prefix_ + "conv." + std::to_string(k) + ".b", trainable));
  }
  w.linear_w = g.param(store, prefix_ + "linear.w", trainable);
  w.linear_b = g.param(store, prefix_ + "linear.b", trainable);
  return w;
}

template <typename T>
DiscriminatorPass<T> Discriminator<T>::forward(const DiscriminatorWeights<T>& w, Var<T> images) const {
  const Shape s = images.shape();
  if (s.size() != 4 || s[1] != image_res_ || s[2] != image_res_ || s[3] != 3) {
    contract_fail("discriminator", "expected [B, " + std::to_string(image_res_) + ", " + std::to_string(image_res_) +
                                       ", 3] images, got " + shape_str(s));
  }
  DiscriminatorPass<T> pass;
  pass.input_shape = s;
  Var<T> h = images;
  const T slope = T(ad::kLeakySlope);
  for (std::size_t k = 0; k < stages_; ++k) {
    auto a = ad::conv2d(h, w.conv_w[k], w.conv_b[k], 2);
    Tensor<T> d(a.shape());
    const auto& av = a.value();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = av[i] > T(0) ? T(1) : slope;
    pass.slopes.push_back(std::move(d));
    pass.stage_shapes.push_back(a.shape());
    h = ad::leaky_relu(a);
  }
  const std::size_t b = s[0];
  auto flat = ad::reshape(h, Shape{b, h.size() / b});
  pass.logits = ad::bias_add(ad::matmul(flat, w.linear_w), w.linear_b);
  return pass;
}

template <typename T>
Var<T> Discriminator<T>::input_gradient(const DiscriminatorWeights<T>& w, const DiscriminatorPass<T>& pass) const {
  auto& g = w.linear_w.graph();
  const std::size_t b = pass.input_shape[0];
  Shape last = pass.stage_shapes.empty() ? pass.input_shape : pass.stage_shapes.back();
  Shape one = last;
  one[0] = 1;
  // d logit / d (last activation) is the linear weight, identical for every image.
  auto grad = ad::reshape(w.linear_w, one);
  if (b > 1) grad = ad::concat(std::vector<Var<T>>(b, grad), 0);
  for (std::size_t k = stages_; k-- > 0;) {
    grad = ad::mul(grad, g.constant(pass.slopes[k]));
    const Shape& in = k == 0 ? pass.input_shape : pass.stage_shapes[k - 1];
    grad = ad::conv2d_transpose(grad, w.conv_w[k], 2, in[1], in[2]);
  }
  return grad;
}

template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace nff::gan
