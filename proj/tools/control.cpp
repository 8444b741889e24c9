#include "nff/control.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace nff::app {

namespace {

std::string fmt(const char* f, double a, double b = 0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

}  // namespace

double mean_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) contract_fail("mean_abs_diff", "shapes differ");
  double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(double(a[i]) - double(b[i]));
  return a.size() ? sum / double(a.size()) : 0.0;
}

std::vector<std::uint8_t> footprint(const Model& m, const scene::SceneSample& s, std::size_t index,
                                    std::size_t feature_res) {
  const auto alpha = m.render_alpha(s, index, feature_res);
  const std::size_t n = feature_res;
  std::vector<std::uint8_t> mask(n * n, 0);
  for (std::size_t i = 0; i < n * n; ++i) mask[i] = alpha[i] > control_tol::mask_threshold;
  const int r = int(control_tol::mask_dilation);
  std::vector<std::uint8_t> out(n * n, 0);
  for (int y = 0; y < int(n); ++y)
    for (int x = 0; x < int(n); ++x) {
      if (!mask[std::size_t(y) * n + std::size_t(x)]) continue;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && xx >= 0 && yy < int(n) && xx < int(n)) out[std::size_t(yy) * n + std::size_t(xx)] = 1;
        }
    }
  return out;
}

double masked_background_mae(const Model& m, const scene::SceneSample& before, const scene::SceneSample& after,
                             std::size_t index, std::size_t feature_res) {
  const auto a = m.render_rgb(before, feature_res);
  const auto b = m.render_rgb(after, feature_res);
  auto mask = footprint(m, before, index, feature_res);
  const auto moved = footprint(m, after, index, feature_res);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] |= moved[i];
  const std::size_t h = a.shape()[1], w = a.shape()[2], up = h / feature_res;
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (mask[(y / up) * feature_res + x / up]) continue;
      for (std::size_t c = 0; c < 3; ++c) sum += std::abs(double(a[(y * w + x) * 3 + c]) - double(b[(y * w + x) * 3 + c]));
      count += 3;
    }
  return count ? sum / double(count) : 0.0;
}

checks::CheckResult yaw_cycle(const Model& m, const edit::SessionState& state, std::size_t index, int frames) {
  const nlohmann::json script = nlohmann::json::array({{{"macro", "rotate_360"}, {"index", index}, {"frames", frames}}});
  auto s = state;
  for (const auto& frame : edit::parse_script(script, state, m.limits()))
    for (const auto& e : frame) s = edit::apply_edit(s, e, m.limits());
  const double mae = mean_abs_diff(m.render_rgb(state.scene, state.resolution), m.render_rgb(s.scene, s.resolution));
  checks::CheckResult r;
  r.passed = mae <= control_tol::yaw_cycle_mae;
  r.metric = mae;
  r.detail = fmt("%g frames, pixel MAE %.3g", frames, mae);
  return r;
}

checks::CheckResult translation_locality(const Model& m, const edit::SessionState& state, std::size_t index,
                                         const Vec3& delta) {
  const auto moved = edit::apply_edit(state, edit::TranslateObject{index, delta}, m.limits());
  const auto changed = mean_abs_diff(m.render_rgb(state.scene, state.resolution),
                                     m.render_rgb(moved.scene, moved.resolution));
  const double mae = masked_background_mae(m, state.scene, moved.scene, index, state.resolution);
  checks::CheckResult r;
  r.passed = mae <= control_tol::background_mae;
  r.metric = mae;
  r.detail = fmt("masked background MAE %.3g, whole-image MAE %.3g", mae, changed);
  return r;
}

}  // namespace nff::app
