#pragma once

// Test-time control properties of a model, checked on rendered images.

#include <cstddef>

#include "nff/checks.hpp"
#include "nff/model.hpp"

namespace nff::app {

namespace control_tol {
inline constexpr double yaw_cycle_mae = 1e-6;
inline constexpr double background_mae = 1e-3;
// An object's footprint: alpha above this, dilated by a few feature pixels to cover the
// neural renderer's receptive field.
inline constexpr double mask_threshold = 0.01;
inline constexpr std::size_t mask_dilation = 2;
}  // namespace control_tol

/// Mean absolute difference of two equally shaped tensors.
double mean_abs_diff(const Tensor<float>& a, const Tensor<float>& b);

/// Footprint of entity `index` in feature pixels, thresholded and dilated, as an [H_V, W_V] 0/1 mask.
std::vector<std::uint8_t> footprint(const Model& m, const scene::SceneSample& s, std::size_t index,
                                    std::size_t feature_res);

/// The rotate_360 macro over `frames` steps returns to the starting render.
checks::CheckResult yaw_cycle(const Model& m, const edit::SessionState& state, std::size_t index, int frames);

/// Translating object `index` by `delta` leaves pixels outside both footprints unchanged.
checks::CheckResult translation_locality(const Model& m, const edit::SessionState& state, std::size_t index,
                                         const Vec3& delta);

/// Pixel MAE outside the footprints of object `index` in two scenes (both renders at `feature_res`).
double masked_background_mae(const Model& m, const scene::SceneSample& before, const scene::SceneSample& after,
                             std::size_t index, std::size_t feature_res);

}  // namespace nff::app
