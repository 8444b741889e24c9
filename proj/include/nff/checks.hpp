#pragma once

// Self-checks shared by `nff check` and the acceptance binary. Each returns a
// verdict with a one-line detail; none of them throws on a failed property.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "nff/autodiff/params.hpp"
#include "nff/generator.hpp"

namespace nff::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double metric = 0;  // the headline number compared against the tolerance
  double seconds = 0;
};

namespace tol {
inline constexpr double gradient_rel = 1e-4;
inline constexpr std::size_t gradient_params = 100;
inline constexpr double gradient_seconds = 120;
inline constexpr double volume_abs = 1e-12;
inline constexpr std::size_t volume_rays = 1000;
inline constexpr double volume_seconds = 10;
inline constexpr std::size_t composition_scenes = 100;
inline constexpr double composition_seconds = 30;
inline constexpr double parameter_target = 410000;
inline constexpr double parameter_band = 0.2;
inline constexpr double closed_form_abs = 1e-12;
inline constexpr double resolution_alpha_mae = 0.1;
}  // namespace tol

CheckResult gradient_integrity(std::uint64_t seed = 0);
CheckResult volume_oracle(std::uint64_t seed = 0);
CheckResult composition_laws(std::uint64_t seed = 0);
CheckResult parameter_budget();
CheckResult encoding_dimensions();
CheckResult closed_forms();

/// Renders `sample` at feature resolutions 16, 64 and 256; every render must be finite with the
/// expected shape, and the alpha maps block-averaged to 16^2 must agree within the tolerance.
template <typename T>
CheckResult resolution_generalization(const Generator<T>& gen, ad::ParamStore<T>& store,
                                      const scene::SceneSample& sample);
/// Same check on a freshly initialised reduced generator.
CheckResult resolution_generalization_random(std::uint64_t seed = 0);

/// Runs `fn`, timing it and converting exceptions into failures.
CheckResult timed(const std::string& name, const std::function<CheckResult()>& fn);

/// All checks that need no trained checkpoint; the resolution check uses a random model.
std::vector<CheckResult> run_fast_checks(std::uint64_t seed = 0, bool with_resolution = true);

/// "PASS name (detail, 1.23 s)".
std::string format(const CheckResult& r);

}  // namespace nff::checks
