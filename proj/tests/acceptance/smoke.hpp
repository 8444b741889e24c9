#pragma once

// The toy training run shared by the training-dependent acceptance checks. The
// run is cached under a directory and resumed from its latest checkpoint, so it
// is trained once per build tree.

#include <filesystem>
#include <functional>
#include <string>

#include "nff/training.hpp"

namespace nff::acceptance {

struct SmokeRun {
  gan::TrainConfig config;
  std::filesystem::path dataset_dir;  // dataset/<name>
  std::filesystem::path run_dir;
  std::filesystem::path checkpoint;   // final weights
};

inline constexpr std::size_t kSmokeImages = 2000;
inline constexpr std::size_t kSmokeResolution = 64;
inline constexpr std::size_t kSmokeIterations = 5000;

gan::TrainConfig smoke_config(const std::filesystem::path& root);
data::SynthConfig smoke_data_config();

/// Generates the dataset and trains (or resumes) until the final checkpoint exists.
SmokeRun ensure_smoke_run(const std::filesystem::path& root, const std::function<void(const std::string&)>& log);

}  // namespace nff::acceptance
