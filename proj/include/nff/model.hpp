#pragma once

// A trained generator loaded for inference. Renders are deterministic (bin
// midpoints) and pure functions of (weights, scene, resolution).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "nff/edits.hpp"
#include "nff/generator.hpp"
#include "nff/image_io.hpp"

namespace nff::app {

class Model {
 public:
  /// EMA weights by default; `live` selects the raw trained weights.
  static Model load(const std::filesystem::path& checkpoint, bool live = false);
  /// Freshly initialized weights, for tests and dry runs.
  static Model random(GeneratorConfig cfg, std::uint64_t seed);

  const std::string& id() const { return id_; }
  bool ema() const { return ema_; }
  const GeneratorConfig& config() const { return gen_->config(); }
  const Generator<float>& generator() const { return *gen_; }
  ad::ParamStore<float>& store() const { return *store_; }

  edit::EditLimits limits() const;
  edit::SessionState initial_state(std::uint64_t seed) const;

  /// RGB [1, H, W, 3]; `entities` restricts the scene (empty = all).
  Tensor<float> render_rgb(const scene::SceneSample& s, std::size_t feature_res,
                           const std::vector<std::size_t>& entities = {}) const;
  /// Accumulated alpha [H_V, W_V] of entity i alone (objects first, background last).
  Tensor<float> render_alpha(const scene::SceneSample& s, std::size_t entity, std::size_t feature_res) const;

  std::string render_png(const edit::SessionState& state) const;
  std::string alpha_png(const edit::SessionState& state, std::size_t entity) const;

  /// One column per scene; rows: background only, objects only, colour-coded object alpha,
  /// full composite. Alpha maps are upsampled to the RGB size by pixel replication.
  io::Image8 alpha_layout(const std::vector<scene::SceneSample>& scenes, std::size_t feature_res) const;

 private:
  std::string id_;
  bool ema_ = true;
  std::shared_ptr<Generator<float>> gen_;
  std::shared_ptr<ad::ParamStore<float>> store_;
};

}  // namespace nff::app
