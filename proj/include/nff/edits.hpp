#pragma once

// Test-time scene edits. The same JSON form drives CLI render scripts and the
// control service, so both apply edits through `apply_edit`.
//
//   {"op": "rotate_object",    "index": i, "yaw": radians}
//   {"op": "translate_object", "index": i, "delta": [x, y, z]}
//   {"op": "set_appearance",   "index": i, "seed": s}  or  "code": [...]
//   {"op": "set_shape",        "index": i, "seed": s}  or  "code": [...]
//   {"op": "add_object",       "transform": {...}, "seed": s}  (either may be omitted)
//   {"op": "remove_object",    "index": i}
//   {"op": "set_camera",       "elevation": radians, "azimuth": radians}
//   {"op": "set_resolution",   "resolution": feature resolution}
//
// Object indices count objects only; the background is never addressed by an index.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "nff/scene.hpp"

namespace nff::edit {

struct RotateObject {
  std::size_t index = 0;
  double yaw = 0;
};
struct TranslateObject {
  std::size_t index = 0;
  Vec3 delta{0, 0, 0};
};
struct SetAppearance {
  std::size_t index = 0;
  std::optional<std::uint64_t> seed;
  std::vector<double> code;
};
struct SetShape {
  std::size_t index = 0;
  std::optional<std::uint64_t> seed;
  std::vector<double> code;
};
struct AddObject {
  std::optional<scene::AffineTransform> transform;
  std::optional<std::uint64_t> seed;
  std::optional<fields::LatentCodes> codes;
};
struct RemoveObject {
  std::size_t index = 0;
};
struct SetCamera {
  std::optional<double> elevation, azimuth, radius;
};
struct SetResolution {
  std::size_t resolution = 16;
};

using SceneEdit = std::variant<RotateObject, TranslateObject, SetAppearance, SetShape, AddObject, RemoveObject,
                               SetCamera, SetResolution>;

/// Throws ContractError naming the offending field.
SceneEdit parse_edit(const nlohmann::json& j);
nlohmann::json to_json(const SceneEdit& e);

struct SessionState {
  std::string checkpoint;  // identifier of the loaded weights
  bool ema = true;
  scene::SceneSample scene;
  std::size_t resolution = 16;  // feature-image resolution; output is scaled by the renderer
  std::uint64_t edits = 0;      // number of edits applied
};

nlohmann::json to_json(const SessionState& s);
SessionState session_from_json(const nlohmann::json& j);

struct EditLimits {
  std::size_t max_objects = 16;
  std::size_t max_resolution = 512;
  std::size_t latent_shape = 64, latent_app = 64;
  scene::SamplingConfig sampling;  // used to draw transforms for add_object
};

/// Pure state transition; the input state is untouched and errors leave no partial edit.
SessionState apply_edit(const SessionState& s, const SceneEdit& e, const EditLimits& limits);

/// Expands a render script into frames. The script is a JSON array whose entries are
///   {"edit": SceneEdit, "frames": n}   continuous edits (rotation, translation, camera angles)
///                                       are split into n equal increments, one per frame;
///                                       other edits apply on the first frame and then hold
///   {"macro": "rotate_360", "index": i, "frames": F}
///   {"macro": "circle", "index": i, "around": j, "frames": F}   circular translation of i about j
///   {"macro": "sweep", "index": i, "axis": "depth" | "horizontal", "distance": d, "frames": F}
/// Element f of the result lists the edits applied between frame f and frame f + 1; frame 0 is
/// the initial state. Every edit is validated against the state it applies to.
std::vector<std::vector<SceneEdit>> parse_script(const nlohmann::json& j, const SessionState& initial,
                                                 const EditLimits& limits);

}  // namespace nff::edit
