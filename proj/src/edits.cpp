#include "nff/edits.hpp"

#include <cmath>
#include <numbers>

#include "nff/error.hpp"

namespace nff::edit {

using nlohmann::json;

namespace {

template <typename... F>
struct Overloaded : F... {
  using F::operator()...;
};
template <typename... F>
Overloaded(F...) -> Overloaded<F...>;

template <typename V>
V field(const json& j, const char* key, const std::string& op) {
  if (!j.contains(key)) contract_fail("edit " + op, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    contract_fail("edit " + op, std::string("field '") + key + "' has the wrong type");
  }
}

double finite(double v, const char* key, const std::string& op) {
  if (!std::isfinite(v)) contract_fail("edit " + op, std::string("field '") + key + "' must be finite");
  return v;
}

std::size_t object_index(const json& j, const std::string& op) {
  const auto& v = j.contains("index") ? j.at("index") : json();
  if (!v.is_number_integer() || v.get<long long>() < 0) contract_fail("edit " + op, "'index' must be a non-negative integer");
  return v.get<std::size_t>();
}

std::optional<std::uint64_t> opt_seed(const json& j, const std::string& op) {
  if (!j.contains("seed")) return std::nullopt;
  if (!j.at("seed").is_number_unsigned() && !(j.at("seed").is_number_integer() && j.at("seed").get<long long>() >= 0))
    contract_fail("edit " + op, "'seed' must be a non-negative integer");
  return j.at("seed").get<std::uint64_t>();
}

template <typename E>
E code_edit(const json& j, const std::string& op) {
  E e;
  e.index = object_index(j, op);
  e.seed = opt_seed(j, op);
  if (j.contains("code")) {
    e.code = field<std::vector<double>>(j, "code", op);
    for (double v : e.code) finite(v, "code", op);
  }
  if (e.seed.has_value() == !e.code.empty()) contract_fail("edit " + op, "give exactly one of 'seed' or 'code'");
  return e;
}

std::vector<double> normal_code(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = rng.normal();
  return out;
}

std::size_t objects(const scene::SceneSample& s) { return s.entity_count() - 1; }

void check_index(std::size_t i, const scene::SceneSample& s, const std::string& op) {
  if (i >= objects(s)) {
    contract_fail("edit " + op, "object index " + std::to_string(i) + " out of range (scene has " +
                                    std::to_string(objects(s)) + " objects)");
  }
}

}  // namespace

SceneEdit parse_edit(const json& j) {
  if (!j.is_object()) contract_fail("edit", "an edit must be a JSON object");
  if (!j.contains("op") || !j.at("op").is_string()) contract_fail("edit", "missing string field 'op'");
  const auto op = j.at("op").get<std::string>();
  if (op == "rotate_object") return RotateObject{object_index(j, op), finite(field<double>(j, "yaw", op), "yaw", op)};
  if (op == "translate_object") {
    TranslateObject e{object_index(j, op), field<Vec3>(j, "delta", op)};
    for (double v : e.delta) finite(v, "delta", op);
    return e;
  }
  if (op == "set_appearance") return code_edit<SetAppearance>(j, op);
  if (op == "set_shape") return code_edit<SetShape>(j, op);
  if (op == "add_object") {
    AddObject e;
    try {
      if (j.contains("transform")) e.transform = j.at("transform").get<scene::AffineTransform>();
      if (j.contains("codes")) {
        e.codes = fields::LatentCodes{j.at("codes").at("z_shape").get<std::vector<double>>(),
                                      j.at("codes").at("z_app").get<std::vector<double>>()};
      }
    } catch (const json::exception&) {
      contract_fail("edit " + op, "malformed 'transform' or 'codes'");
    }
    if (e.transform) e.transform->validate();
    e.seed = opt_seed(j, op);
    return e;
  }
  if (op == "remove_object") return RemoveObject{object_index(j, op)};
  if (op == "set_camera") {
    SetCamera e;
    if (j.contains("elevation")) e.elevation = finite(field<double>(j, "elevation", op), "elevation", op);
    if (j.contains("azimuth")) e.azimuth = finite(field<double>(j, "azimuth", op), "azimuth", op);
    if (j.contains("radius")) e.radius = finite(field<double>(j, "radius", op), "radius", op);
    if (!e.elevation && !e.azimuth && !e.radius) contract_fail("edit " + op, "nothing to set");
    return e;
  }
  if (op == "set_resolution") {
    const auto& v = j.contains("resolution") ? j.at("resolution") : json();
    if (!v.is_number_integer() || v.get<long long>() < 1) contract_fail("edit " + op, "'resolution' must be a positive integer");
    return SetResolution{v.get<std::size_t>()};
  }
  contract_fail("edit", "unknown op '" + op + "'");
}

json to_json(const SceneEdit& e) {
  return std::visit(
      Overloaded{
          [](const RotateObject& r) { return json{{"op", "rotate_object"}, {"index", r.index}, {"yaw", r.yaw}}; },
          [](const TranslateObject& t) { return json{{"op", "translate_object"}, {"index", t.index}, {"delta", t.delta}}; },
          [](const SetAppearance& a) {
            json j{{"op", "set_appearance"}, {"index", a.index}};
            if (a.seed) j["seed"] = *a.seed;
            else j["code"] = a.code;
            return j;
          },
          [](const SetShape& a) {
            json j{{"op", "set_shape"}, {"index", a.index}};
            if (a.seed) j["seed"] = *a.seed;
            else j["code"] = a.code;
            return j;
          },
          [](const AddObject& a) {
            json j{{"op", "add_object"}};
            if (a.transform) j["transform"] = *a.transform;
            if (a.seed) j["seed"] = *a.seed;
            if (a.codes) j["codes"] = {{"z_shape", a.codes->z_shape}, {"z_app", a.codes->z_app}};
            return j;
          },
          [](const RemoveObject& r) { return json{{"op", "remove_object"}, {"index", r.index}}; },
          [](const SetCamera& c) {
            json j{{"op", "set_camera"}};
            if (c.elevation) j["elevation"] = *c.elevation;
            if (c.azimuth) j["azimuth"] = *c.azimuth;
            if (c.radius) j["radius"] = *c.radius;
            return j;
          },
          [](const SetResolution& r) { return json{{"op", "set_resolution"}, {"resolution", r.resolution}}; },
      },
      e);
}

json to_json(const SessionState& s) {
  return {{"checkpoint", s.checkpoint}, {"ema", s.ema}, {"scene", s.scene}, {"resolution", s.resolution},
          {"edits", s.edits}, {"objects", objects(s.scene)}};
}

SessionState session_from_json(const json& j) {
  SessionState s;
  try {
    s.checkpoint = j.value("checkpoint", std::string());
    s.ema = j.value("ema", true);
    s.scene = j.at("scene").get<scene::SceneSample>();
    s.resolution = j.value("resolution", std::size_t(16));
    s.edits = j.value("edits", std::uint64_t(0));
  } catch (const json::exception& e) {
    contract_fail("session", std::string("malformed state: ") + e.what());
  }
  return s;
}

SessionState apply_edit(const SessionState& in, const SceneEdit& e, const EditLimits& limits) {
  SessionState s = in;
  auto& sc = s.scene;
  std::visit(Overloaded{
                 [&](const RotateObject& r) {
                   check_index(r.index, sc, "rotate_object");
                   auto& t = sc.transforms[r.index];
                   t.rotation = matmul3(yaw_rotation(r.yaw), t.rotation);
                 },
                 [&](const TranslateObject& m) {
                   check_index(m.index, sc, "translate_object");
                   auto& t = sc.transforms[m.index];
                   t.translation = t.translation + m.delta;
                 },
                 [&](const SetAppearance& a) {
                   check_index(a.index, sc, "set_appearance");
                   auto code = a.seed ? normal_code(*a.seed, limits.latent_app) : a.code;
                   if (code.size() != limits.latent_app) contract_fail("edit set_appearance", "code has the wrong length");
                   sc.codes[a.index].z_app = std::move(code);
                 },
                 [&](const SetShape& a) {
                   check_index(a.index, sc, "set_shape");
                   auto code = a.seed ? normal_code(*a.seed, limits.latent_shape) : a.code;
                   if (code.size() != limits.latent_shape) contract_fail("edit set_shape", "code has the wrong length");
                   sc.codes[a.index].z_shape = std::move(code);
                 },
                 [&](const AddObject& a) {
                   if (objects(sc) + 1 > limits.max_objects) {
                     contract_fail("edit add_object", "scene already holds the maximum of " +
                                                          std::to_string(limits.max_objects) + " objects");
                   }
                   Rng rng(a.seed.value_or(s.edits + 1));
                   const auto t = a.transform ? *a.transform : scene::sample_object_transform(limits.sampling, rng);
                   auto codes = a.codes ? *a.codes
                                        : fields::sample_latents(1, limits.latent_shape, limits.latent_app, rng).front();
                   if (codes.z_shape.size() != limits.latent_shape || codes.z_app.size() != limits.latent_app) {
                     contract_fail("edit add_object", "codes have the wrong length");
                   }
                   const auto at = sc.transforms.begin() + std::ptrdiff_t(objects(sc));
                   sc.transforms.insert(at, t);
                   sc.codes.insert(sc.codes.begin() + std::ptrdiff_t(objects(sc) - 1), std::move(codes));
                 },
                 [&](const RemoveObject& r) {
                   check_index(r.index, sc, "remove_object");
                   if (objects(sc) == 1) contract_fail("edit remove_object", "a scene keeps at least one object");
                   sc.transforms.erase(sc.transforms.begin() + std::ptrdiff_t(r.index));
                   sc.codes.erase(sc.codes.begin() + std::ptrdiff_t(r.index));
                 },
                 [&](const SetCamera& c) {
                   if (c.elevation) {
                     if (std::abs(*c.elevation) >= std::numbers::pi / 2)
                       contract_fail("edit set_camera", "elevation must lie strictly between -pi/2 and pi/2");
                     sc.camera.elevation = *c.elevation;
                   }
                   if (c.azimuth) sc.camera.azimuth = *c.azimuth;
                   if (c.radius) {
                     if (!(*c.radius > 0)) contract_fail("edit set_camera", "radius must be positive");
                     sc.camera.radius = *c.radius;
                   }
                 },
                 [&](const SetResolution& r) {
                   if (r.resolution < 1 || r.resolution > limits.max_resolution)
                     contract_fail("edit set_resolution", "resolution outside [1, " + std::to_string(limits.max_resolution) + "]");
                   s.resolution = r.resolution;
                 },
             },
             e);
  sc.validate(limits.max_objects + 1);
  ++s.edits;
  return s;
}

namespace {

/// Splits a continuous edit into `frames` equal parts; discrete edits apply once, then hold.
std::vector<std::vector<SceneEdit>> split(const SceneEdit& e, std::size_t frames, const SessionState& state) {
  std::vector<std::vector<SceneEdit>> out(frames);
  const double n = double(frames);
  if (auto* r = std::get_if<RotateObject>(&e)) {
    for (auto& f : out) f.push_back(RotateObject{r->index, r->yaw / n});
  } else if (auto* t = std::get_if<TranslateObject>(&e)) {
    for (auto& f : out) f.push_back(TranslateObject{t->index, (1.0 / n) * t->delta});
  } else if (auto* c = std::get_if<SetCamera>(&e); c && !c->radius) {
    const auto& cam = state.scene.camera;
    for (std::size_t f = 0; f < frames; ++f) {
      const double w = double(f + 1) / n;
      SetCamera step;
      if (c->elevation) step.elevation = cam.elevation + w * (*c->elevation - cam.elevation);
      if (c->azimuth) step.azimuth = cam.azimuth + w * (*c->azimuth - cam.azimuth);
      out[f].push_back(step);
    }
  } else {
    out[0].push_back(e);
  }
  return out;
}

std::size_t frame_count(const json& j) {
  const auto& v = j.contains("frames") ? j.at("frames") : json(1);
  if (!v.is_number_integer() || v.get<long long>() < 1) contract_fail("script", "'frames' must be a positive integer");
  return v.get<std::size_t>();
}

}  // namespace

std::vector<std::vector<SceneEdit>> parse_script(const json& j, const SessionState& initial, const EditLimits& limits) {
  if (!j.is_array()) contract_fail("script", "a script is a JSON array");
  std::vector<std::vector<SceneEdit>> frames;
  SessionState state = initial;
  auto push = [&](const SceneEdit& e, std::size_t count) {
    for (auto& frame : split(e, count, state)) {
      for (const auto& part : frame) state = apply_edit(state, part, limits);
      frames.push_back(std::move(frame));
    }
  };
  for (std::size_t k = 0; k < j.size(); ++k) {
    const auto& item = j.at(k);
    try {
      if (!item.is_object()) contract_fail("script", "entry is not an object");
      const std::size_t count = frame_count(item);
      if (item.contains("edit")) {
        push(parse_edit(item.at("edit")), count);
        continue;
      }
      if (!item.contains("macro") || !item.at("macro").is_string()) contract_fail("script", "entry needs 'edit' or 'macro'");
      const auto macro = item.at("macro").get<std::string>();
      const std::size_t i = object_index(item, macro);
      check_index(i, state.scene, macro);
      if (macro == "rotate_360") {
        push(RotateObject{i, 2 * std::numbers::pi}, count);
      } else if (macro == "circle") {
        const auto& around = item.contains("around") ? item.at("around") : json();
        if (!around.is_number_integer() || around.get<long long>() < 0) contract_fail("circle", "'around' must be an object index");
        const auto jdx = around.get<std::size_t>();
        check_index(jdx, state.scene, macro);
        if (jdx == i) contract_fail("circle", "an object cannot circle itself");
        const Vec3 c = state.scene.transforms[jdx].translation;
        Vec3 p = state.scene.transforms[i].translation;
        const double radius = std::hypot(p[0] - c[0], p[1] - c[1]), start = std::atan2(p[1] - c[1], p[0] - c[0]);
        for (std::size_t f = 1; f <= count; ++f) {
          const double a = start + 2 * std::numbers::pi * double(f) / double(count);
          const Vec3 q{c[0] + radius * std::cos(a), c[1] + radius * std::sin(a), p[2]};
          push(TranslateObject{i, q - p}, 1);
          p = q;
        }
      } else if (macro == "sweep") {
        const auto axis = field<std::string>(item, "axis", macro);
        const double d = finite(field<double>(item, "distance", macro), "distance", macro);
        // depth follows the viewing direction projected on the ground, horizontal runs across it
        const Mat3 basis = state.scene.camera.basis();
        Vec3 dir;
        if (axis == "depth") dir = {basis[2], basis[5], 0};
        else if (axis == "horizontal") dir = {basis[0], basis[3], 0};
        else contract_fail("sweep", "axis must be 'depth' or 'horizontal'");
        push(TranslateObject{i, d * normalize(dir)}, count);
      } else {
        contract_fail("script", "unknown macro '" + macro + "'");
      }
    } catch (const ContractError& e) {
      throw ContractError("script entry " + std::to_string(k) + " (" + item.dump() + "): " + e.what());
    }
  }
  return frames;
}

}  // namespace nff::edit
