#include <cmath>
#include <numbers>

#include "doctest.h"
#include "nff/edits.hpp"
#include "nff/error.hpp"

using namespace nff;
using namespace nff::edit;
using nlohmann::json;

namespace {

EditLimits limits() {
  EditLimits l;
  l.latent_shape = l.latent_app = 4;
  l.sampling.latent_shape = l.sampling.latent_app = 4;
  l.max_objects = 4;
  return l;
}

SessionState initial() {
  auto cfg = limits().sampling;
  cfg.object_counts = {2};
  Rng rng(1);
  SessionState s;
  s.checkpoint = "test";
  s.scene = scene::sample_scene(cfg, rng);
  return s;
}

SessionState apply_json(const SessionState& s, const json& j) { return apply_edit(s, parse_edit(j), limits()); }

}  // namespace

TEST_CASE("every edit op round-trips through json") {
  const std::vector<json> edits = {
      {{"op", "rotate_object"}, {"index", 1}, {"yaw", 0.5}},
      {{"op", "translate_object"}, {"index", 0}, {"delta", {0.1, -0.2, 0.0}}},
      {{"op", "set_appearance"}, {"index", 0}, {"seed", 7}},
      {{"op", "set_shape"}, {"index", 1}, {"code", {1.0, 2.0, 3.0, 4.0}}},
      {{"op", "add_object"}, {"seed", 3}},
      {{"op", "remove_object"}, {"index", 0}},
      {{"op", "set_camera"}, {"elevation", 0.4}, {"azimuth", 1.0}},
      {{"op", "set_resolution"}, {"resolution", 64}},
  };
  for (const auto& j : edits) CHECK(to_json(parse_edit(j)) == j);
}

TEST_CASE("malformed edits are rejected with the offending field") {
  auto message = [](const json& j) {
    try {
      parse_edit(j);
    } catch (const ContractError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message({{"op", "spin"}}).find("unknown op") != std::string::npos);
  CHECK(message({{"index", 0}}).find("'op'") != std::string::npos);
  CHECK(message({{"op", "rotate_object"}, {"index", 0}}).find("'yaw'") != std::string::npos);
  CHECK(message({{"op", "rotate_object"}, {"index", -1}, {"yaw", 1}}).find("'index'") != std::string::npos);
  CHECK(message({{"op", "translate_object"}, {"index", 0}, {"delta", "up"}}).find("'delta'") != std::string::npos);
  CHECK(message({{"op", "set_shape"}, {"index", 0}}).find("seed") != std::string::npos);
  CHECK(message({{"op", "set_resolution"}, {"resolution", 0}}).find("'resolution'") != std::string::npos);
  CHECK(message({{"op", "set_camera"}}).find("nothing") != std::string::npos);
  CHECK(message(json::array()).find("object") != std::string::npos);
}

TEST_CASE("edits act on the addressed object only") {
  const auto s0 = initial();
  const auto s1 = apply_json(s0, {{"op", "translate_object"}, {"index", 1}, {"delta", {0.1, 0.2, 0.0}}});
  CHECK(s1.scene.transforms[0] == s0.scene.transforms[0]);
  CHECK(s1.scene.transforms[2] == s0.scene.transforms[2]);
  CHECK(std::abs(s1.scene.transforms[1].translation[0] - s0.scene.transforms[1].translation[0] - 0.1) < 1e-15);
  CHECK(s1.edits == 1);
  CHECK(s0.edits == 0);

  const auto s2 = apply_json(s0, {{"op", "set_appearance"}, {"index", 0}, {"seed", 5}});
  CHECK(s2.scene.codes[0].z_shape == s0.scene.codes[0].z_shape);
  CHECK(s2.scene.codes[0].z_app != s0.scene.codes[0].z_app);
  CHECK(apply_json(s0, {{"op", "set_appearance"}, {"index", 0}, {"seed", 5}}).scene == s2.scene);

  const auto s3 = apply_json(s0, {{"op", "set_camera"}, {"elevation", 0.3}});
  CHECK(s3.scene.camera.elevation == 0.3);
  CHECK(s3.scene.camera.azimuth == s0.scene.camera.azimuth);
}

TEST_CASE("add and remove keep the background last") {
  const auto s0 = initial();
  const auto added = apply_json(s0, {{"op", "add_object"}, {"seed", 9}});
  CHECK(added.scene.entity_count() == 4);
  CHECK(added.scene.transforms.back() == s0.scene.transforms.back());
  CHECK(added.scene.codes.back() == s0.scene.codes.back());
  CHECK(added.scene.transforms[0] == s0.scene.transforms[0]);
  const auto removed = apply_json(added, {{"op", "remove_object"}, {"index", 2}});
  CHECK(removed.scene.transforms == s0.scene.transforms);
  CHECK(removed.scene.codes == s0.scene.codes);

  auto full = s0;
  full = apply_json(full, {{"op", "add_object"}, {"seed", 1}});
  full = apply_json(full, {{"op", "add_object"}, {"seed", 2}});
  CHECK_THROWS_AS(apply_json(full, {{"op", "add_object"}, {"seed", 3}}), ContractError);
  auto one = apply_json(s0, {{"op", "remove_object"}, {"index", 0}});
  CHECK_THROWS_AS(apply_json(one, {{"op", "remove_object"}, {"index", 0}}), ContractError);
}

TEST_CASE("invalid indices and values leave the state untouched") {
  const auto s0 = initial();
  CHECK_THROWS_AS(apply_json(s0, {{"op", "rotate_object"}, {"index", 2}, {"yaw", 1.0}}), ContractError);
  CHECK_THROWS_AS(apply_json(s0, {{"op", "set_shape"}, {"index", 0}, {"code", {1.0}}}), ContractError);
  CHECK_THROWS_AS(apply_json(s0, {{"op", "set_camera"}, {"elevation", 2.0}}), ContractError);
  CHECK_THROWS_AS(apply_json(s0, {{"op", "set_resolution"}, {"resolution", 100000}}), ContractError);
  CHECK(s0.edits == 0);
}

TEST_CASE("state after k edits equals folding the edits") {
  const auto s0 = initial();
  const std::vector<json> edits = {{{"op", "rotate_object"}, {"index", 0}, {"yaw", 0.3}},
                                   {{"op", "add_object"}, {"seed", 4}},
                                   {{"op", "translate_object"}, {"index", 2}, {"delta", {0.0, 0.1, 0.0}}},
                                   {{"op", "set_resolution"}, {"resolution", 32}}};
  auto a = s0;
  for (const auto& e : edits) a = apply_json(a, e);
  // through the serialized state, as a client would see it
  auto b = s0;
  for (const auto& e : edits) b = session_from_json(to_json(apply_json(b, e)));
  CHECK(a.scene == b.scene);
  CHECK(a.resolution == 32);
  CHECK(a.edits == 4);
  CHECK(to_json(a) == to_json(b));
}

TEST_CASE("rotate_360 returns to the starting transform") {
  const auto s0 = initial();
  const auto frames = parse_script(json::array({{{"macro", "rotate_360"}, {"index", 0}, {"frames", 12}}}), s0, limits());
  REQUIRE(frames.size() == 12);
  auto s = s0;
  for (const auto& f : frames)
    for (const auto& e : f) s = apply_edit(s, e, limits());
  for (int k = 0; k < 9; ++k) CHECK(std::abs(s.scene.transforms[0].rotation[k] - s0.scene.transforms[0].rotation[k]) < 1e-14);
}

TEST_CASE("circle macro keeps the distance to the centre object and closes the loop") {
  const auto s0 = initial();
  const auto c = s0.scene.transforms[1].translation;
  const auto p0 = s0.scene.transforms[0].translation;
  const double r0 = std::hypot(p0[0] - c[0], p0[1] - c[1]);
  const auto frames =
      parse_script(json::array({{{"macro", "circle"}, {"index", 0}, {"around", 1}, {"frames", 8}}}), s0, limits());
  REQUIRE(frames.size() == 8);
  auto s = s0;
  for (const auto& f : frames) {
    for (const auto& e : f) s = apply_edit(s, e, limits());
    const auto p = s.scene.transforms[0].translation;
    CHECK(std::abs(std::hypot(p[0] - c[0], p[1] - c[1]) - r0) < 1e-12);
    CHECK(p[2] == p0[2]);
  }
  for (int k = 0; k < 3; ++k) CHECK(std::abs(s.scene.transforms[0].translation[k] - p0[k]) < 1e-12);
}

TEST_CASE("scripts split continuous edits and hold discrete ones") {
  const auto s0 = initial();
  const json script = json::array({{{"edit", {{"op", "translate_object"}, {"index", 1}, {"delta", {0.4, 0.0, 0.0}}}}, {"frames", 4}},
                                   {{"edit", {{"op", "set_shape"}, {"index", 0}, {"seed", 2}}}, {"frames", 3}},
                                   {{"macro", "sweep"}, {"index", 0}, {"axis", "depth"}, {"distance", 0.5}, {"frames", 5}},
                                   {{"edit", {{"op", "set_camera"}, {"azimuth", 1.0}}}, {"frames", 2}}});
  const auto frames = parse_script(script, s0, limits());
  REQUIRE(frames.size() == 14);
  CHECK(frames[4].size() == 1);
  CHECK(frames[5].empty());
  CHECK(frames[6].empty());
  auto s = s0;
  for (const auto& f : frames)
    for (const auto& e : f) s = apply_edit(s, e, limits());
  CHECK(std::abs(s.scene.transforms[1].translation[0] - s0.scene.transforms[1].translation[0] - 0.4) < 1e-12);
  const auto d = s.scene.transforms[0].translation - s0.scene.transforms[0].translation;
  CHECK(std::abs(norm(d) - 0.5) < 1e-12);
  CHECK(d[2] == 0.0);
  CHECK(std::abs(s.scene.camera.azimuth - 1.0) < 1e-15);

  const json bad = json::array({{{"macro", "rotate_360"}, {"index", 0}, {"frames", 4}},
                                {{"edit", {{"op", "rotate_object"}, {"index", 5}, {"yaw", 1.0}}}}});
  try {
    parse_script(bad, s0, limits());
    FAIL("expected a ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("script entry 1") != std::string::npos);
  }
}
