#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "nff/data_synth.hpp"
#include "nff/error.hpp"

using namespace nff;
using namespace nff::data;

namespace {

scene::CameraPose front_camera() {
  scene::CameraPose cam;
  cam.elevation = 0.0;
  cam.azimuth = 0.0;
  return cam;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nff_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("ray intersections match closed forms") {
  Primitive sphere;
  sphere.center = {0, 0, 0};
  sphere.size = 0.5;
  Vec3 n;
  auto t = intersect(sphere, {3, 0, 0}, {-1, 0, 0}, &n);
  REQUIRE(t);
  CHECK(*t == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(n[0] == doctest::Approx(1.0));
  CHECK_FALSE(intersect(sphere, {3, 0.6, 0}, {-1, 0, 0}));
  CHECK_FALSE(intersect(sphere, {3, 0, 0}, {1, 0, 0}));

  Primitive cube;
  cube.kind = PrimitiveKind::cube;
  cube.size = 0.5;
  cube.yaw = std::numbers::pi / 4;
  t = intersect(cube, {3, 0, 0}, {-1, 0, 0}, &n);
  REQUIRE(t);
  // rotated 45 degrees about z: the nearest edge sits at x = 0.5 * sqrt(2)
  CHECK(*t == doctest::Approx(3 - 0.5 * std::sqrt(2.0)).epsilon(1e-9));
  CHECK(std::abs(norm(n) - 1) < 1e-12);
  CHECK_FALSE(intersect(cube, {3, 0, 0.6}, {-1, 0, 0}));
  CHECK(cube.footprint_radius() == doctest::Approx(0.5 * std::sqrt(2.0)));
}

TEST_CASE("an empty scene renders the flat background and no masks") {
  PrimitiveScene s;
  s.camera = front_camera();
  s.background = {0.2, 0.4, 0.6};
  const auto out = raytrace_scene(s, 16);
  CHECK(out.masks.empty());
  for (std::size_t p = 0; p < 16 * 16; ++p) {
    CHECK(out.rgb.pixels[p * 3 + 0] == io::quantize(0.2));
    CHECK(out.rgb.pixels[p * 3 + 1] == io::quantize(0.4));
    CHECK(out.rgb.pixels[p * 3 + 2] == io::quantize(0.6));
  }
}

TEST_CASE("a centred sphere lit from the camera is left-right symmetric") {
  PrimitiveScene s;
  s.camera = front_camera();
  Primitive p;
  p.center = {0, 0, 0.3};
  p.size = 0.3;
  p.color = {0.9, 0.3, 0.1};
  s.primitives = {p};
  s.light_dir = normalize(s.camera.position());
  const std::size_t r = 64;
  const auto out = raytrace_scene(s, r);
  double diff = 0, total = 0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double a = out.rgb.pixels[(i * r + j) * 3 + c], b = out.rgb.pixels[(i * r + (r - 1 - j)) * 3 + c];
        diff += std::abs(a - b), total += a;
      }
    }
  }
  CHECK(diff / total <= 0.02);
  std::size_t covered = 0;
  for (auto v : out.masks[0].pixels) covered += v == 255;
  CHECK(covered > 0);
}

TEST_CASE("masks are disjoint and cover exactly the non-background pixels") {
  auto cfg = SynthConfig::clevr_2345();
  cfg.background = {0.0, 0.0, 0.0};
  cfg.ambient = 0.5;  // every object pixel is brighter than the black background
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = sample_primitive_scene(cfg, rng);
    const auto out = raytrace_scene(s, 48);
    for (std::size_t p = 0; p < 48 * 48; ++p) {
      int owners = 0;
      for (const auto& m : out.masks) owners += m.pixels[p] == 255;
      const bool background = out.rgb.pixels[p * 3] == 0 && out.rgb.pixels[p * 3 + 1] == 0 && out.rgb.pixels[p * 3 + 2] == 0;
      CHECK(owners <= 1);
      CHECK((owners == 1) == !background);
    }
    // a visible mask is contained in the object's own silhouette
    for (std::size_t k = 0; k < s.primitives.size(); ++k) {
      const auto sil = silhouette(s.primitives[k], s.camera, 48);
      for (std::size_t p = 0; p < 48 * 48; ++p)
        if (out.masks[k].pixels[p]) CHECK(sil.pixels[p] == 255);
    }
  }
}

TEST_CASE("clevr-2 scenes hold two separated objects on the ground") {
  const auto cfg = SynthConfig::clevr_n(2);
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = sample_primitive_scene(cfg, rng);
    REQUIRE(s.primitives.size() == 2);
    const auto& a = s.primitives[0];
    const auto& b = s.primitives[1];
    CHECK(std::hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) >= a.footprint_radius() + b.footprint_radius());
    for (const auto& p : s.primitives) {
      CHECK(p.center[2] == p.size);
      CHECK(std::abs(p.center[0]) <= cfg.placement_range);
      CHECK(std::abs(p.center[0]) + p.footprint_radius() <= 1.0);
      CHECK(std::abs(p.center[1]) + p.footprint_radius() <= 1.0);
      CHECK(p.size >= cfg.size_min);
      CHECK(p.size <= cfg.size_max);
    }
  }
}

TEST_CASE("clevr-2345 object counts are uniform") {
  const auto cfg = SynthConfig::clevr_2345();
  Rng rng(13);
  std::map<std::size_t, int> counts;
  const int n = 4000;
  for (int i = 0; i < n; ++i) ++counts[sample_primitive_scene(cfg, rng).primitives.size()];
  double chi2 = 0;
  for (std::size_t k = 2; k <= 5; ++k) {
    const double e = n / 4.0;
    chi2 += (counts[k] - e) * (counts[k] - e) / e;
  }
  CHECK(counts.size() == 4);
  CHECK(chi2 < 11.345);  // 3 dof, p = 0.01
}

TEST_CASE("dataset generation is deterministic and the manifest records the config hash") {
  auto cfg = SynthConfig::clevr_n(2);
  cfg.resolution = 16;
  const auto dir_a = temp_dir("data_a"), dir_b = temp_dir("data_b");
  const auto ma = generate_dataset(cfg, 6, 5, dir_a);
  const auto mb = generate_dataset(cfg, 6, 5, dir_b);
  CHECK(ma == mb);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  CHECK(ma.at("config_hash") == hash);
  auto other = cfg;
  other.size_max = 0.35;
  CHECK(config_hash(other) != config_hash(cfg));

  const auto da = Dataset::load(dir_a / cfg.name), db = Dataset::load(dir_b / cfg.name);
  REQUIRE(da.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(da.raw(i).pixels == db.raw(i).pixels);
  CHECK(ma.at("items").at(0).at("masks").size() == 2);
  CHECK(std::filesystem::exists(dir_a / cfg.name / "masks" / "000000_1.png"));

  const auto c = generate_dataset(cfg, 6, 6, temp_dir("data_c"));
  CHECK(c.at("items") != ma.at("items"));

  const auto batch = da.batch<float>({0, 3, 5});
  CHECK(batch.shape() == Shape{3, 16, 16, 3});
  const auto vals = batch.values();
  CHECK(*std::min_element(vals.begin(), vals.end()) >= 0.0f);
  CHECK(*std::max_element(vals.begin(), vals.end()) <= 1.0f);
  CHECK(batch[0] == float(da.raw(0).pixels[0]) / 255.0f);

  CHECK_THROWS_AS(Dataset::load(temp_dir("data_missing")), IoError);
}

TEST_CASE("the iterator visits every image once per epoch and resumes exactly") {
  DatasetIterator it(10, 3, 21);
  std::vector<std::size_t> seen;
  for (int i = 0; i < 10; ++i) {
    const auto b = it.next();
    CHECK(b.size() == 3);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  for (int e = 0; e < 3; ++e) {
    std::set<std::size_t> epoch(seen.begin() + e * 10, seen.begin() + (e + 1) * 10);
    CHECK(epoch.size() == 10);
  }
  CHECK(!std::equal(seen.begin(), seen.begin() + 10, seen.begin() + 10));

  DatasetIterator a(10, 4, 3), b(10, 4, 3);
  for (int i = 0; i < 5; ++i) a.next();
  b.set_state(a.state());
  for (int i = 0; i < 5; ++i) CHECK(a.next() == b.next());
  CHECK_THROWS_AS(DatasetIterator(0, 1, 0), ContractError);
}

TEST_CASE("synth config json round trip and validation") {
  auto cfg = SynthConfig::clevr_2345();
  cfg.resolution = 32;
  nlohmann::json j = cfg;
  const auto back = j.get<SynthConfig>();
  CHECK(back.counts == cfg.counts);
  CHECK(back.resolution == 32);
  CHECK(config_hash(back) == config_hash(cfg));
  j["size_min"] = -1.0;
  CHECK_THROWS_AS(j.get<SynthConfig>(), ContractError);
}
