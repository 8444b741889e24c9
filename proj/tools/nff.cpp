#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "nff/checks.hpp"
#include "nff/control.hpp"
#include "nff/data_synth.hpp"
#include "nff/model.hpp"
#include "nff/service.hpp"
#include "nff/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nff;

namespace {

// Bad input (config, script, paths) exits with this code; failed checks exit with 1.
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

int generate_data(const std::string& preset, const std::string& config, std::size_t count, std::uint64_t seed,
                  const fs::path& out) {
  data::SynthConfig cfg;
  try {
    if (!config.empty()) {
      cfg = read_json(config).get<data::SynthConfig>();
    } else if (preset == "clevr2345") {
      cfg = data::SynthConfig::clevr_2345();
    } else if (preset.rfind("clevr", 0) == 0 && preset.size() > 5) {
      cfg = data::SynthConfig::clevr_n(std::stoi(preset.substr(5)));
    } else {
      throw UsageError("unknown preset " + preset);
    }
    cfg.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  } catch (const std::invalid_argument&) {
    throw UsageError("unknown preset " + preset);
  }
  const auto manifest = data::generate_dataset(cfg, count, seed, out);
  std::printf("wrote %zu images to %s\n", count, (out / cfg.name).c_str());
  std::printf("config hash %s\n", manifest.at("config_hash").get<std::string>().c_str());
  return 0;
}

template <typename T>
int train_with(gan::TrainConfig cfg, const data::Dataset& dataset, const std::string& resume, bool override_config) {
  auto trainer = resume.empty() ? gan::Trainer<T>(cfg, dataset)
                                : gan::Trainer<T>::resume(resume, dataset,
                                                          override_config ? std::optional(cfg) : std::nullopt);
  const std::size_t total = trainer.config().iterations;
  while (trainer.iteration() < total) {
    const auto r = trainer.step();
    if (cfg.log_every && r.iteration % cfg.log_every == 0)
      std::printf("iteration %zu  d %.4f  g %.4f  r1 %.4f  %.2fs/step\n", r.iteration, r.d_loss, r.g_loss, r.r1,
                  r.seconds);
  }
  trainer.save_checkpoint(fs::path(trainer.config().run_dir) / "latest.nsf");
  trainer.save_checkpoint(fs::path(trainer.config().run_dir) / "final.nsf");
  std::printf("finished at iteration %zu, checkpoint %s\n", trainer.iteration(),
              (fs::path(trainer.config().run_dir) / "final.nsf").c_str());
  return 0;
}

int train(const std::string& config, const std::string& resume) {
  if (config.empty() && resume.empty()) throw UsageError("train needs --config or --resume");
  gan::TrainConfig cfg;
  if (!config.empty()) {
    try {
      cfg = read_json(config).get<gan::TrainConfig>();
      cfg.validate();
    } catch (const json::exception& e) {
      throw UsageError(config + ": " + e.what());
    } catch (const ContractError& e) {
      throw UsageError(config + ": " + e.what());
    }
  } else {
    cfg = ad::Checkpoint::load(resume).meta.at("config").get<gan::TrainConfig>();
  }
  if (!fs::exists(fs::path(cfg.dataset) / "manifest.json")) throw UsageError("dataset not found: " + cfg.dataset);
  const auto dataset = data::Dataset::load(cfg.dataset);
  if (cfg.precision == "f64") return train_with<double>(cfg, dataset, resume, !config.empty());
  return train_with<float>(cfg, dataset, resume, !config.empty());
}

int run_render(const std::string& checkpoint, const std::string& script, const fs::path& out, std::uint64_t seed,
               bool live, bool alpha, std::size_t resolution) {
  const auto model = checkpoint.empty() ? throw UsageError("render needs --checkpoint")
                                        : app::Model::load(checkpoint, live);
  auto state = model.initial_state(seed);
  if (resolution) state.resolution = resolution;
  std::vector<std::vector<edit::SceneEdit>> frames;
  if (!script.empty()) {
    try {
      frames = edit::parse_script(read_json(script), state, model.limits());
    } catch (const ContractError& e) {
      throw UsageError(std::string("invalid script: ") + e.what());
    }
  }
  fs::create_directories(out);
  std::vector<scene::SceneSample> scenes{state.scene};
  auto emit = [&](std::size_t f) {
    char name[64];
    std::snprintf(name, sizeof name, "frame_%04zu.png", f);
    write_file(out / name, model.render_png(state));
    if (alpha) {
      for (std::size_t e = 0; e < state.scene.entity_count(); ++e) {
        std::snprintf(name, sizeof name, "frame_%04zu_alpha_%zu.png", f, e);
        write_file(out / name, model.alpha_png(state, e));
      }
    }
  };
  emit(0);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const auto& e : frames[f]) state = edit::apply_edit(state, e, model.limits());
    emit(f + 1);
    scenes.push_back(state.scene);
  }
  if (alpha) {
    // At most eight columns, evenly spaced over the sequence.
    std::vector<scene::SceneSample> cols;
    const std::size_t n = std::min<std::size_t>(8, scenes.size());
    for (std::size_t k = 0; k < n; ++k) cols.push_back(scenes[n == 1 ? 0 : k * (scenes.size() - 1) / (n - 1)]);
    io::write_png((out / "alpha_layout.png").string(), model.alpha_layout(cols, state.resolution));
  }
  std::ofstream(out / "state.json") << edit::to_json(state).dump(2) << "\n";
  std::printf("rendered %zu frames to %s\n", frames.size() + 1, out.c_str());
  return 0;
}

int serve(const std::string& checkpoint, const std::string& address, unsigned short port, std::uint64_t seed,
          bool live) {
  if (checkpoint.empty()) throw UsageError("serve needs --checkpoint");
  auto model = std::make_shared<const app::Model>(app::Model::load(checkpoint, live));
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  app::ServiceOptions opts;
  opts.address = address;
  opts.port = port;
  opts.seed = seed;
  app::Service service(model, opts);
  const auto bound = service.start();
  std::printf("serving %s on http://%s:%u with %zu threads\n", model->id().c_str(), address.c_str(), bound,
              app::Service::thread_count(0));
  std::fflush(stdout);
  int sig = 0;
  sigwait(&signals, &sig);
  std::printf("signal %d, shutting down\n", sig);
  service.stop();
  return 0;
}

int check(std::uint64_t seed, const std::string& checkpoint) {
  bool ok = true;
  auto report = [&](const checks::CheckResult& r) {
    std::printf("%s\n", checks::format(r).c_str());
    std::fflush(stdout);
    ok = ok && r.passed;
  };
  for (const auto& r : checks::run_fast_checks(seed)) report(r);
  if (!checkpoint.empty()) {
    const auto model = app::Model::load(checkpoint);
    const auto state = model.initial_state(seed);
    report(checks::timed("yaw cycle", [&] { return app::yaw_cycle(model, state, 0, 8); }));
    report(checks::timed("translation locality",
                         [&] { return app::translation_locality(model, state, 0, {0.15, 0.0, 0.0}); }));
    report(checks::timed("checkpoint resolution generalization", [&] {
      return checks::resolution_generalization(model.generator(), model.store(), state.scene);
    }));
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compositional generative feature fields"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate-data", "Render a synthetic primitive-scene dataset");
  std::string preset = "clevr2", synth_config;
  std::size_t count = 2000;
  std::uint64_t seed = 0;
  std::string out = "data";
  gen->add_option("--preset", preset, "clevr<N> or clevr2345");
  gen->add_option("--config", synth_config, "Synth config JSON (overrides --preset)");
  gen->add_option("--count", count, "Number of images");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out, "Output root; the dataset lands in <out>/<name>");

  auto* tr = app.add_subcommand("train", "Train a generator");
  std::string config, resume;
  tr->add_option("--config", config, "Training config JSON");
  tr->add_option("--resume", resume, "Checkpoint to continue from");

  auto* rd = app.add_subcommand("render", "Render an edit script to a PNG sequence");
  std::string checkpoint, script, render_out = "frames";
  bool live = false, alpha = false;
  std::size_t resolution = 0;
  rd->add_option("--checkpoint", checkpoint)->required();
  rd->add_option("--script", script, "JSON edit script");
  rd->add_option("--out", render_out);
  rd->add_option("--seed", seed, "Initial scene seed");
  rd->add_option("--resolution", resolution, "Feature-image resolution (default from the state)");
  rd->add_flag("--live", live, "Use the raw weights instead of the EMA weights");
  rd->add_flag("--alpha", alpha, "Also write per-entity alpha maps and the alpha layout");

  auto* sv = app.add_subcommand("serve", "Run the HTTP/WebSocket control service");
  std::string address = "127.0.0.1";
  unsigned short port = 8080;
  sv->add_option("--checkpoint", checkpoint)->required();
  sv->add_option("--address", address);
  sv->add_option("--port", port);
  sv->add_option("--seed", seed, "Initial scene seed of every session");
  sv->add_flag("--live", live, "Use the raw weights instead of the EMA weights");

  auto* ck = app.add_subcommand("check", "Run the invariant and oracle checks");
  ck->add_option("--seed", seed);
  ck->add_option("--checkpoint", checkpoint, "Also check test-time control on this checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*gen) return generate_data(preset, synth_config, count, seed, out);
    if (*tr) return train(config, resume);
    if (*rd) return run_render(checkpoint, script, render_out, seed, live, alpha, resolution);
    if (*sv) return serve(checkpoint, address, port, seed, live);
    if (*ck) return check(seed, checkpoint);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsageError;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
