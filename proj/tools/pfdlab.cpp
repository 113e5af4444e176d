#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "pfd/experiment.hpp"
#include "pfd/toml.hpp"

namespace {

// Exit codes: 0 success, 2 config/validation failure, 3 divergence.
constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDiverged = 3;

pfd::ExperimentConfig load_config(const std::string& path, long seed_override,
                                  const std::string& out_dir_override) {
  pfd::ExperimentConfig config = pfd::ExperimentConfig::load(path);
  if (seed_override >= 0) config.seed = static_cast<std::uint64_t>(seed_override);
  if (!out_dir_override.empty()) config.out_dir = out_dir_override;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score-distillation laboratory: ring-target experiments and reports"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  long seed = -1;

  auto* run = app.add_subcommand("run", "Run the configured methods and emit reports");
  run->add_option("config", config_path, "TOML experiment config")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out-dir", out_dir, "Override the output directory");

  auto* ablate = app.add_subcommand("ablate-cfg", "Sweep guidance-scale pairs with PFD");
  ablate->add_option("config", config_path, "TOML experiment config")->required();
  ablate->add_option("--seed", seed, "Override the config seed");
  ablate->add_option("--out-dir", out_dir, "Override the output directory");

  std::string snapshot_path, svg_path, rings_config;
  double bound = 4.0;
  auto* plot = app.add_subcommand("plot", "Render a snapshot CSV as an SVG scatter plot");
  plot->add_option("snapshot", snapshot_path, "Snapshot CSV (tau,particle,x0,x1)")->required();
  plot->add_option("out", svg_path, "Output SVG path")->required();
  plot->add_option("--config", rings_config, "Config supplying ring outlines");
  plot->add_option("--bound", bound, "Half-width of the square view window");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed() || ablate->parsed()) {
      const pfd::ExperimentConfig config = load_config(config_path, seed, out_dir);
      for (const auto& warning : pfd::lint_cfg_signs(config.config_for(pfd::DistillMethod::PFD)))
        std::fprintf(stderr, "warning: %s\n", warning.c_str());
      const pfd::RunManifest manifest =
          run->parsed() ? pfd::run_experiment(config) : pfd::run_cfg_ablation(config);
      if (manifest.failed) {
        std::fprintf(stderr, "error: %s\n", manifest.failure.c_str());
        return kDiverged;
      }
      std::printf("manifest: %s/manifest.json\n", config.out_dir.c_str());
      return kOk;
    }

    const auto [tau, positions] = pfd::read_snapshot_csv(snapshot_path);
    pfd::PlotOptions options;
    options.bound = bound;
    const pfd::RingSpec* rings = nullptr;
    pfd::ExperimentConfig ring_source;
    if (!rings_config.empty()) {
      ring_source = pfd::ExperimentConfig::load(rings_config);
      rings = &ring_source.rings;
    }
    pfd::plot_ensemble(positions, rings, options, svg_path);
    std::printf("wrote %s (tau %ld, %ld particles)\n", svg_path.c_str(), tau,
                static_cast<long>(positions.cols()));
    return kOk;
  } catch (const pfd::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const pfd::toml::ParseError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  }
}
