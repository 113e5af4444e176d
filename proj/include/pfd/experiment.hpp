#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pfd/distillation.hpp"
#include "pfd/mixture.hpp"

namespace pfd {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PlotOptions {
  double bound = 4.0;  // view window [-bound, bound]^2
  double point_radius = 2.0;
  int size_px = 360;
};

/// Parsed experiment description: schedule, ring target, method list with
/// per-method distillation settings, snapshot plan and output layout.
struct ExperimentConfig {
  NoiseSchedule schedule = NoiseSchedule::ve_linear(1.0);
  RingSpec rings;
  std::vector<DistillMethod> methods;
  std::map<std::string, DistillationConfig> method_configs;  // keyed by method name
  std::vector<long> snapshot_iterations;
  int n_particles = 1000;
  double init_scale = -1.0;  // negative selects 1.5 * outer ring radius
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  PlotOptions plot;
  double guidance_broaden = 0.0;  // covariance scale of the unconditional
                                  // stand-in; 0 disables guidance
  std::vector<std::pair<double, double>> cfg_grid;  // (gamma_fwd, gamma_rev)
  std::string canonical;  // normalized config text, input to the run hash

  GaussianMixture target() const { return ring_to_mixture(rings); }
  double effective_init_scale() const {
    return init_scale > 0.0 ? init_scale : 1.5 * rings.outer_radius();
  }

  const DistillationConfig& config_for(DistillMethod m) const;
  void validate() const;

  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig from_table_text(const std::string& toml_text);
};

struct RunManifest {
  std::string config_hash;
  std::string version;
  bool failed = false;
  std::string failure;
  std::map<std::string, std::vector<std::string>> snapshot_files;  // method -> files
  std::string metrics_file;
  std::map<std::string, double> wall_seconds;

  void save(const std::string& path) const;
};

/// Dependency-free SVG scatter plot; rings (when given) drawn as outlines.
void plot_ensemble(const Eigen::MatrixXd& positions, const RingSpec* rings,
                   const PlotOptions& plot, const std::string& out_path);

void write_snapshot_csv(const std::string& path, long tau, const Eigen::MatrixXd& positions);

/// Returns (tau, d x N positions). Rejects files without the fixed header.
std::pair<long, Eigen::MatrixXd> read_snapshot_csv(const std::string& path);

/// Full experiment: every configured method on the ring target, snapshots,
/// metrics CSV, SVG panels and a JSON manifest in config.out_dir.
RunManifest run_experiment(const ExperimentConfig& config);

/// PFD over the (gamma_fwd, gamma_rev) grid; one metrics row per pair,
/// flagging pairs whose final grid KL exceeds twice the best pair's.
RunManifest run_cfg_ablation(const ExperimentConfig& config);

}  // namespace pfd
