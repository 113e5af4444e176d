#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pfd/network.hpp"
#include "pfd/schedules.hpp"
#include "pfd/score_field.hpp"
#include "pfd/solvers.hpp"

namespace pfd {

enum class DistillMethod { SDS, SDI, PFD };
enum class QScoreMode { Learned, PriorSurrogate };

inline std::string to_string(DistillMethod m) {
  switch (m) {
    case DistillMethod::SDS: return "SDS";
    case DistillMethod::SDI: return "SDI";
    default: return "PFD";
  }
}

struct AnnealSchedule {
  long switch_iteration = 0;
  double t_max_after = 0.0;  // step change, not a ramp
};

struct DistillationConfig {
  DistillMethod method = DistillMethod::PFD;
  double learning_rate = 0.1;
  long iterations = 100;  // full sweeps over the ensemble
  double gamma_fwd = -6.5;
  double gamma_rev = 1.0;
  QScoreMode q_score_mode = QScoreMode::Learned;
  std::optional<AnnealSchedule> anneal;
  SolverConfig forward_solver{Method::Heun, StepPolicy::proportional(10.0)};
  SolverConfig reverse_solver{Method::Heun, StepPolicy::proportional(10.0)};
  double t_min = -1.0;  // negative: inherit the schedule's sampling range
  double t_max = -1.0;

  // Secondary q-score network (Learned mode): warm-started DSM updates.
  std::vector<int> q_hidden{64, 64};
  int dsm_steps_per_sweep = 20;
  int dsm_pretrain_steps = 500;
  double dsm_learning_rate = 1e-2;
  int dsm_batch = 128;
};

/// N particles in R^d (columns), iteration counter and the master seed the
/// per-particle streams derive from.
struct ParticleEnsemble {
  Eigen::MatrixXd positions;  // d x N
  long iteration = 0;
  std::uint64_t seed = 0;
};

struct GradientSample {
  int particle_index = 0;
  double t = 0.0;
  Eigen::VectorXd delta;   // x0 - x_hat0 exactly
  Eigen::VectorXd x_t;     // intermediate noisy state
  Eigen::VectorXd x_hat0;  // predicted clean sample
};

/// SDS: stochastic perturbation forward, posterior mean back.
inline GradientSample sds_gradient(const NoiseSchedule& schedule, const ScoreField& prior_field,
                                   const Eigen::VectorXd& x0, double t,
                                   const Eigen::VectorXd& noise) {
  GradientSample g;
  g.t = t;
  g.x_t = schedule.perturb(x0, t, noise);
  g.x_hat0 = posterior_mean(schedule, prior_field, g.x_t, t);
  g.delta = x0 - g.x_hat0;
  return g;
}

/// SDI: deterministic inversion along the q-flow forward, posterior mean back.
inline GradientSample sdi_gradient(const NoiseSchedule& schedule, const ScoreField& prior_field,
                                   const ScoreField& q_field, const Eigen::VectorXd& x0, double t,
                                   const SolverConfig& forward_solver) {
  GradientSample g;
  g.t = t;
  g.x_t = integrate(schedule, q_field, x0, 0.0, t, forward_solver).first;
  g.x_hat0 = posterior_mean(schedule, prior_field, g.x_t, t);
  g.delta = x0 - g.x_hat0;
  return g;
}

/// PFD: q-flow forward, multi-step reverse integration of the prior flow.
inline GradientSample pfd_gradient(const NoiseSchedule& schedule, const ScoreField& prior_field,
                                   const ScoreField& q_field, const Eigen::VectorXd& x0, double t,
                                   const SolverConfig& forward_solver,
                                   const SolverConfig& reverse_solver) {
  GradientSample g;
  g.t = t;
  g.x_t = integrate(schedule, q_field, x0, 0.0, t, forward_solver).first;
  g.x_hat0 = integrate(schedule, prior_field, g.x_t, t, 0.0, reverse_solver).first;
  g.delta = x0 - g.x_hat0;
  return g;
}

/// Sampling-range upper end at iteration tau (step change at the switch).
inline double anneal_t_max(const DistillationConfig& config, long tau, double base_t_max) {
  if (config.anneal && tau >= config.anneal->switch_iteration) return config.anneal->t_max_after;
  return base_t_max;
}

/// Sign-convention lint: forward inversion corresponds to a negative
/// effective CFG scale, so a positive gamma_fwd with an inversion-based
/// method is suspicious (warning, not an error).
inline std::vector<std::string> lint_cfg_signs(const DistillationConfig& config) {
  std::vector<std::string> warnings;
  if (config.gamma_fwd > 0.0 &&
      (config.method == DistillMethod::SDI || config.method == DistillMethod::PFD)) {
    warnings.push_back(
        "gamma_fwd > 0 with method " + to_string(config.method) +
        ": forward inversion usually takes a non-positive guidance scale (1 - gamma_rev)");
  }
  return warnings;
}

struct DistillationDivergence : std::runtime_error {
  DistillationDivergence(long tau, int particle, Eigen::MatrixXd state)
      : std::runtime_error("distillation diverged at iteration " + std::to_string(tau) +
                           ", particle " + std::to_string(particle)),
        iteration(tau),
        particle(particle),
        ensemble_state(std::move(state)) {}
  long iteration;
  int particle;
  Eigen::MatrixXd ensemble_state;
};

using SnapshotHook = std::function<void(long, const Eigen::MatrixXd&)>;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d4a4a7b9d1f6e9ULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, long tau, int lane) {
  return splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(tau) * 0x100000001b3ULL +
                                        static_cast<std::uint64_t>(lane)));
}

}  // namespace detail

/// Iterative particle optimization. One iteration tau is a full sweep: every
/// particle draws its own t from a per-particle stream derived from the
/// master seed, gradients are evaluated against the pre-sweep positions and
/// committed together. In Learned mode the secondary network is warm-started
/// with DSM updates before each sweep.
inline ParticleEnsemble run_distillation(ParticleEnsemble ensemble, const NoiseSchedule& schedule,
                                         const ScoreField& prior_cond,
                                         const ScoreField* prior_uncond,
                                         const DistillationConfig& config,
                                         const SnapshotHook& hook = {}) {
  if (ensemble.positions.cols() < 1)
    throw std::invalid_argument("run_distillation: empty ensemble");
  if (!(config.learning_rate > 0.0))
    throw std::invalid_argument("run_distillation: learning rate must be positive");

  const double t_lo = config.t_min >= 0.0 ? config.t_min : schedule.t_min();
  const double base_t_hi = config.t_max >= 0.0 ? config.t_max : schedule.t_max();
  if (config.anneal && config.anneal->t_max_after > base_t_hi)
    throw std::invalid_argument("run_distillation: annealed t_max exceeds the original range");

  const int d = static_cast<int>(ensemble.positions.rows());
  const int n = static_cast<int>(ensemble.positions.cols());

  // Reverse map always follows the (guided) target prior.
  std::unique_ptr<CfgField> guided;
  if (prior_uncond) guided = std::make_unique<CfgField>(prior_cond, *prior_uncond, config.gamma_rev);
  const ScoreField& reverse_field = guided ? static_cast<const ScoreField&>(*guided) : prior_cond;

  // Forward map: learned q-score or the surrogate built from the prior.
  std::unique_ptr<ScoreNetwork> q_net;
  std::unique_ptr<NetworkScoreField> q_learned;
  std::unique_ptr<CfgField> q_surrogate;
  const ScoreField* forward_field = nullptr;
  const bool needs_forward = config.method != DistillMethod::SDS;
  if (needs_forward) {
    if (config.q_score_mode == QScoreMode::Learned) {
      std::mt19937_64 init_rng(detail::derive_seed(ensemble.seed, -1, 0));
      q_net = std::make_unique<ScoreNetwork>(d, config.q_hidden, init_rng);
      q_learned = std::make_unique<NetworkScoreField>(schedule, *q_net);
      forward_field = q_learned.get();
    } else if (prior_uncond) {
      q_surrogate = std::make_unique<CfgField>(prior_cond, *prior_uncond, config.gamma_fwd);
      forward_field = q_surrogate.get();
    } else {
      forward_field = &prior_cond;
    }
  }

  if (hook) hook(ensemble.iteration, ensemble.positions);

  Eigen::MatrixXd deltas(d, n);
  for (long sweep = 0; sweep < config.iterations; ++sweep) {
    const long tau = ensemble.iteration;
    const double t_hi = anneal_t_max(config, tau, base_t_hi);

    if (q_net) {
      DsmOptions opts;
      opts.steps = tau == 0 ? config.dsm_pretrain_steps : config.dsm_steps_per_sweep;
      opts.learning_rate = config.dsm_learning_rate;
      opts.batch_size = config.dsm_batch;
      std::mt19937_64 dsm_rng(detail::derive_seed(ensemble.seed, tau, -2));
      train_dsm(*q_net, ensemble.positions, schedule, opts, dsm_rng);
    }

    for (int i = 0; i < n; ++i) {
      std::mt19937_64 rng(detail::derive_seed(ensemble.seed, tau, i));
      std::uniform_real_distribution<double> tdist(t_lo, t_hi);
      const double t = tdist(rng);
      const Eigen::VectorXd x0 = ensemble.positions.col(i);
      try {
        GradientSample g;
        switch (config.method) {
          case DistillMethod::SDS: {
            std::normal_distribution<double> gauss(0.0, 1.0);
            Eigen::VectorXd noise(d);
            for (int j = 0; j < d; ++j) noise[j] = gauss(rng);
            g = sds_gradient(schedule, reverse_field, x0, t, noise);
            break;
          }
          case DistillMethod::SDI:
            g = sdi_gradient(schedule, reverse_field, *forward_field, x0, t,
                             config.forward_solver);
            break;
          case DistillMethod::PFD:
            g = pfd_gradient(schedule, reverse_field, *forward_field, x0, t,
                             config.forward_solver, config.reverse_solver);
            break;
        }
        deltas.col(i) = g.delta;
      } catch (const DivergenceError&) {
        throw DistillationDivergence(tau, i, ensemble.positions);
      }
    }

    ensemble.positions -= config.learning_rate * deltas;
    if (!ensemble.positions.allFinite())
      throw DistillationDivergence(tau, -1, ensemble.positions);
    ++ensemble.iteration;
    if (hook) hook(ensemble.iteration, ensemble.positions);
  }
  return ensemble;
}

}  // namespace pfd
