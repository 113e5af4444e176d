#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pfd/schedules.hpp"
#include "pfd/score_field.hpp"

namespace pfd {

enum class Method { Euler, Heun };
enum class Direction { Forward, Reverse };
enum class Parameterization { Native, SigmaReparam };

struct StepPolicy {
  enum class Kind { Fixed, Proportional } kind = Kind::Proportional;
  int fixed_n = 1;
  double k = 10.0;

  static StepPolicy fixed(int n) {
    if (n < 1) throw std::invalid_argument("StepPolicy: fixed n must be >= 1");
    return StepPolicy{Kind::Fixed, n, 0.0};
  }
  static StepPolicy proportional(double k) {
    if (!(k > 0.0)) throw std::invalid_argument("StepPolicy: proportional k must be > 0");
    return StepPolicy{Kind::Proportional, 1, k};
  }

  /// Step count for an integration reaching time t; floor of 1 step.
  int steps_for(double t, double T) const {
    if (kind == Kind::Fixed) return fixed_n;
    return std::max(1, static_cast<int>(std::floor(k * t / T)));
  }
};

struct SolverConfig {
  Method method = Method::Heun;
  StepPolicy policy = StepPolicy::proportional(10.0);
  Direction direction = Direction::Forward;
  Parameterization parameterization = Parameterization::Native;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  Direction direction = Direction::Forward;
};

struct DivergenceError : std::runtime_error {
  explicit DivergenceError(int step)
      : std::runtime_error("integration diverged at step " + std::to_string(step)), step(step) {}
  int step;
};

/// PF-ODE velocity a(t) x - 1/2 g(t)^2 score(x, t).
inline Eigen::VectorXd pf_velocity(const NoiseSchedule& schedule, const ScoreField& field,
                                   const Eigen::VectorXd& x, double t) {
  const Eigen::VectorXd s = field.score(x, t);
  if (!s.allFinite()) throw std::runtime_error("pf_velocity: non-finite score");
  return schedule.drift_coef(t) * x - 0.5 * schedule.diffusion_sq(t) * s;
}

/// Single explicit step of the sigma-reparameterized DDIM form on the
/// scaled state: x~ + (sigma_to - sigma_from) * eps(unscale(x~), t(sigma_from)).
inline Eigen::VectorXd sigma_reparam_step(const NoiseSchedule& schedule, const ScoreField& field,
                                          const Eigen::VectorXd& x_scaled, double sigma_from,
                                          double sigma_to) {
  const double sigma_T = schedule.sigma_at(schedule.terminal_time());
  if (sigma_from < 0.0 || sigma_from > sigma_T || sigma_to < 0.0 || sigma_to > sigma_T)
    throw std::domain_error("sigma_reparam_step: sigma outside schedule range");
  const double t = schedule.time_from_sigma(sigma_from);
  const Eigen::VectorXd x_nat = x_scaled * std::sqrt(schedule.alpha_at(t));
  return x_scaled + (sigma_to - sigma_from) * field.eps(x_nat, t);
}

namespace detail {

// Native-parameterization fixed-step loop with a pluggable score source, so
// the frozen-Jacobian replay can reuse the exact stepping arithmetic.
template <typename ScoreFn>
Eigen::VectorXd integrate_native(const NoiseSchedule& schedule, ScoreFn&& score_at,
                                 const Eigen::VectorXd& x_start, double t_from, double t_to,
                                 Method method, int n, Trajectory* traj) {
  const double h = (t_to - t_from) / n;
  Eigen::VectorXd x = x_start;
  if (traj) {
    traj->times.push_back(t_from);
    traj->states.push_back(x);
  }
  auto vel = [&](const Eigen::VectorXd& xi, double t, int step, int stage) -> Eigen::VectorXd {
    if (!xi.allFinite()) throw DivergenceError(step);
    return schedule.drift_coef(t) * xi -
           0.5 * schedule.diffusion_sq(t) * score_at(xi, t, step, stage);
  };
  for (int k = 0; k < n; ++k) {
    const double tk = t_from + k * h;
    const double tk1 = (k + 1 == n) ? t_to : t_from + (k + 1) * h;
    if (method == Method::Euler) {
      x += h * vel(x, tk, k, 0);
    } else {
      const Eigen::VectorXd v1 = vel(x, tk, k, 0);
      const Eigen::VectorXd xp = x + h * v1;
      const Eigen::VectorXd v2 = vel(xp, tk1, k, 1);
      x += 0.5 * h * (v1 + v2);
    }
    if (!x.allFinite()) throw DivergenceError(k);
    if (traj) {
      traj->times.push_back(tk1);
      traj->states.push_back(x);
    }
  }
  return x;
}

inline Eigen::VectorXd integrate_sigma_reparam(const NoiseSchedule& schedule,
                                               const ScoreField& field,
                                               const Eigen::VectorXd& x_start, double t_from,
                                               double t_to, Method method, int n,
                                               Trajectory* traj) {
  const double sigma_from = schedule.sigma_at(t_from);
  const double sigma_to = schedule.sigma_at(t_to);
  const double dsig = (sigma_to - sigma_from) / n;
  const bool vp = schedule.kind() == ScheduleKind::VP;

  auto time_at = [&](int k) {
    if (k == 0) return t_from;
    if (k == n) return t_to;
    return schedule.time_from_sigma(sigma_from + k * dsig);
  };
  auto unscale = [&](const Eigen::VectorXd& xs, double t) -> Eigen::VectorXd {
    return vp ? (xs * std::sqrt(schedule.alpha_at(t))).eval() : xs;
  };

  Eigen::VectorXd x_scaled =
      vp ? (x_start / std::sqrt(schedule.alpha_at(t_from))).eval() : x_start;
  if (traj) {
    traj->times.push_back(t_from);
    traj->states.push_back(x_start);
  }
  for (int k = 0; k < n; ++k) {
    const double tk = time_at(k);
    const double tk1 = time_at(k + 1);
    // Node 0 evaluates at the caller's exact state, avoiding the
    // scale/unscale roundtrip so a 1-step Euler pass reproduces
    // posterior_mean bit-for-bit.
    const Eigen::VectorXd x_nat = (k == 0) ? x_start : unscale(x_scaled, tk);
    if (!x_nat.allFinite()) throw DivergenceError(k);
    if (method == Method::Euler) {
      x_scaled += dsig * field.eps(x_nat, tk);
    } else {
      const Eigen::VectorXd e1 = field.eps(x_nat, tk);
      const Eigen::VectorXd xs_pred = x_scaled + dsig * e1;
      if (!xs_pred.allFinite()) throw DivergenceError(k);
      const Eigen::VectorXd e2 = field.eps(unscale(xs_pred, tk1), tk1);
      x_scaled += 0.5 * dsig * (e1 + e2);
    }
    if (!x_scaled.allFinite()) throw DivergenceError(k);
    if (traj) {
      traj->times.push_back(tk1);
      traj->states.push_back(unscale(x_scaled, tk1));
    }
  }
  return unscale(x_scaled, t_to);
}

}  // namespace detail

/// Fixed-step explicit PF-ODE integration between arbitrary times. Score
/// evaluations carry no gradient information (stop-gradient contract).
inline std::pair<Eigen::VectorXd, Trajectory> integrate(const NoiseSchedule& schedule,
                                                        const ScoreField& field,
                                                        const Eigen::VectorXd& x_start,
                                                        double t_from, double t_to,
                                                        const SolverConfig& cfg) {
  Trajectory traj;
  traj.direction = t_to >= t_from ? Direction::Forward : Direction::Reverse;
  if (t_from == t_to) {
    traj.times.push_back(t_from);
    traj.states.push_back(x_start);
    return {x_start, std::move(traj)};
  }
  const int n = cfg.policy.steps_for(std::max(t_from, t_to), schedule.terminal_time());
  Eigen::VectorXd end;
  if (cfg.parameterization == Parameterization::SigmaReparam) {
    end = detail::integrate_sigma_reparam(schedule, field, x_start, t_from, t_to, cfg.method, n,
                                          &traj);
  } else {
    auto score_at = [&](const Eigen::VectorXd& x, double t, int, int) {
      return field.score(x, t);
    };
    end = detail::integrate_native(schedule, score_at, x_start, t_from, t_to, cfg.method, n,
                                   &traj);
  }
  return {end, std::move(traj)};
}

/// Posterior mean estimate of the clean sample: x~_t - sigma_t eps(x_t, t),
/// returned in unscaled coordinates. Equals a 1-step reverse Euler pass of
/// the sigma-reparameterized PF-ODE.
inline Eigen::VectorXd posterior_mean(const NoiseSchedule& schedule, const ScoreField& field,
                                      const Eigen::VectorXd& x_t, double t) {
  if (!(t > 0.0)) throw std::domain_error("posterior_mean: singular at t = 0");
  const Eigen::VectorXd x_scaled = x_t / std::sqrt(schedule.alpha_at(t));
  return x_scaled - schedule.sigma_at(t) * field.eps(x_t, t);
}

/// Finite-difference Jacobian of the flow map with score evaluations frozen
/// at the base trajectory (the stop-gradient semantics of Lemma-3-style
/// analysis). Diagnostic; d <= 4.
inline Eigen::MatrixXd frozen_flow_jacobian(const NoiseSchedule& schedule, const ScoreField& field,
                                            const Eigen::VectorXd& x, double s, double t,
                                            double fd_step,
                                            Method method = Method::Heun, int steps = 200) {
  if (x.size() > 4) throw std::invalid_argument("frozen_flow_jacobian: d <= 4 only");
  // Record the stage scores of the base trajectory.
  std::vector<std::array<Eigen::VectorXd, 2>> frozen(steps);
  auto recorder = [&](const Eigen::VectorXd& xi, double ti, int step, int stage) {
    frozen[step][stage] = field.score(xi, ti);
    return frozen[step][stage];
  };
  detail::integrate_native(schedule, recorder, x, s, t, method, steps, nullptr);

  auto replay = [&](const Eigen::VectorXd&, double, int step, int stage) {
    return frozen[step][stage];
  };
  const auto d = x.size();
  Eigen::MatrixXd jac(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += fd_step;
    xm[j] -= fd_step;
    const Eigen::VectorXd fp =
        detail::integrate_native(schedule, replay, xp, s, t, method, steps, nullptr);
    const Eigen::VectorXd fm =
        detail::integrate_native(schedule, replay, xm, s, t, method, steps, nullptr);
    jac.col(j) = (fp - fm) / (2.0 * fd_step);
  }
  return jac;
}

/// CSV export (columns: step, t, x_0..x_{d-1}).
inline void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trajectory_csv: cannot open " + path);
  const auto d = traj.states.empty() ? 0 : traj.states.front().size();
  out << "step,t";
  for (Eigen::Index j = 0; j < d; ++j) out << ",x" << j;
  out << "\n";
  char buf[64];
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    out << i;
    std::snprintf(buf, sizeof(buf), "%.17g", traj.times[i]);
    out << "," << buf;
    for (Eigen::Index j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", traj.states[i][j]);
      out << "," << buf;
    }
    out << "\n";
  }
}

}  // namespace pfd
