#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

#include "pfd/schedules.hpp"

// Independent closed-form and brute-force references. Nothing here shares a
// code path with the solvers it is used to check.

namespace pfd::oracle {

/// Exact PF-ODE flow map of an isotropic Gaussian: x -> scale*(x - m_s) + m_t.
struct AffineFlow {
  double scale = 1.0;
  Eigen::VectorXd shift;  // m_t - scale * m_s
  double from_time = 0.0;
  double to_time = 0.0;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return scale * x + shift; }

  /// Composition: first this (s->u), then next (u->t).
  AffineFlow then(const AffineFlow& next) const {
    AffineFlow out;
    out.scale = next.scale * scale;
    out.shift = next.scale * shift + next.shift;
    out.from_time = from_time;
    out.to_time = next.to_time;
    return out;
  }
};

/// Isotropic Gaussian prior N(mean, var * I) at t = 0.
struct GaussianPrior {
  Eigen::VectorXd mean;
  double var = 1.0;
};

/// Marginal mean scale and variance of the noised Gaussian at time t.
inline std::pair<double, double> gaussian_marginal(const NoiseSchedule& schedule,
                                                   const GaussianPrior& prior, double t) {
  if (schedule.kind() == ScheduleKind::VE) {
    const double s = schedule.sigma_at(t);
    return {1.0, prior.var + s * s};
  }
  const double a = schedule.alpha_at(t);
  return {std::sqrt(a), a * prior.var + (1.0 - a)};
}

inline double gaussian_log_density(const NoiseSchedule& schedule, const GaussianPrior& prior,
                                   const Eigen::VectorXd& x, double t) {
  const auto [ms, v] = gaussian_marginal(schedule, prior, t);
  const Eigen::VectorXd diff = x - ms * prior.mean;
  const auto d = static_cast<double>(x.size());
  return -0.5 * (d * std::log(2.0 * std::numbers::pi * v) + diff.squaredNorm() / v);
}

inline Eigen::VectorXd gaussian_score(const NoiseSchedule& schedule, const GaussianPrior& prior,
                                      const Eigen::VectorXd& x, double t) {
  const auto [ms, v] = gaussian_marginal(schedule, prior, t);
  return (ms * prior.mean - x) / v;
}

/// Closed-form PF-ODE flow map of a Gaussian prior from time s to time t.
/// The deviation from the marginal mean obeys d(log r)/dt = a + g^2/(2 v_t),
/// which integrates to r_t / r_s = sqrt(v_t / v_s) up to the mean scaling.
inline AffineFlow gaussian_flow(const NoiseSchedule& schedule, const GaussianPrior& prior,
                                double s, double t) {
  const auto [ms_s, v_s] = gaussian_marginal(schedule, prior, s);
  const auto [ms_t, v_t] = gaussian_marginal(schedule, prior, t);
  AffineFlow flow;
  flow.scale = std::sqrt(v_t / v_s);
  flow.shift = ms_t * prior.mean - flow.scale * (ms_s * prior.mean);
  flow.from_time = s;
  flow.to_time = t;
  return flow;
}

/// Central finite difference per coordinate.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& fn,
                                   const Eigen::VectorXd& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("fd_gradient: step must be positive");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x, xm = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp[j] = x[j] + step;
    xm[j] = x[j] - step;
    const double fp = fn(xp), fm = fn(xm);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("fd_gradient: non-finite evaluation");
    g[j] = (fp - fm) / (2.0 * step);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return g;
}

/// Composite Simpson with n panels (n even after rounding up).
inline Eigen::VectorXd simpson(const std::function<Eigen::VectorXd(double)>& fn, double a,
                               double b, int panels) {
  const int n = panels % 2 == 0 ? panels : panels + 1;
  const double h = (b - a) / n;
  Eigen::VectorXd acc = fn(a) + fn(b);
  for (int i = 1; i < n; ++i) acc += (i % 2 == 1 ? 4.0 : 2.0) * fn(a + i * h);
  return (h / 3.0) * acc;
}

struct Theorem1Result {
  Eigen::VectorXd lhs;  // E_t[Delta_t] via composed affine flows, stop-gradient pullback
  Eigen::VectorXd rhs;  // E_t[1/2 (T-t) g^2 c(t,0) grad log(q_t/p_t)(x_t)]
  double rel_err = 0.0;
};

/// Evaluates both sides of the gradient identity for Gaussian q0, p0 by
/// independent quadratures over t.
///
/// lhs:  (1/T) int_0^T Delta_t dt, where Delta_t accumulates the per-step
///       discrepancy between the exact q-flow and p-flow maps along the
///       forward-q trajectory, pulled back to time 0 with the frozen-score
///       Jacobian c(s,0). The identity is stated under stop-gradient
///       semantics: score evaluations are not differentiated through, so the
///       flow Jacobian reduces to the drift scaling c alone. Plugging in the
///       true reverse-flow Jacobian sqrt(v_p(0)/v_p(t)) instead would bias
///       Delta_t by 5-10% for O(1) noise levels; the identity is exact only
///       with the frozen pullback.
/// rhs:  (1/T) int_0^T 1/2 (T-t) g(t)^2 c(t,0) grad log(q_t/p_t)(x_t) dt
///       via composite Simpson. The lhs never evaluates a score and the rhs
///       never evaluates a flow increment, so the two sides only meet through
///       the identity itself (the Fubini swap of the triangular t,s domain).
inline Theorem1Result theorem1_check(const NoiseSchedule& schedule, const GaussianPrior& q0,
                                     const GaussianPrior& p0, const Eigen::VectorXd& x0,
                                     int panels = 10000) {
  const double T = schedule.terminal_time();
  const double h = T / panels;

  Theorem1Result out;

  // Single forward sweep: Delta(s) is cumulative, so its uniform average over
  // t falls out of the same walk by trapezoid accumulation.
  Eigen::VectorXd x = x0;
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(x0.size());
  Eigen::VectorXd lhs_acc = Eigen::VectorXd::Zero(x0.size());
  for (int k = 0; k < panels; ++k) {
    const double s = k * h, s1 = (k + 1) * h;
    const Eigen::VectorXd xq = gaussian_flow(schedule, q0, s, s1).apply(x);
    const Eigen::VectorXd xp = gaussian_flow(schedule, p0, s, s1).apply(x);
    const double c = schedule.scale_factor(0.5 * (s + s1), 0.0).value;
    lhs_acc += 0.5 * h * delta;
    delta -= c * (xq - xp);
    lhs_acc += 0.5 * h * delta;
    x = xq;
  }
  out.lhs = lhs_acc / T;

  auto rhs_integrand = [&](double t) -> Eigen::VectorXd {
    const Eigen::VectorXd xt = gaussian_flow(schedule, q0, 0.0, t).apply(x0);
    const double c = schedule.scale_factor(t, 0.0).value;
    const Eigen::VectorXd score_diff =
        gaussian_score(schedule, q0, xt, t) - gaussian_score(schedule, p0, xt, t);
    return 0.5 * (T - t) * schedule.diffusion_sq(t) * c * score_diff;
  };
  out.rhs = simpson(rhs_integrand, 0.0, T, panels) / T;
  out.rel_err = (out.lhs - out.rhs).norm() / std::max(out.rhs.norm(), 1e-12);
  return out;
}

}  // namespace pfd::oracle
