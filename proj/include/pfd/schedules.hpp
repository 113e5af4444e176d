#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace pfd {

enum class ScheduleKind { VP, VE };

/// Scaling factor c(s,t) = exp(int_s^t a(u) du) of the linear drift.
struct ScaleFactor {
  double value = 1.0;
  double from_time = 0.0;
  double to_time = 0.0;
};

/// Diffusion SDE family with linear drift a(t)*x and scalar diffusion g(t).
///
/// VP: dx = -1/2 beta(t) x dt + sqrt(beta(t)) dW, alpha_t = exp(-int beta).
/// VE: dx = sqrt(d sigma_t^2/dt) dW with sigma_t = sigma_max * t / T.
///
/// Immutable after construction; all members are pure functions of time.
class NoiseSchedule {
 public:
  static NoiseSchedule vp_linear(double beta0, double beta1, double terminal = 1.0) {
    NoiseSchedule s;
    s.kind_ = ScheduleKind::VP;
    s.beta0_ = beta0;
    s.beta1_ = beta1;
    s.T_ = terminal;
    s.t_min_ = 0.02 * terminal;
    s.t_max_ = 0.98 * terminal;
    return s;
  }

  static NoiseSchedule vp_constant(double beta, double terminal = 1.0) {
    return vp_linear(beta, beta, terminal);
  }

  /// VP with a user-supplied beta(t); integrals fall back to adaptive quadrature.
  static NoiseSchedule vp_custom(std::function<double(double)> beta_fn, double terminal = 1.0) {
    NoiseSchedule s = vp_linear(0.0, 0.0, terminal);
    s.beta_fn_ = std::move(beta_fn);
    return s;
  }

  static NoiseSchedule ve_linear(double sigma_max, double terminal = 1.0) {
    NoiseSchedule s;
    s.kind_ = ScheduleKind::VE;
    s.sigma_max_ = sigma_max;
    s.T_ = terminal;
    s.t_min_ = 0.02 * terminal;
    s.t_max_ = 0.98 * terminal;
    return s;
  }

  ScheduleKind kind() const { return kind_; }
  double terminal_time() const { return T_; }
  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }

  void set_sampling_range(double lo, double hi) {
    if (!(0.0 <= lo && lo < hi && hi <= T_))
      throw std::invalid_argument("NoiseSchedule: need 0 <= t_min < t_max <= T");
    t_min_ = lo;
    t_max_ = hi;
  }

  /// alpha_t = exp(-int_0^t beta). Identically 1 for VE.
  double alpha_at(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::VE) return 1.0;
    return std::exp(-beta_integral(t));
  }

  /// sigma_t: sqrt((1-alpha)/alpha) for VP, sigma_max*t/T for VE.
  double sigma_at(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::VE) return sigma_max_ * (t / T_);
    const double a = alpha_at(t);
    return std::sqrt((1.0 - a) / a);
  }

  /// Drift coefficient a(t): -beta(t)/2 for VP, 0 for VE.
  double drift_coef(double t) const {
    if (kind_ == ScheduleKind::VE) return 0.0;
    return -0.5 * beta_at(t);
  }

  /// Squared diffusion coefficient g(t)^2: beta(t) for VP, d(sigma^2)/dt for VE.
  double diffusion_sq(double t) const {
    if (kind_ == ScheduleKind::VE) return 2.0 * sigma_max_ * sigma_max_ * t / (T_ * T_);
    return beta_at(t);
  }

  /// c(s,t) = exp(int_s^t a(u) du); c(s,u)*c(u,t) = c(s,t).
  ScaleFactor scale_factor(double s, double t) const {
    double v = 1.0;
    if (kind_ == ScheduleKind::VP)
      v = std::exp(-0.5 * (beta_integral(t) - beta_integral(s)));
    return ScaleFactor{v, s, t};
  }

  /// Theorem weight w(t) = 1/2 (T-t) g(t)^2 c(t,0)^2.
  double theorem_weight(double t) const {
    check_time(t);
    const double c = scale_factor(t, 0.0).value;
    return 0.5 * (T_ - t) * diffusion_sq(t) * c * c;
  }

  /// Forward transition kernel applied to a fixed noise draw.
  /// VP: sqrt(alpha) x0 + sqrt(1-alpha) eps; VE: x0 + sigma eps.
  Eigen::VectorXd perturb(const Eigen::VectorXd& x0, double t, const Eigen::VectorXd& noise) const {
    if (x0.size() != noise.size())
      throw std::invalid_argument("perturb: dimension mismatch between x0 and noise");
    if (kind_ == ScheduleKind::VE) return x0 + sigma_at(t) * noise;
    const double a = alpha_at(t);
    return std::sqrt(a) * x0 + std::sqrt(1.0 - a) * noise;
  }

  /// Inverse of sigma_at on [0, T]. Closed form for the supplied schedule
  /// kinds, bisection for custom beta.
  double time_from_sigma(double sigma) const {
    if (sigma < 0.0) throw std::domain_error("time_from_sigma: sigma < 0");
    if (kind_ == ScheduleKind::VE) return sigma * T_ / sigma_max_;
    const double L = std::log1p(sigma * sigma);  // -log alpha
    if (beta_fn_) return invert_beta_integral(L);
    const double slope = (beta1_ - beta0_) / T_;
    if (std::abs(slope) < 1e-300) return L / beta0_;
    // slope/2 t^2 + beta0 t - L = 0
    return (-beta0_ + std::sqrt(beta0_ * beta0_ + 2.0 * slope * L)) / slope;
  }

 private:
  void check_time(double t) const {
    if (!(t >= 0.0 && t <= T_))
      throw std::domain_error("NoiseSchedule: time " + std::to_string(t) + " outside [0, T]");
  }

  double beta_at(double t) const {
    if (beta_fn_) return beta_fn_(t);
    return beta0_ + (beta1_ - beta0_) * (t / T_);
  }

  /// int_0^t beta(u) du. Closed form for linear beta; adaptive Simpson
  /// (tol 1e-10) for a user-supplied beta.
  double beta_integral(double t) const {
    if (!beta_fn_) return beta0_ * t + 0.5 * (beta1_ - beta0_) * t * t / T_;
    return adaptive_simpson(*this, 0.0, t, 1e-10);
  }

  double invert_beta_integral(double target) const {
    double lo = 0.0, hi = T_;
    if (beta_integral(T_) < target) return T_;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (beta_integral(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  static double adaptive_simpson(const NoiseSchedule& s, double a, double b, double tol) {
    auto f = [&s](double u) { return s.beta_fn_(u); };
    auto simpson = [&f](double lo, double hi) {
      return (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + hi)) + f(hi));
    };
    std::function<double(double, double, double, double, int)> rec =
        [&](double lo, double hi, double whole, double eps, int depth) -> double {
      const double mid = 0.5 * (lo + hi);
      const double left = simpson(lo, mid), right = simpson(mid, hi);
      if (depth > 40 || std::abs(left + right - whole) < 15.0 * eps)
        return left + right + (left + right - whole) / 15.0;
      return rec(lo, mid, left, 0.5 * eps, depth + 1) +
             rec(mid, hi, right, 0.5 * eps, depth + 1);
    };
    if (a == b) return 0.0;
    return rec(a, b, simpson(a, b), tol, 0);
  }

  ScheduleKind kind_ = ScheduleKind::VE;
  double beta0_ = 0.0, beta1_ = 0.0;
  double sigma_max_ = 1.0;
  double T_ = 1.0;
  double t_min_ = 0.02, t_max_ = 0.98;
  std::function<double(double)> beta_fn_;
};

}  // namespace pfd
