#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>

#include <Eigen/Dense>

#include "pfd/mixture.hpp"
#include "pfd/schedules.hpp"

namespace pfd {

/// Conversion factor between score and noise prediction:
/// eps = -factor * score, factor = sqrt(1-alpha) for VP, sigma for VE.
inline double eps_scale(const NoiseSchedule& schedule, double t) {
  if (schedule.kind() == ScheduleKind::VE) return schedule.sigma_at(t);
  return std::sqrt(1.0 - schedule.alpha_at(t));
}

inline Eigen::VectorXd eps_from_score(const NoiseSchedule& schedule, const Eigen::VectorXd& score,
                                      double t) {
  if (t <= 0.0) throw std::domain_error("eps_from_score: scaling singular at t = 0");
  return -eps_scale(schedule, t) * score;
}

inline Eigen::VectorXd score_from_eps(const NoiseSchedule& schedule, const Eigen::VectorXd& eps,
                                      double t) {
  if (t <= 0.0) throw std::domain_error("score_from_eps: scaling singular at t = 0");
  return eps / -eps_scale(schedule, t);
}

/// Evaluatable score over (point, time). The score is the canonical
/// representation; eps is a derived view through the schedule.
class ScoreField {
 public:
  explicit ScoreField(const NoiseSchedule& schedule) : schedule_(&schedule) {}
  virtual ~ScoreField() = default;

  virtual int dim() const = 0;
  virtual Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const = 0;

  virtual Eigen::VectorXd eps(const Eigen::VectorXd& x, double t) const {
    return -eps_scale(*schedule_, t) * score(x, t);
  }

  const NoiseSchedule& schedule() const { return *schedule_; }

 private:
  const NoiseSchedule* schedule_;
};

/// Score of the noised marginals of an analytic base mixture. Exact for all
/// t; isotropic bases use a vectorized closed form.
class MixtureScoreField final : public ScoreField {
 public:
  MixtureScoreField(const NoiseSchedule& schedule, GaussianMixture base)
      : ScoreField(schedule), base_(std::move(base)) {
    detect_isotropic();
  }

  int dim() const override { return base_.dim(); }
  const GaussianMixture& base() const { return base_; }

  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const override {
    if (!x.allFinite()) throw std::invalid_argument("MixtureScoreField: non-finite input");
    if (isotropic_) return isotropic_score(x, t);
    return noised_mixture(base_, schedule(), t).score(x);
  }

  double log_density(const Eigen::VectorXd& x, double t) const {
    return noised_mixture(base_, schedule(), t).log_density(x);
  }

 private:
  void detect_isotropic() {
    const int d = base_.dim();
    isotropic_ = true;
    base_vars_.resize(base_.components());
    means_.resize(d, base_.components());
    for (int i = 0; i < base_.components(); ++i) {
      const Eigen::MatrixXd& c = base_.covariances()[i];
      const double v = c(0, 0);
      if ((c - v * Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-14 * std::abs(v)) {
        isotropic_ = false;
        return;
      }
      base_vars_[i] = v;
      means_.col(i) = base_.means()[i];
    }
    log_weights_ = base_.weights().array().log();
  }

  Eigen::VectorXd isotropic_score(const Eigen::VectorXd& x, double t) const {
    const int d = dim();
    double mean_scale = 1.0, signal = 1.0, added = 0.0;
    if (schedule().kind() == ScheduleKind::VE) {
      const double s = schedule().sigma_at(t);
      added = s * s;
    } else {
      signal = schedule().alpha_at(t);
      mean_scale = std::sqrt(signal);
      added = 1.0 - signal;
    }
    const Eigen::ArrayXd vars = signal * base_vars_.array() + added;
    const Eigen::MatrixXd diffs = (mean_scale * means_).colwise() - x;
    const Eigen::ArrayXd sq = diffs.colwise().squaredNorm().transpose().array();
    Eigen::ArrayXd lt = log_weights_.array() - 0.5 * d * vars.log() - 0.5 * sq / vars;
    const double m = lt.maxCoeff();
    const Eigen::ArrayXd r = (lt - m).exp();
    const Eigen::VectorXd coef = (r / vars / r.sum()).matrix();
    return diffs * coef;
  }

  GaussianMixture base_;
  bool isotropic_ = false;
  Eigen::VectorXd base_vars_;
  Eigen::MatrixXd means_;  // d x K
  Eigen::VectorXd log_weights_;
};

/// Guided combination eps_hat = (1-gamma) eps_uncond + gamma eps_cond.
/// The symmetric two-weight form keeps the role-swap identity
/// cfg(c, u, gamma) == cfg(u, c, 1-gamma) bit-exact for exactly
/// representable gamma, since the two products are identical and IEEE
/// addition commutes.
class CfgField final : public ScoreField {
 public:
  CfgField(const ScoreField& conditional, const ScoreField& unconditional, double gamma)
      : ScoreField(conditional.schedule()),
        cond_(&conditional),
        uncond_(&unconditional),
        gamma_(gamma) {
    if (conditional.dim() != unconditional.dim())
      throw std::invalid_argument("CfgField: sub-field dimension mismatch");
  }

  int dim() const override { return cond_->dim(); }
  double gamma() const { return gamma_; }

  Eigen::VectorXd score(const Eigen::VectorXd& x, double t) const override {
    return (1.0 - gamma_) * uncond_->score(x, t) + gamma_ * cond_->score(x, t);
  }

  Eigen::VectorXd eps(const Eigen::VectorXd& x, double t) const override {
    return (1.0 - gamma_) * uncond_->eps(x, t) + gamma_ * cond_->eps(x, t);
  }

 private:
  const ScoreField* cond_;
  const ScoreField* uncond_;
  double gamma_;
};

inline Eigen::VectorXd cfg_combine(const CfgField& field, const Eigen::VectorXd& x, double t) {
  if (!(t > 0.0 && t <= field.schedule().terminal_time()))
    throw std::domain_error("cfg_combine: t outside (0, T]");
  return field.eps(x, t);
}

}  // namespace pfd
