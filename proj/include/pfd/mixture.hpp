#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "pfd/schedules.hpp"

namespace pfd {

/// Finite Gaussian mixture with closed-form density and score.
class GaussianMixture {
 public:
  GaussianMixture(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
                  std::vector<Eigen::MatrixXd> covariances)
      : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)) {
    const auto k = static_cast<std::size_t>(weights_.size());
    if (k == 0 || means_.size() != k || covs_.size() != k)
      throw std::invalid_argument("GaussianMixture: component count mismatch");
    if (std::abs(weights_.sum() - 1.0) > 1e-12 || weights_.minCoeff() <= 0.0)
      throw std::invalid_argument("GaussianMixture: weights must be a positive simplex vector");
    refresh();
  }

  /// Isotropic mixture N(mu_i, s_i^2 I) with equal handling of components.
  static GaussianMixture isotropic(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
                                   const std::vector<double>& stds) {
    std::vector<Eigen::MatrixXd> covs;
    covs.reserve(means.size());
    const auto d = means.front().size();
    for (double s : stds) covs.push_back(s * s * Eigen::MatrixXd::Identity(d, d));
    return GaussianMixture(std::move(weights), std::move(means), std::move(covs));
  }

  static GaussianMixture single(const Eigen::VectorXd& mean, double std_dev) {
    return isotropic(Eigen::VectorXd::Ones(1), {mean}, {std_dev});
  }

  int dim() const { return static_cast<int>(means_.front().size()); }
  int components() const { return static_cast<int>(weights_.size()); }
  const Eigen::VectorXd& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& means() const { return means_; }
  const std::vector<Eigen::MatrixXd>& covariances() const { return covs_; }

  double log_density(const Eigen::VectorXd& x) const {
    return log_sum_exp(component_log_terms(x));
  }

  /// grad_x log density, log-sum-exp stabilized responsibilities.
  Eigen::VectorXd score(const Eigen::VectorXd& x) const {
    if (!x.allFinite()) throw std::invalid_argument("mixture score: non-finite input");
    const Eigen::VectorXd lt = component_log_terms(x);
    const double lse = log_sum_exp(lt);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    for (int i = 0; i < components(); ++i) {
      const double r = std::exp(lt[i] - lse);
      g.noalias() += r * llts_[i].solve(means_[i] - x);
    }
    return g;
  }

  Eigen::VectorXd sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    double acc = 0.0;
    const double pick = u(rng);
    int comp = components() - 1;
    for (int i = 0; i < components(); ++i) {
      acc += weights_[i];
      if (pick <= acc) { comp = i; break; }
    }
    Eigen::VectorXd z(dim());
    for (int j = 0; j < dim(); ++j) z[j] = n(rng);
    return means_[comp] + llts_[comp].matrixL() * z;
  }

  Eigen::MatrixXd sample(std::mt19937_64& rng, int n) const {
    Eigen::MatrixXd out(dim(), n);
    for (int i = 0; i < n; ++i) out.col(i) = sample(rng);
    return out;
  }

 private:
  void refresh() {
    const auto d = means_.front().size();
    llts_.clear();
    log_norms_.resize(weights_.size());
    for (std::size_t i = 0; i < covs_.size(); ++i) {
      if (means_[i].size() != d || covs_[i].rows() != d || covs_[i].cols() != d)
        throw std::invalid_argument("GaussianMixture: dimension mismatch");
      llts_.emplace_back(covs_[i]);
      if (llts_.back().info() != Eigen::Success)
        throw std::invalid_argument("GaussianMixture: covariance not SPD");
      double log_det = 0.0;
      for (Eigen::Index j = 0; j < d; ++j)
        log_det += 2.0 * std::log(llts_.back().matrixL()(j, j));
      log_norms_[i] = -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det);
    }
  }

  Eigen::VectorXd component_log_terms(const Eigen::VectorXd& x) const {
    Eigen::VectorXd lt(components());
    for (int i = 0; i < components(); ++i) {
      const Eigen::VectorXd diff = x - means_[i];
      lt[i] = std::log(weights_[i]) + log_norms_[i] -
              0.5 * diff.dot(llts_[i].solve(diff));
    }
    return lt;
  }

  static double log_sum_exp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
  }

  Eigen::VectorXd weights_;
  std::vector<Eigen::VectorXd> means_;
  std::vector<Eigen::MatrixXd> covs_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llts_;
  std::vector<double> log_norms_;
};

/// Concentric-rings target: radii, radial std and mode count per ring.
struct RingSpec {
  std::vector<double> radii;
  double thickness = 0.0;  // 0 selects the default 0.05 * outer radius
  int modes_per_ring = 64;

  double outer_radius() const { return radii.back(); }
  double effective_thickness() const {
    return thickness > 0.0 ? thickness : 0.05 * outer_radius();
  }

  void validate() const {
    if (radii.empty() || modes_per_ring < 1)
      throw std::invalid_argument("RingSpec: need at least one ring and one mode");
    double prev = 0.0;
    double min_gap = radii.front();
    for (double r : radii) {
      if (r <= prev) throw std::invalid_argument("RingSpec: radii must be strictly increasing positive");
      min_gap = std::min(min_gap, r - prev);
      prev = r;
    }
    if (effective_thickness() >= min_gap)
      throw std::invalid_argument("RingSpec: thickness must be below the minimum radius gap");
  }
};

/// Equal-weight isotropic modes placed uniformly on each circle.
inline GaussianMixture ring_to_mixture(const RingSpec& spec) {
  spec.validate();
  const int k = static_cast<int>(spec.radii.size()) * spec.modes_per_ring;
  std::vector<Eigen::VectorXd> means;
  std::vector<double> stds;
  means.reserve(k);
  for (double r : spec.radii) {
    for (int m = 0; m < spec.modes_per_ring; ++m) {
      const double angle = 2.0 * std::numbers::pi * m / spec.modes_per_ring;
      Eigen::VectorXd mu(2);
      mu << r * std::cos(angle), r * std::sin(angle);
      means.push_back(mu);
      stds.push_back(spec.effective_thickness());
    }
  }
  return GaussianMixture::isotropic(Eigen::VectorXd::Constant(k, 1.0 / k), std::move(means), stds);
}

/// Pushforward of a mixture under the linear-Gaussian transition kernel.
/// VP: (sqrt(a) mu, a Sigma + (1-a) I); VE: (mu, Sigma + sigma^2 I).
inline GaussianMixture noised_mixture(const GaussianMixture& base, const NoiseSchedule& schedule,
                                      double t) {
  const int d = base.dim();
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  means.reserve(base.components());
  covs.reserve(base.components());
  if (schedule.kind() == ScheduleKind::VE) {
    const double s2 = std::pow(schedule.sigma_at(t), 2);
    for (int i = 0; i < base.components(); ++i) {
      means.push_back(base.means()[i]);
      covs.push_back(base.covariances()[i] + s2 * Eigen::MatrixXd::Identity(d, d));
    }
  } else {
    const double a = schedule.alpha_at(t);
    for (int i = 0; i < base.components(); ++i) {
      means.push_back(std::sqrt(a) * base.means()[i]);
      covs.push_back(a * base.covariances()[i] + (1.0 - a) * Eigen::MatrixXd::Identity(d, d));
    }
  }
  return GaussianMixture(base.weights(), std::move(means), std::move(covs));
}

/// Same mixture with every covariance scaled; the toy stand-in for an
/// unconditional model (conditional = target, unconditional = broadened).
inline GaussianMixture broaden_mixture(const GaussianMixture& base, double cov_scale) {
  std::vector<Eigen::MatrixXd> covs;
  covs.reserve(base.components());
  for (const auto& c : base.covariances()) covs.push_back(cov_scale * c);
  return GaussianMixture(base.weights(), base.means(), std::move(covs));
}

}  // namespace pfd
