#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "pfd/mixture.hpp"

namespace pfd {

/// Average 1D 2-Wasserstein distance over random unit projections.
/// Sample sets are columns; sizes may differ (piecewise-constant quantile
/// functions integrated on the merged level grid).
inline double sliced_wasserstein(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                 int n_projections, std::mt19937_64& rng) {
  if (a.cols() == 0 || b.cols() == 0)
    throw std::invalid_argument("sliced_wasserstein: empty sample set");
  if (a.rows() != b.rows())
    throw std::invalid_argument("sliced_wasserstein: dimension mismatch");
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto n = a.cols(), m = b.cols();
  std::vector<double> pa(n), pb(m);
  double total = 0.0;
  for (int p = 0; p < n_projections; ++p) {
    Eigen::VectorXd dir(a.rows());
    do {
      for (Eigen::Index j = 0; j < dir.size(); ++j) dir[j] = gauss(rng);
    } while (dir.norm() < 1e-12);
    dir.normalize();
    for (Eigen::Index i = 0; i < n; ++i) pa[i] = dir.dot(a.col(i));
    for (Eigen::Index i = 0; i < m; ++i) pb[i] = dir.dot(b.col(i));
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());

    double acc = 0.0, level = 0.0;
    Eigen::Index i = 0, j = 0;
    while (i < n && j < m) {
      const double next = std::min(static_cast<double>(i + 1) / n,
                                   static_cast<double>(j + 1) / m);
      const double diff = pa[i] - pb[j];
      acc += (next - level) * diff * diff;
      level = next;
      if (next * n >= i + 1 - 1e-12) ++i;
      if (next * m >= j + 1 - 1e-12) ++j;
    }
    total += std::sqrt(acc);
  }
  return total / n_projections;
}

/// Operationalization of "recovers the complete multi-modal structure":
/// per-ring radial-band mass, fraction of occupied angle bins, and a
/// collapse flag.
struct CoverageReport {
  std::vector<double> band_mass;  // per ring, fraction of all samples
  double occupancy = 0.0;         // occupied angle bins / (bins * rings)
  bool collapsed = false;
};

inline CoverageReport ring_coverage(const Eigen::MatrixXd& samples, const RingSpec& spec,
                                    double band_width, int n_angle_bins) {
  spec.validate();
  double min_gap = spec.radii.front();
  for (std::size_t r = 1; r < spec.radii.size(); ++r)
    min_gap = std::min(min_gap, spec.radii[r] - spec.radii[r - 1]);
  if (!(band_width > 0.0) || band_width >= 0.5 * min_gap)
    throw std::invalid_argument("ring_coverage: band_width must be below half the minimum gap");

  const auto rings = spec.radii.size();
  CoverageReport report;
  report.band_mass.assign(rings, 0.0);
  std::vector<std::vector<bool>> occupied(rings, std::vector<bool>(n_angle_bins, false));
  const auto n = samples.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double radius = samples.col(i).norm();
    for (std::size_t r = 0; r < rings; ++r) {
      if (std::abs(radius - spec.radii[r]) < band_width) {
        report.band_mass[r] += 1.0 / static_cast<double>(n);
        double angle = std::atan2(samples(1, i), samples(0, i));
        if (angle < 0.0) angle += 2.0 * std::numbers::pi;
        int bin = static_cast<int>(angle / (2.0 * std::numbers::pi) * n_angle_bins);
        occupied[r][std::min(bin, n_angle_bins - 1)] = true;
        break;
      }
    }
  }
  int filled = 0;
  for (const auto& ring : occupied)
    filled += static_cast<int>(std::count(ring.begin(), ring.end(), true));
  report.occupancy = static_cast<double>(filled) / (static_cast<double>(rings) * n_angle_bins);

  const double in_band =
      std::accumulate(report.band_mass.begin(), report.band_mass.end(), 0.0);
  bool dominated = false;
  for (double mass : report.band_mass)
    if (in_band > 0.0 && mass / in_band > 0.9) dominated = true;
  report.collapsed = dominated || report.occupancy < 0.5;
  return report;
}

struct GridSpec {
  double lo = -3.0;
  double hi = 3.0;
  int resolution = 64;
};

/// Scott's rule bandwidth for the KDE (d = 2).
inline double scott_bandwidth(const Eigen::MatrixXd& samples) {
  const auto n = static_cast<double>(samples.cols());
  const Eigen::VectorXd mean = samples.rowwise().mean();
  const double var =
      (samples.colwise() - mean).squaredNorm() / (n * static_cast<double>(samples.rows()));
  return std::sqrt(var) * std::pow(n, -1.0 / (static_cast<double>(samples.rows()) + 4.0));
}

/// Discrete KL(KDE(samples) || target) on a regular 2D grid, both sides
/// normalized over the grid, target floored at 1e-12.
inline double grid_kl(const Eigen::MatrixXd& samples, const GaussianMixture& target,
                      const GridSpec& grid, double bandwidth = 0.0) {
  if (samples.rows() != 2 || target.dim() != 2)
    throw std::invalid_argument("grid_kl: d = 2 only");
  const double h = bandwidth > 0.0 ? bandwidth : scott_bandwidth(samples);
  const int res = grid.resolution;
  const double step = (grid.hi - grid.lo) / (res - 1);

  Eigen::MatrixXd kde = Eigen::MatrixXd::Zero(res, res);
  Eigen::MatrixXd tgt(res, res);
  Eigen::VectorXd gx(2);
  for (int ix = 0; ix < res; ++ix) {
    for (int iy = 0; iy < res; ++iy) {
      gx << grid.lo + ix * step, grid.lo + iy * step;
      double acc = 0.0;
      for (Eigen::Index k = 0; k < samples.cols(); ++k)
        acc += std::exp(-0.5 * (gx - samples.col(k)).squaredNorm() / (h * h));
      kde(ix, iy) = acc;
      tgt(ix, iy) = std::exp(target.log_density(gx));
    }
  }
  const double kde_sum = kde.sum(), tgt_sum = tgt.sum();
  if (!(kde_sum > 0.0)) throw std::runtime_error("grid_kl: empty grid mass");
  kde /= kde_sum;
  tgt /= tgt_sum;
  double kl = 0.0;
  for (int ix = 0; ix < res; ++ix)
    for (int iy = 0; iy < res; ++iy)
      if (kde(ix, iy) > 0.0)
        kl += kde(ix, iy) * std::log(kde(ix, iy) / std::max(tgt(ix, iy), 1e-12));
  return kl;
}

}  // namespace pfd
