#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pfd/metrics.hpp"
#include "pfd/mixture.hpp"

using namespace pfd;

namespace {
Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}
}  // namespace

TEST_CASE("sliced_wasserstein basics") {
  std::mt19937_64 rng(3);
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(2, 50);
  CHECK(sliced_wasserstein(a, a, 32, rng) == 0.0);

  // Identity on permuted multisets.
  Eigen::MatrixXd shuffled = a;
  shuffled.col(0).swap(shuffled.col(49));
  shuffled.col(7).swap(shuffled.col(21));
  CHECK(sliced_wasserstein(a, shuffled, 32, rng) == 0.0);

  // 1D point masses at 0 and 1: every unit projection gives distance 1.
  Eigen::MatrixXd p0 = Eigen::MatrixXd::Zero(1, 1), p1 = Eigen::MatrixXd::Ones(1, 1);
  CHECK(sliced_wasserstein(p0, p1, 16, rng) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(sliced_wasserstein(Eigen::MatrixXd(2, 0), a, 8, rng), std::invalid_argument);
  CHECK_THROWS_AS(sliced_wasserstein(Eigen::MatrixXd::Zero(3, 4), a, 8, rng),
                  std::invalid_argument);
}

TEST_CASE("sliced_wasserstein is symmetric under a shared projection set") {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(2, 40);
  const Eigen::MatrixXd b = 0.5 * Eigen::MatrixXd::Random(2, 60);
  std::mt19937_64 r1(11), r2(11);
  CHECK(sliced_wasserstein(a, b, 64, r1) == sliced_wasserstein(b, a, 64, r2));
}

TEST_CASE("sliced_wasserstein between shifted Gaussians matches the quadrature value") {
  // N(0, I) vs N((2,0), I): projections along u differ only by the mean shift
  // 2|u_x|, so the 1D W2 is 2|cos(theta)| and the sliced value is the angular
  // average 4/pi.
  const int n_theta = 20000;
  double expected = 0.0;
  for (int i = 0; i < n_theta; ++i) {
    const double theta = 2.0 * std::numbers::pi * (i + 0.5) / n_theta;
    expected += 2.0 * std::abs(std::cos(theta));
  }
  expected /= n_theta;

  std::mt19937_64 rng(17);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = 10000;
  Eigen::MatrixXd a(2, n), b(2, n);
  for (int i = 0; i < n; ++i) {
    a.col(i) = vec2(gauss(rng), gauss(rng));
    b.col(i) = vec2(2.0 + gauss(rng), gauss(rng));
  }
  const double est = sliced_wasserstein(a, b, 100, rng);
  CHECK(std::abs(est - expected) < 0.15 * expected);
}

TEST_CASE("ring_coverage: full uniform coverage") {
  RingSpec spec;
  spec.radii = {1.0, 2.0};
  spec.thickness = 0.05;
  const int per_ring = 256;
  Eigen::MatrixXd samples(2, 2 * per_ring);
  for (int r = 0; r < 2; ++r)
    for (int i = 0; i < per_ring; ++i) {
      const double angle = 2.0 * std::numbers::pi * i / per_ring;
      samples.col(r * per_ring + i) =
          spec.radii[r] * vec2(std::cos(angle), std::sin(angle));
    }
  const auto report = ring_coverage(samples, spec, 0.2, 16);
  CHECK(report.occupancy == 1.0);
  CHECK_FALSE(report.collapsed);
  CHECK(report.band_mass[0] == doctest::Approx(0.5));
  CHECK(report.band_mass[1] == doctest::Approx(0.5));
}

TEST_CASE("ring_coverage: degenerate cluster is collapsed") {
  RingSpec spec;
  spec.radii = {1.0, 2.0, 3.0};
  spec.thickness = 0.05;
  Eigen::MatrixXd samples(2, 500);
  for (int i = 0; i < 500; ++i) samples.col(i) = vec2(1.0, 0.0);
  const auto report = ring_coverage(samples, spec, 0.3, 16);
  CHECK(report.band_mass[0] == doctest::Approx(1.0));
  CHECK(report.occupancy <= 1.0 / (16.0 * 3.0) + 1e-12);
  CHECK(report.collapsed);
}

TEST_CASE("ring_coverage: direct mixture samples spread mass evenly") {
  RingSpec spec;
  spec.radii = {1.0, 2.0, 3.0};
  spec.modes_per_ring = 64;
  spec.thickness = 0.05;
  const auto mix = ring_to_mixture(spec);
  std::mt19937_64 rng(23);
  const Eigen::MatrixXd samples = mix.sample(rng, 10000);
  const auto report = ring_coverage(samples, spec, 0.25, 16);
  for (double mass : report.band_mass) CHECK(std::abs(mass - 1.0 / 3.0) < 0.05);
  CHECK_FALSE(report.collapsed);
}

TEST_CASE("ring_coverage is rotation invariant") {
  RingSpec spec;
  spec.radii = {1.0, 2.0};
  spec.thickness = 0.05;
  std::mt19937_64 rng(29);
  const auto mix = ring_to_mixture(spec);
  const Eigen::MatrixXd samples = mix.sample(rng, 5000);

  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  const double phi = u(rng);
  Eigen::Matrix2d rot;
  rot << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
  const Eigen::MatrixXd rotated = rot * samples;

  const auto a = ring_coverage(samples, spec, 0.2, 16);
  const auto b = ring_coverage(rotated, spec, 0.2, 16);
  for (std::size_t r = 0; r < spec.radii.size(); ++r)
    CHECK(a.band_mass[r] == doctest::Approx(b.band_mass[r]).epsilon(1e-12));
  CHECK(std::abs(a.occupancy - b.occupancy) <= 2.0 / (16.0 * 2.0) + 1e-12);
}

TEST_CASE("ring_coverage validates the band width") {
  RingSpec spec;
  spec.radii = {1.0, 1.6};
  spec.thickness = 0.05;
  Eigen::MatrixXd samples = Eigen::MatrixXd::Random(2, 10);
  CHECK_THROWS_AS(ring_coverage(samples, spec, 0.31, 16), std::invalid_argument);
  CHECK_THROWS_AS(ring_coverage(samples, spec, 0.0, 16), std::invalid_argument);
}

TEST_CASE("grid_kl self-consistency and discrimination") {
  Eigen::VectorXd w(2);
  w << 0.5, 0.5;
  const auto target =
      GaussianMixture::isotropic(w, {vec2(-1.0, 0.0), vec2(1.0, 0.0)}, {0.6, 0.6});
  std::mt19937_64 rng(31);
  const Eigen::MatrixXd own = target.sample(rng, 10000);
  const GridSpec grid;
  CHECK(grid_kl(own, target, grid) < 0.05);

  const auto distant = GaussianMixture::single(vec2(2.5, 2.5), 0.3);
  const Eigen::MatrixXd far = distant.sample(rng, 10000);
  const double kl_far = grid_kl(far, target, grid);
  CHECK(kl_far > 1.0);

  // Nonnegativity on assorted sample sets.
  const Eigen::MatrixXd mixed = 2.0 * Eigen::MatrixXd::Random(2, 500);
  CHECK(grid_kl(mixed, target, grid) >= 0.0);
  CHECK(grid_kl(own, target, grid) >= 0.0);

  Eigen::MatrixXd bad = Eigen::MatrixXd::Random(3, 10);
  CHECK_THROWS_AS(grid_kl(bad, target, grid), std::invalid_argument);
}
