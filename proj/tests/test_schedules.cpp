#include <doctest.h>

#include <cmath>
#include <random>

#include "pfd/schedules.hpp"

using pfd::NoiseSchedule;

namespace {

// Trapezoid quadrature reference for checking closed-form beta integrals.
double numeric_alpha(double beta0, double beta1, double t, int n = 200000) {
  double acc = 0.0;
  const double h = t / n;
  auto beta = [&](double u) { return beta0 + (beta1 - beta0) * u; };
  for (int i = 0; i < n; ++i) acc += 0.5 * h * (beta(i * h) + beta((i + 1) * h));
  return std::exp(-acc);
}

}  // namespace

TEST_CASE("alpha_at closed forms") {
  const auto vp_const = NoiseSchedule::vp_constant(2.0);
  CHECK(vp_const.alpha_at(1.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-14));

  const auto ve = NoiseSchedule::ve_linear(3.0);
  CHECK(ve.alpha_at(0.7) == 1.0);

  const auto vp_lin = NoiseSchedule::vp_linear(0.1, 20.0);
  CHECK(vp_lin.alpha_at(1.0) == doctest::Approx(std::exp(-(0.1 + 20.0) / 2.0)).epsilon(1e-14));
  for (double t : {0.2, 0.55, 0.9})
    CHECK(vp_lin.alpha_at(t) == doctest::Approx(numeric_alpha(0.1, 20.0, t)).epsilon(1e-8));

  CHECK_THROWS_AS(vp_lin.alpha_at(-0.1), std::domain_error);
  CHECK_THROWS_AS(vp_lin.alpha_at(1.5), std::domain_error);
}

TEST_CASE("alpha_at custom beta falls back to quadrature") {
  const auto custom = NoiseSchedule::vp_custom([](double t) { return 2.0 + std::sin(t); });
  // int_0^t (2 + sin) = 2t + 1 - cos(t)
  for (double t : {0.1, 0.5, 1.0})
    CHECK(custom.alpha_at(t) ==
          doctest::Approx(std::exp(-(2.0 * t + 1.0 - std::cos(t)))).epsilon(1e-9));
}

TEST_CASE("sigma_at") {
  const auto ve = NoiseSchedule::ve_linear(1.0);
  CHECK(ve.sigma_at(0.0) == 0.0);
  CHECK(ve.sigma_at(0.3) == doctest::Approx(0.3));

  const auto vp = NoiseSchedule::vp_constant(2.0);
  CHECK(vp.sigma_at(0.0) == 0.0);
  // alpha = 0.5 at t = log(2)/2
  const double t_half = std::log(2.0) / 2.0;
  CHECK(vp.sigma_at(t_half) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sigma monotone increasing and VP identity alpha (1 + sigma^2) = 1") {
  for (const auto& s : {NoiseSchedule::vp_linear(0.1, 20.0), NoiseSchedule::ve_linear(2.0)}) {
    double prev = 0.0;
    for (int i = 1; i <= 50; ++i) {
      const double t = i / 50.0;
      const double sig = s.sigma_at(t);
      CHECK(sig > prev);
      prev = sig;
      if (s.kind() == pfd::ScheduleKind::VP)
        CHECK(s.alpha_at(t) * (1.0 + sig * sig) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("scale_factor") {
  const auto ve = NoiseSchedule::ve_linear(1.0);
  CHECK(ve.scale_factor(0.2, 0.9).value == 1.0);

  const auto vp = NoiseSchedule::vp_constant(2.0);
  CHECK(vp.scale_factor(0.0, 1.0).value == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));

  const auto vp_lin = NoiseSchedule::vp_linear(0.1, 20.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 40; ++i) {
    const double s = u(rng), t = u(rng), mid = u(rng);
    // c(s,t) = sqrt(alpha_t / alpha_s)
    CHECK(vp_lin.scale_factor(s, t).value ==
          doctest::Approx(std::sqrt(vp_lin.alpha_at(t) / vp_lin.alpha_at(s))).epsilon(1e-12));
    // composition
    const double lhs = vp_lin.scale_factor(s, mid).value * vp_lin.scale_factor(mid, t).value;
    CHECK(std::abs(lhs - vp_lin.scale_factor(s, t).value) < 1e-10);
    // inverse
    CHECK(vp_lin.scale_factor(s, t).value * vp_lin.scale_factor(t, s).value ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(vp_lin.scale_factor(0.4, 0.4).value == 1.0);
}

TEST_CASE("theorem_weight") {
  const auto ve = NoiseSchedule::ve_linear(1.0);  // g(t)^2 = 2t
  CHECK(ve.theorem_weight(1.0) == 0.0);
  CHECK(ve.theorem_weight(0.5) == doctest::Approx(0.25).epsilon(1e-14));

  const auto vp = NoiseSchedule::vp_constant(2.0);
  // w(0.5) = 1/2 * 0.5 * 2 * c(0.5,0)^2, c(0.5,0)^2 = 1/alpha(0.5) = e^1
  CHECK(vp.theorem_weight(0.5) == doctest::Approx(0.5 * std::exp(1.0)).epsilon(1e-12));

  for (int i = 0; i <= 20; ++i) {
    const double t = i / 20.0;
    CHECK(vp.theorem_weight(t) >= 0.0);
    CHECK(ve.theorem_weight(t) >= 0.0);
  }
}

TEST_CASE("perturb") {
  Eigen::VectorXd x0(2), noise(2);

  x0 << 2.0, 0.0;
  noise << 0.0, 1.0;
  const auto vp = NoiseSchedule::vp_constant(2.0);
  CHECK((vp.perturb(x0, 0.0, noise) - x0).norm() == 0.0);
  // alpha = 0.25 at t = log(4)/2
  const double t = std::log(4.0) / 2.0;
  const Eigen::VectorXd out = vp.perturb(x0, t, noise);
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(std::sqrt(0.75)).epsilon(1e-12));

  const auto ve = NoiseSchedule::ve_linear(1.0);
  Eigen::VectorXd y0(2), w(2);
  y0 << 1.0, 1.0;
  w << 2.0, -2.0;
  const Eigen::VectorXd z = ve.perturb(y0, 0.5, w);
  CHECK(z[0] == doctest::Approx(2.0));
  CHECK(z[1] == doctest::Approx(0.0));

  Eigen::VectorXd bad(3);
  CHECK_THROWS_AS(ve.perturb(y0, 0.5, bad), std::invalid_argument);
}

TEST_CASE("time_from_sigma inverts sigma_at") {
  for (const auto& s : {NoiseSchedule::vp_linear(0.1, 20.0), NoiseSchedule::vp_constant(2.0),
                        NoiseSchedule::ve_linear(2.5)}) {
    for (int i = 1; i <= 20; ++i) {
      const double t = i / 20.0;
      CHECK(s.time_from_sigma(s.sigma_at(t)) == doctest::Approx(t).epsilon(1e-10));
    }
  }
  const auto custom = NoiseSchedule::vp_custom([](double t) { return 2.0 + std::sin(t); });
  CHECK(custom.time_from_sigma(custom.sigma_at(0.6)) == doctest::Approx(0.6).epsilon(1e-8));
}
