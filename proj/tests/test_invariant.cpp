#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ibf/explab.hpp"
#include "ibf/invariant.hpp"

using namespace ibf;

namespace {

// psi from its defining integral, with B_L and B_N taken straight from the
// covariance model and integrated in u by Boost's Gauss-Kronrod on [s, inf).
double psi_oracle(const IsotropicModel& m, double s) {
  auto f = [&](double u) {
    if (u > 40.0) return 0.0;
    const double bl = longitudinal(m, u), bn = transversal(m, u);
    return (bl - bn) / (u * (1.0 - bl));
  };
  const double tail =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, s, std::numeric_limits<double>::infinity(), 15,
                                                                    1e-13);
  return std::exp(-(m.d() - 1) * tail) / (1.0 - longitudinal(m, s));
}

// Density of |X - Y| for X, Y independent uniform in the unit disc.
double disc_distance_density(double r) {
  return 4.0 * r / std::numbers::pi * (std::acos(r / 2.0) - r / 2.0 * std::sqrt(1.0 - r * r / 4.0));
}

}  // namespace

TEST_CASE("psi agrees with an independent quadrature") {
  for (auto [d, alpha] : {std::pair{2, 0.05}, {2, 0.5}, {3, 0.2}, {3, 1.0}, {4, 0.7}}) {
    const IsotropicModel m(d, alpha);
    for (double s : {0.05, 0.2, 0.7, 1.5, 3.0, 6.0}) {
      INFO("d=" << d << " alpha=" << alpha << " s=" << s);
      CHECK(psi(m, s) == doctest::Approx(psi_oracle(m, s)).epsilon(1e-8));
    }
  }
  CHECK_THROWS_AS(psi(IsotropicModel(2, 0.5), 0.0), std::invalid_argument);
}

TEST_CASE("psi is identically one without a potential part") {
  for (int d : {2, 3, 5}) {
    const IsotropicModel m(d, 0.0);
    for (double s : {1e-3, 0.1, 1.0, 4.0}) CHECK(psi(m, s) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("psi tends to one far out and follows the small-s power law") {
  const IsotropicModel m(2, 0.05);
  CHECK(std::abs(psi(m, 50.0) - 1.0) < 1e-9);
  // (d-1) beta_N / beta_L - (d+1) = 2.9 / 1.1 - 3.
  CHECK(psi_small_s_exponent(m) == doctest::Approx(2.9 / 1.1 - 3.0).epsilon(1e-12));
  const auto fit = psi_asymptotics(m);
  CHECK(fit.fitted_exponent == doctest::Approx(-0.3636).epsilon(0.02 / 0.3636));
  CHECK(fit.pass);

  for (auto [d, alpha] : {std::pair{2, 0.05}, {2, 0.3}, {3, 0.1}, {3, 0.6}, {4, 0.9}}) {
    const auto a = psi_asymptotics(IsotropicModel(d, alpha));
    INFO("d=" << d << " alpha=" << alpha);
    CHECK(std::abs(a.fitted_exponent - a.target_exponent) <= 0.05);
    CHECK(std::abs(a.psi_far - 1.0) <= 1e-6);
  }
}

TEST_CASE("log slope is the derivative of log psi") {
  const IsotropicModel m(3, 0.4);
  for (double s : {0.01, 0.3, 1.0, 2.5}) {
    const double h = 1e-4;
    const double fd = (std::log(psi(m, s * std::exp(h))) - std::log(psi(m, s * std::exp(-h)))) / (2 * h);
    CHECK(psi_log_slope(m, s) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("tabulated psi interpolates within 1e-6") {
  const IsotropicModel m(2, 0.05);
  const PsiTable t = PsiTable::build(m);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double s = 1e-4 * std::pow(5e5, (k + 0.37) / 200.0);
    if (s > t.s_max()) break;
    worst = std::max(worst, std::abs(t(s) - psi(m, s)) / psi(m, s));
  }
  CHECK(worst <= 1e-6);
  CHECK(t(100.0) == 1.0);
  CHECK_THROWS_AS(t(1e-6), std::out_of_range);
  CHECK(t.extended(1e-6) > t(t.s_min()));
}

TEST_CASE("majorant is nonincreasing and dominates psi") {
  for (double alpha : {0.05, 0.5, 1.0}) {
    const PsiTable t = PsiTable::build(IsotropicModel(2, alpha), 256);
    REQUIRE(t.has_majorant());
    const auto& h = t.majorant_values();
    for (std::size_t k = 0; k < h.size(); ++k) {
      CHECK(h[k] >= t.values()[k]);
      if (k > 0) CHECK(h[k] <= h[k - 1]);
    }
    CHECK(h.back() == doctest::Approx(1.0).epsilon(1e-6));
  }
  const PsiTable c = PsiTable::constant(IsotropicModel(2, 0.05), 2.0);
  for (double v : c.majorant_values()) CHECK(v == 2.0);
}

TEST_CASE("second moment integral") {
  const IsotropicModel m(2, 0.05);
  const SetDescriptor disc = Ball(Vector::Zero(2), 1.0);
  const auto stub = second_moment_integral(PsiTable::constant(m), disc, 1000, 1);
  CHECK(stub.mean == doctest::Approx(std::numbers::pi * std::numbers::pi).epsilon(1e-14));
  CHECK(stub.std_error == 0.0);

  const PsiTable t = PsiTable::build(m);
  // Below r = 1e-10 the integrand is O(r^0.64) and contributes nothing at
  // this accuracy.
  const double oracle = std::numbers::pi * std::numbers::pi *
                        boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                            [&](double r) { return disc_distance_density(r) * psi(m, r); }, 1e-10, 2.0, 12, 1e-10);
  const auto mc = second_moment_integral(t, disc, 400'000, 7);
  CHECK(std::abs(mc.mean - oracle) <= 3.0 * mc.std_error);
  CHECK(mc.std_error / mc.mean < 0.01);

  CHECK_THROWS_AS(second_moment_integral(PsiTable::build(IsotropicModel(2, 1.0), 32), disc, 100, 1),
                  std::domain_error);
  CHECK_THROWS_AS(second_moment_integral(t, Ball(Vector::Zero(3), 1.0), 100, 1), std::invalid_argument);
}

TEST_CASE("persistence lower bound") {
  const IsotropicModel m(2, 0.05);
  const SetDescriptor disc = Ball(Vector::Zero(2), 1.0);
  CHECK(persistence_lower_bound(PsiTable::constant(m), disc, 500, 3).bound == 1.0);

  const PsiTable t = PsiTable::build(m);
  const auto small = persistence_lower_bound(t, disc, 100'000, 3);
  CHECK(small.bound > 0.0);
  CHECK(small.bound <= 1.0);

  double previous = 0.0;
  for (double length : {5.0, 20.0, 50.0}) {
    const SetDescriptor z = axis_cylinder(2, length, 0.1);
    const auto b = persistence_lower_bound(t, z, 200'000, 5);
    INFO("L=" << length);
    CHECK(b.bound >= previous - 3.0 * b.std_error);
    previous = b.bound;
    if (length == 50.0) CHECK(b.bound >= 0.9);
  }

  CHECK_THROWS_AS(persistence_lower_bound(PsiTable::build(IsotropicModel(2, 1.0), 32), disc, 100, 1),
                  std::domain_error);
}
