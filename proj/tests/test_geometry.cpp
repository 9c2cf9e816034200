#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ibf/geometry.hpp"
#include "ibf/invariant.hpp"
#include "test_util.hpp"

using namespace ibf;

namespace {

const MonotoneKernel& psi_majorant() {
  static const MonotoneKernel h = PsiTable::build(IsotropicModel(2, 0.05)).majorant_kernel();
  return h;
}

Vector vec2(double x, double y) {
  Vector v(2);
  v << x, y;
  return v;
}

std::vector<Segment> straight_polyline(double total, double l) {
  std::vector<Segment> out;
  for (double s = 0.0; s + l <= total + 1e-12; s += l) out.emplace_back(vec2(s, 0.0), vec2(s + l, 0.0));
  return out;
}

}  // namespace

TEST_CASE("closed-form measures") {
  CHECK(measure(Ball(Vector::Zero(2), 1.0)) == doctest::Approx(std::numbers::pi));
  CHECK(measure(axis_cylinder(3, 2.0, 0.5)) == doctest::Approx(2.0 * std::numbers::pi * 0.25));
  CHECK(unit_ball_volume(3) == doctest::Approx(4.0 * std::numbers::pi / 3.0));
  CHECK(unit_ball_volume(4) == doctest::Approx(std::numbers::pi * std::numbers::pi / 2.0));
  CHECK(measure(Box(vec2(-1, 0), vec2(1, 3))) == doctest::Approx(6.0));
  CHECK_THROWS_AS(Ball(Vector::Zero(2), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(Box(vec2(0, 0), vec2(1, 0)), std::invalid_argument);
}

TEST_CASE("measure agrees with hit ratios in the bounding box") {
  Vector axis(3);
  axis << 1.0, 1.0, 0.5;
  const std::vector<SetDescriptor> sets = {
      Ball(vec2(0.3, -1.0), 1.7),
      Box(vec2(-1, 0), vec2(2, 0.5)),
      Cylinder(Vector::Zero(3), axis.normalized(), 1.5, 0.4),
      PiecewiseCylinder({Segment(vec2(0, 0), vec2(1, 0)), Segment(vec2(0, 3), vec2(1, 4))}, 0.2),
  };
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& set : sets) {
    const auto [lo, hi] = bounding_box(set);
    const double box = (hi - lo).prod();
    const long n = 200'000;
    long hits = 0;
    for (long k = 0; k < n; ++k) {
      Vector x(lo.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = lo(i) + (hi(i) - lo(i)) * u(rng);
      hits += contains(set, x) ? 1 : 0;
    }
    const double p = static_cast<double>(hits) / n;
    CHECK(std::abs(p * box - measure(set)) <= 3.0 * box * proportion_se(p, n));
  }
}

TEST_CASE("uniform samplers") {
  NoiseStream rng(9);
  // |X|^d is uniform on [0, 1] for the unit ball.
  for (int d : {2, 3, 5}) {
    const SetDescriptor ball = Ball(Vector::Zero(d), 1.0);
    std::vector<double> r;
    std::vector<double> first;
    for (int k = 0; k < 20'000; ++k) {
      const Vector x = sample_uniform(ball, rng);
      r.push_back(std::pow(x.norm(), d));
      first.push_back(x(0));
    }
    CHECK(ks_one_sample(r, [](double v) { return std::clamp(v, 0.0, 1.0); }) < ks_critical_one_sample(20'000, 0.01));
    const auto m = mc_mean_se(first);
    CHECK(std::abs(m.mean) <= 3.0 * m.std_error);
  }
  // Coordinate histogram of a box, chi-square with 9 degrees of freedom.
  const SetDescriptor box = Box(vec2(-1, 2), vec2(3, 2.5));
  std::vector<int> bins(10, 0);
  const int n = 50'000;
  for (int k = 0; k < n; ++k) {
    const Vector x = sample_uniform(box, rng);
    REQUIRE(contains(box, x));
    bins[static_cast<std::size_t>(std::min(9.0, std::floor((x(0) + 1.0) / 4.0 * 10.0)))]++;
  }
  double chi2 = 0.0;
  for (int b : bins) chi2 += (b - n / 10.0) * (b - n / 10.0) / (n / 10.0);
  CHECK(chi2 < 21.67);  // 99% quantile
  // Every sample from a cylinder lies in it; the mean is the center.
  const SetDescriptor cyl = axis_cylinder(3, 4.0, 0.3);
  std::vector<double> xs;
  for (int k = 0; k < 10'000; ++k) {
    const Vector x = sample_uniform(cyl, rng);
    CHECK(contains(cyl, x));
    xs.push_back(x(0));
  }
  const auto m = mc_mean_se(xs);
  CHECK(std::abs(m.mean) <= 3.0 * m.std_error);
}

TEST_CASE("monotone kernel") {
  const MonotoneKernel one = MonotoneKernel::constant(1.0);
  CHECK(one.integral(7.0) == doctest::Approx(7.0));
  CHECK(one.mean_on_interval(3.0) == doctest::Approx(1.0));
  const MonotoneKernel step({1.0, 2.0}, {3.0, 1.0});
  CHECK(step(1.5) == 3.0);
  CHECK(step(5.0) == 1.0);
  CHECK(step.integral(3.0) == doctest::Approx(3.0 + 3.0 + 1.0));
  CHECK_THROWS_AS(MonotoneKernel({1.0, 2.0}, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(MonotoneKernel({1.0, 2.0}, {2.0, 1.0}, -1.0), std::invalid_argument);
  const MonotoneKernel power({1.0, 2.0}, {2.0, 1.0}, -0.5);
  CHECK(power(0.25) == doctest::Approx(4.0));
  // int_0^1 2 s^-1/2 ds = 4.
  CHECK(power.integral(1.0) == doctest::Approx(4.0));
}

TEST_CASE("cylinder kernel ratio: trivial kernel and the one-dimensional bound") {
  const auto trivial = cylinder_kernel_ratio(MonotoneKernel::constant(1.0), 2, 5.0, 0.1, 1000, 1);
  CHECK(trivial.ratio.mean == doctest::Approx(1.0));
  CHECK(trivial.reference == doctest::Approx(1.0));

  const MonotoneKernel& h = psi_majorant();
  for (double half : {5.0, 10.0, 20.0, 50.0})
    for (double delta : {0.05, 0.1, 0.5}) {
      const auto r = cylinder_kernel_ratio(h, 2, half, delta, 100'000, 11);
      INFO("L=" << half << " delta=" << delta);
      CHECK(r.ratio.mean <= r.reference + 3.0 * r.ratio.std_error);
    }
  const auto far = cylinder_kernel_ratio(h, 2, 100.0, 0.1, 100'000, 12);
  CHECK(std::abs(far.ratio.mean - 1.0) <= 0.05);
  CHECK(std::abs(far.reference - 1.0) <= 0.05);
}

TEST_CASE("pair kernel mean is invariant under rigid motions") {
  const MonotoneKernel& h = psi_majorant();
  std::mt19937_64 rng(2);
  for (int d : {2, 3}) {
    const auto base = pair_kernel_mean(h, axis_cylinder(d, 6.0, 0.2), 100'000, 3);
    const Matrix rot = test::random_rotation(d, rng);
    const Vector shift = test::random_vector(d, rng, 5.0);
    const Cylinder moved(shift, rot.col(0), 3.0, 0.2);
    const auto est = pair_kernel_mean(h, moved, 100'000, 4);
    CHECK(std::abs(est.mean - base.mean) <= 3.0 * std::hypot(est.std_error, base.std_error));
  }
}

TEST_CASE("segment extraction on a straight polyline") {
  const double l = 0.5, total = 30.0;
  const SetDescriptor domain = Box(vec2(-1, -1), vec2(31, 1));
  const auto ex = extract_segments(straight_polyline(total, l), total, domain);
  CHECK(ex.rounded_length == doctest::Approx(30.0));
  CHECK(ex.segments.size() == 10);  // L / (6 l)
  CHECK(ex.total_length() == doctest::Approx(total / 6.0));
  CHECK(ex.total_length() >= total / 7.0);
  CHECK(ex.bar_delta == doctest::Approx(l));

  // L rounds down to a multiple of 6 l.
  const auto rounded = extract_segments(straight_polyline(total, l), 28.0, domain);
  CHECK(rounded.rounded_length == doctest::Approx(27.0));
  CHECK(rounded.segments.size() == 9);

  CHECK_THROWS_AS(extract_segments(straight_polyline(total, l), 40.0, domain), std::invalid_argument);
  CHECK_THROWS_AS(extract_segments(straight_polyline(total, l), total, Box(vec2(-1, -1), vec2(10, 1))),
                  std::invalid_argument);
}

TEST_CASE("segment extraction on a winding polyline") {
  std::vector<Vector> vertices = {vec2(0, 0), vec2(4, 3), vec2(8, -2), vec2(13, 2), vec2(18, -1), vec2(24, 1)};
  const auto poly = resample_polyline(vertices, 0.25);
  for (std::size_t i = 1; i < poly.size(); ++i) {
    CHECK(poly[i].length() == doctest::Approx(0.25));
    CHECK((poly[i].a() - poly[i - 1].b()).norm() == 0.0);
  }
  const SetDescriptor domain = Ball(vec2(12, 0), 14.0);
  const double length = 20.0;
  const auto ex = extract_segments(poly, length, domain);
  CHECK(ex.total_length() >= length / 7.0);
  REQUIRE(ex.bar_delta > 0.0);

  const double delta = ex.bar_delta;
  for (std::size_t i = 0; i < ex.segments.size(); ++i)
    for (std::size_t j = i + 1; j < ex.segments.size(); ++j)
      CHECK(segment_distance(ex.segments[i], ex.segments[j]) > 2.0 * delta - 1e-12);

  // Containment of each fattened segment, by sampling.
  NoiseStream rng(6);
  for (const auto& s : ex.segments) {
    const SetDescriptor c = fatten(s, delta);
    int outside = 0;
    for (int k = 0; k < 10'000; ++k) outside += contains(domain, sample_uniform(c, rng)) ? 0 : 1;
    CHECK(outside == 0);
  }
  CHECK_NOTHROW(PiecewiseCylinder(ex.segments, delta));
}

TEST_CASE("segment helpers") {
  const Segment a(vec2(0, 0), vec2(1, 0));
  CHECK(segment_distance(a, Segment(vec2(0, 2), vec2(1, 2))) == doctest::Approx(2.0));
  CHECK(segment_distance(a, Segment(vec2(2, 1), vec2(3, 5))) == doctest::Approx(std::sqrt(2.0)));
  CHECK(segment_distance(a, Segment(vec2(0.5, -1), vec2(0.5, 1))) == doctest::Approx(0.0).scale(1.0));
  CHECK_THROWS_AS(Segment(vec2(1, 1), vec2(1, 1)), std::invalid_argument);
  CHECK_THROWS_AS(PiecewiseCylinder({a, Segment(vec2(0, 0.1), vec2(1, 0.1))}, 0.2), std::invalid_argument);
  CHECK(clearance(Ball(Vector::Zero(2), 2.0), vec2(1, 0)) == doctest::Approx(1.0));
  CHECK(clearance(Box(vec2(0, 0), vec2(4, 1)), vec2(1, 0.25)) == doctest::Approx(0.25));
}

TEST_CASE("piecewise versus straight cylinder") {
  const MonotoneKernel& h = psi_majorant();
  const Segment one(vec2(2, 3), vec2(3.2, 3.9));
  const auto single = piecewise_vs_straight(h, {one}, 0.1, 400'000, 1);
  CHECK(std::abs(single.piecewise.mean - single.straight.mean) <=
        3.0 * std::hypot(single.piecewise.std_error, single.straight.std_error));

  const auto trivial =
      piecewise_vs_straight(MonotoneKernel::constant(1.0), {one, Segment(vec2(10, 3), vec2(11.2, 3.9))}, 0.1, 500, 2);
  CHECK(trivial.piecewise.mean == doctest::Approx(1.0));
  CHECK(trivial.straight.mean == doctest::Approx(1.0));

  const auto two = piecewise_vs_straight(h, {Segment(vec2(0, 0), vec2(1, 0)), Segment(vec2(0, 10), vec2(1, 10))}, 0.1,
                                         200'000, 3);
  CHECK(two.piecewise.mean <= two.straight.mean + 3.0 * std::hypot(two.piecewise.std_error, two.straight.std_error));
  CHECK_THROWS_AS(piecewise_vs_straight(h, {Segment(vec2(0, 0), vec2(1, 0)), Segment(vec2(0, 3), vec2(2, 3))}, 0.1,
                                        100, 1),
                  std::invalid_argument);
}
