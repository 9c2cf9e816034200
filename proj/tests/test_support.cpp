#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <set>

#include <Eigen/Eigenvalues>

#include "ibf/config.hpp"
#include "ibf/factor.hpp"
#include "ibf/parallel.hpp"
#include "ibf/quadrature.hpp"
#include "ibf/rng.hpp"
#include "ibf/stats.hpp"

using namespace ibf;

TEST_CASE("config table: tables, comments, arrays") {
  const auto t = ConfigTable::parse(R"(# lab run
experiment = "dispersion"   # trailing
[model]
d = 3
alpha = 0.05
[run]
save_times = [10, 50, 1_00]
svg = false
[sets]
test = ["halfspace:0:0", "ball:0,0:1"]
name = "a # not a comment"
)");
  CHECK(t.string("experiment", "") == "dispersion");
  CHECK(t.integer("model.d", 0) == 3);
  CHECK(t.number("model.alpha", 0) == 0.05);
  CHECK(t.numbers("run.save_times", {}) == std::vector<double>{10, 50, 100});
  CHECK_FALSE(t.boolean("run.svg", true));
  CHECK(t.strings("sets.test", {}).size() == 2);
  CHECK(t.string("sets.name", "") == "a # not a comment");
  CHECK(t.number("absent", 7.0) == 7.0);
  CHECK(t.numbers("model.d", {}) == std::vector<double>{3});
}

TEST_CASE("config table: errors carry line numbers") {
  auto message = [](const char* text) {
    try {
      (void)ConfigTable::parse(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("a = 1\nb = \n").find("line 2") != std::string::npos);
  CHECK(message("a = 1\na = 2\n").find("duplicate") != std::string::npos);
  CHECK(message("[x\n").find("line 1") != std::string::npos);
  CHECK(message("a = [1, [2]]\n").find("nested") != std::string::npos);
  CHECK(message("a = word\n").find("cannot parse") != std::string::npos);
  CHECK(message("a = \"open\n").find("unterminated") != std::string::npos);
  CHECK(message("a = [1, , 2]\n").find("empty") != std::string::npos);

  const auto t = ConfigTable::parse("d = 2.5\ns = \"x\"\n");
  CHECK_THROWS_AS(t.integer("d", 0), ConfigError);
  CHECK_THROWS_AS(t.number("s", 0), ConfigError);
  CHECK_THROWS_AS(ConfigTable::load("/nonexistent/lab.toml"), ConfigError);
}

TEST_CASE("config overrides") {
  auto t = ConfigTable::parse("[model]\nalpha = 0.0\n");
  t.set_override("model.alpha=0.25");
  t.set_override("sets.test=halfspace:0:0");
  t.set_override("run.save_times=[1,2]");
  t.set_override("output.svg=false");
  CHECK(t.number("model.alpha", 0) == 0.25);
  CHECK(t.string("sets.test", "") == "halfspace:0:0");
  CHECK(t.numbers("run.save_times", {}) == std::vector<double>{1, 2});
  CHECK_FALSE(t.boolean("output.svg", true));
  CHECK_THROWS_AS(t.set_override("novalue"), ConfigError);
  CHECK_THROWS_AS(t.set_override("=3"), ConfigError);
}

TEST_CASE("mean and standard error") {
  const std::vector<double> xs = {1.0, 2.0, 3.0, 4.0};
  const auto e = mc_mean_se(xs);
  CHECK(e.mean == 2.5);
  CHECK(e.std_error == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
  CHECK(e.count == 4);
  const std::vector<double> one = {3.0};
  CHECK(mc_mean_se(one).std_error == 0.0);
  const std::vector<double> flat(7, 0.1);
  CHECK(mc_mean_se(flat).mean == 0.1);
  CHECK(mc_mean_se(flat).std_error == 0.0);
  CHECK_THROWS_AS(mc_mean_se(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("Kolmogorov-Smirnov statistics") {
  const std::vector<double> a = {1, 2, 3, 4};
  const std::vector<double> b = {5, 6, 7};
  CHECK(ks_two_sample(a, b) == 1.0);
  CHECK(ks_two_sample(a, a) == 0.0);
  const std::vector<double> c = {1, 2, 2, 3};
  const std::vector<double> e = {2, 2, 2, 2};
  CHECK(ks_two_sample(c, e) == doctest::Approx(0.25));
  // c(0.05) = 1.3581 for large samples.
  CHECK(ks_critical(1000, 1000, 0.05) == doctest::Approx(1.3581 * std::sqrt(2.0 / 1000)).epsilon(1e-4));
  CHECK(ks_critical_one_sample(100, 0.01) == doctest::Approx(1.6276 / 10.0).epsilon(1e-4));
  const std::vector<double> mid = {0.5};
  CHECK(ks_one_sample(mid, [](double x) { return x; }) == doctest::Approx(0.5));
  CHECK_THROWS_AS(ks_critical(0, 3, 0.05), std::invalid_argument);
  CHECK_THROWS_AS(ks_critical(3, 3, 1.0), std::invalid_argument);
}

TEST_CASE("slope fit, median, proportions") {
  std::vector<double> xs, ys;
  for (double x : {0.1, 0.5, 2.0, 9.0}) {
    xs.push_back(x);
    ys.push_back(3.0 * std::pow(x, -0.4));
  }
  const auto f = slope_fit(xs, ys);
  CHECK(f.slope == doctest::Approx(-0.4));
  CHECK(std::exp(f.intercept) == doctest::Approx(3.0));
  CHECK(f.residual < 1e-12);
  CHECK_THROWS_AS(slope_fit(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(slope_fit(std::vector<double>{1.0, -1.0}, std::vector<double>{1.0, 2.0}), std::invalid_argument);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK(proportion_se(0.5, 100) == doctest::Approx(0.05));
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(normal_cdf(1.959963985) == doctest::Approx(0.975).epsilon(1e-9));
}

TEST_CASE("derived seeds and streams") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  std::set<std::uint64_t> seen;
  for (std::uint64_t r = 0; r < 50; ++r)
    for (std::uint64_t p = 0; p < 50; ++p) seen.insert(derive_seed(7, {r, p}));
  CHECK(seen.size() == 2500);
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
  NoiseStream a(5), b(5);
  for (int k = 0; k < 10; ++k) CHECK(a.normal() == b.normal());
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK(worker_count() >= 1);
  CHECK_THROWS_AS(parallel_for(10,
                               [](std::size_t i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("covariance factorization") {
  Eigen::MatrixXd g = Eigen::MatrixXd::Random(6, 3);
  const Eigen::MatrixXd low_rank = g * g.transpose();
  for (auto method : {FactorMethod::Pivoted, FactorMethod::Dense}) {
    const CovFactor f = factor_covariance(low_rank, 1e-12, method);
    // Reassemble through apply() on unit vectors.
    Eigen::MatrixXd rebuilt = Eigen::MatrixXd::Zero(6, 6);
    for (int k = 0; k < 6; ++k) {
      Eigen::VectorXd out;
      f.apply(Eigen::VectorXd::Unit(6, k), out);
      rebuilt += out * out.transpose();
    }
    CHECK((rebuilt - low_rank).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK(factor_covariance(low_rank, 1e-12).rank() == 3);

  Eigen::MatrixXd indefinite = Eigen::MatrixXd::Identity(3, 3);
  indefinite(0, 0) = -1.0;
  CHECK_THROWS_AS(factor_covariance(indefinite, 1e-12), FactorizationError);
  try {
    (void)factor_covariance(indefinite, 1e-12);
  } catch (const FactorizationError& e) {
    CHECK(e.min_eigenvalue() == doctest::Approx(-1.0));
  }

  // Round-off negativity is clipped.
  Eigen::MatrixXd nearly = Eigen::MatrixXd::Ones(4, 4);
  nearly(0, 1) = nearly(1, 0) = 1.0 + 1e-15;
  const CovFactor clipped = factor_covariance(nearly, 0.0);
  CHECK(clipped.rank() >= 1);
}

TEST_CASE("Gauss-Kronrod quadrature") {
  const auto r = integrate([](double x) { return std::exp(-x * x); }, -6.0, 6.0, 1e-13);
  CHECK(r.value == doctest::Approx(std::sqrt(std::numbers::pi)).epsilon(1e-12));
  const std::vector<double> breaks = {0.0, 1.0, 2.0, std::numbers::pi};
  const auto p = integrate_panels([](double x) { return std::sin(x); }, breaks, 1e-13);
  CHECK(p.value == doctest::Approx(2.0).epsilon(1e-12));
}
