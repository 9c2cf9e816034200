#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace ibf {

/// Sample mean with its Monte Carlo standard error.
struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  long count = 0;
};

/// Throws std::invalid_argument on empty input. A single sample has SE 0.
McEstimate mc_mean_se(std::span<const double> samples);

/// Two-sample Kolmogorov-Smirnov statistic sup |F_x - F_y|.
double ks_two_sample(std::span<const double> xs, std::span<const double> ys);

/// Asymptotic critical value c(level) sqrt((n + m) / (n m)),
/// c(level) = sqrt(-log(level / 2) / 2).
double ks_critical(long n, long m, double level);

/// One-sample KS statistic against a continuous CDF.
template <class Cdf>
double ks_one_sample(std::vector<double> xs, const Cdf& cdf);

/// Asymptotic one-sample critical value c(level) / sqrt(n).
double ks_critical_one_sample(long n, double level);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  // Root-mean-square residual of the fit.
  double residual = 0.0;
};

/// Least-squares line through (log x, log y). Throws on fewer than two points
/// or nonpositive coordinates.
SlopeFit slope_fit(std::span<const double> xs, std::span<const double> ys);

double normal_cdf(double x);

/// Median of a copy of the samples.
double median(std::vector<double> xs);

/// Standard error of a binomial proportion estimate.
double proportion_se(double p, long n);

template <class Cdf>
double ks_one_sample(std::vector<double> xs, const Cdf& cdf) {
  if (xs.empty()) throw std::invalid_argument("ks_one_sample: empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

}  // namespace ibf
