#pragma once

#include <vector>

namespace ibf {

/// Nonincreasing radial kernel h(s), s > 0, tabulated on an increasing grid.
///
/// Between grid points h is the left value (a nonincreasing step function);
/// beyond the last point it stays at the last value; below the first point it
/// follows h_1 (s / s_1)^mu with a power mu in (-1, 0].
class MonotoneKernel {
 public:
  /// Throws std::invalid_argument if the values increase anywhere, the grid
  /// is not strictly increasing, or mu is outside (-1, 0].
  MonotoneKernel(std::vector<double> grid, std::vector<double> values, double left_exponent = 0.0);

  static MonotoneKernel constant(double value);

  double operator()(double s) const;

  /// Integral of h over [0, upper].
  double integral(double upper) const;

  /// (1 / 2L) * integral of h(|r|) over [-L, L].
  double mean_on_interval(double half_length) const { return integral(half_length) / half_length; }

  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  double left_exponent() const { return left_exponent_; }

 private:
  std::vector<double> grid_;
  std::vector<double> values_;
  double left_exponent_;
};

}  // namespace ibf
