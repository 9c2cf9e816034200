#include "ibf/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ibf {

MonotoneKernel::MonotoneKernel(std::vector<double> grid, std::vector<double> values, double left_exponent)
    : grid_(std::move(grid)), values_(std::move(values)), left_exponent_(left_exponent) {
  if (grid_.empty() || grid_.size() != values_.size())
    throw std::invalid_argument("kernel grid and values must be nonempty and of equal length");
  if (!(grid_.front() > 0.0)) throw std::invalid_argument("kernel grid must be positive");
  for (std::size_t i = 1; i < grid_.size(); ++i) {
    if (!(grid_[i] > grid_[i - 1])) throw std::invalid_argument("kernel grid must be strictly increasing");
    if (values_[i] > values_[i - 1]) throw std::invalid_argument("kernel is not nonincreasing");
  }
  if (!(left_exponent_ > -1.0 && left_exponent_ <= 0.0))
    throw std::invalid_argument("kernel left exponent must lie in (-1, 0]");
}

MonotoneKernel MonotoneKernel::constant(double value) { return MonotoneKernel({1.0}, {value}, 0.0); }

double MonotoneKernel::operator()(double s) const {
  if (s < grid_.front()) {
    if (left_exponent_ == 0.0) return values_.front();
    return values_.front() * std::pow(s / grid_.front(), left_exponent_);
  }
  const auto it = std::upper_bound(grid_.begin(), grid_.end(), s);
  return values_[static_cast<std::size_t>(it - grid_.begin()) - 1];
}

double MonotoneKernel::integral(double upper) const {
  if (!(upper >= 0.0)) throw std::invalid_argument("kernel integral bound must be nonnegative");
  const double s1 = grid_.front();
  if (upper <= s1) return values_.front() * s1 * std::pow(upper / s1, left_exponent_ + 1.0) / (left_exponent_ + 1.0);
  double total = values_.front() * s1 / (left_exponent_ + 1.0);
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    const double lo = grid_[i];
    if (lo >= upper) break;
    const double hi = i + 1 < grid_.size() ? std::min(grid_[i + 1], upper) : upper;
    total += values_[i] * (hi - lo);
  }
  return total;
}

}  // namespace ibf
