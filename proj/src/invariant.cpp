#include "ibf/invariant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ibf/quadrature.hpp"

namespace ibf {

namespace {

constexpr double kCutoff = 12.0;  // in units of ell

// (B_L - B_N) / (1 - B_L) at scaled separation u; the integrand in log u.
double log_integrand(const IsotropicModel& model, double u) {
  const double u2 = u * u;
  const double g = std::exp(-0.5 * u2);
  const double one_minus_bl = -std::expm1(-0.5 * u2) + model.alpha() * u2 * g;
  return model.k2() * u2 * g / one_minus_bl;
}

double tail_integral(const IsotropicModel& model, double u) {
  if (u >= kCutoff) return 0.0;
  const double lo = std::log(u);
  const double hi = std::log(kCutoff);
  std::vector<double> breaks;
  for (double v = lo; v < hi; v += 1.0) breaks.push_back(v);
  breaks.push_back(hi);
  auto f = [&](double v) { return log_integrand(model, std::exp(v)); };
  return integrate_panels(f, breaks, 1e-10).value;
}

std::vector<double> log_grid(double lo, double hi, int points) {
  std::vector<double> grid(static_cast<std::size_t>(points));
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (int i = 0; i < points; ++i) grid[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * i / (points - 1));
  grid.back() = hi;
  return grid;
}

}  // namespace

double psi(const IsotropicModel& model, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("psi: separation must be positive");
  const double u = s / model.ell();
  return std::exp(-(model.d() - 1) * tail_integral(model, u)) / one_minus_longitudinal(model, s);
}

double psi_log_slope(const IsotropicModel& model, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("psi_log_slope: separation must be positive");
  const double u = s / model.ell();
  const double u2 = u * u;
  const double g = std::exp(-0.5 * u2);
  const double a = model.alpha();
  const double oml = -std::expm1(-0.5 * u2) + a * u2 * g;
  // s d(1 - B_L)/ds = u^2 g (1 + 2 a - a u^2).
  const double dlog_oml = u2 * g * (1.0 + 2.0 * a - a * u2) / oml;
  return -dlog_oml + (model.d() - 1) * log_integrand(model, u);
}

PsiTable::PsiTable(const IsotropicModel& model, std::vector<double> grid, std::vector<double> values,
                   std::vector<double> log_slopes)
    : model_(model), grid_(std::move(grid)), values_(std::move(values)), log_slopes_(std::move(log_slopes)) {}

PsiTable::PsiTable(const IsotropicModel& model, std::vector<double> grid, std::vector<double> values)
    : model_(model), grid_(std::move(grid)), values_(std::move(values)) {
  if (grid_.size() < 2 || grid_.size() != values_.size())
    throw std::invalid_argument("psi table: need at least two grid points with matching values");
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    if (!(grid_[i] > 0.0) || (i > 0 && !(grid_[i] > grid_[i - 1])))
      throw std::invalid_argument("psi table: grid must be positive and increasing");
    if (!(values_[i] > 0.0)) throw std::invalid_argument("psi table: values must be positive");
  }
  const std::size_t m = grid_.size();
  log_slopes_.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == m ? m - 1 : i + 1;
    log_slopes_[i] = (std::log(values_[hi]) - std::log(values_[lo])) / (std::log(grid_[hi]) - std::log(grid_[lo]));
  }
}

PsiTable PsiTable::build(const IsotropicModel& model, int points) {
  if (points < 2) throw std::invalid_argument("psi table: need at least two points");
  auto grid = log_grid(kMinScale * model.ell(), kMaxScale * model.ell(), points);
  std::vector<double> values(grid.size());
  std::vector<double> slopes(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    values[i] = psi(model, grid[i]);
    slopes[i] = psi_log_slope(model, grid[i]);
  }
  return monotone_majorant(PsiTable(model, std::move(grid), std::move(values), std::move(slopes)));
}

PsiTable PsiTable::constant(const IsotropicModel& model, double value, int points) {
  if (!(value > 0.0)) throw std::invalid_argument("psi table: constant must be positive");
  auto grid = log_grid(kMinScale * model.ell(), kMaxScale * model.ell(), points);
  std::vector<double> values(grid.size(), value);
  std::vector<double> slopes(grid.size(), 0.0);
  return monotone_majorant(PsiTable(model, std::move(grid), std::move(values), std::move(slopes)));
}

double PsiTable::hermite(double s) const {
  const auto it = std::upper_bound(grid_.begin(), grid_.end(), s);
  std::size_t k = static_cast<std::size_t>(it - grid_.begin());
  k = std::clamp<std::size_t>(k, 1, grid_.size() - 1) - 1;
  const double x0 = std::log(grid_[k]);
  const double x1 = std::log(grid_[k + 1]);
  const double h = x1 - x0;
  const double t = (std::log(s) - x0) / h;
  const double y0 = std::log(values_[k]);
  const double y1 = std::log(values_[k + 1]);
  const double t2 = t * t;
  const double t3 = t2 * t;
  const double h00 = 2 * t3 - 3 * t2 + 1;
  const double h10 = t3 - 2 * t2 + t;
  const double h01 = -2 * t3 + 3 * t2;
  const double h11 = t3 - t2;
  return std::exp(h00 * y0 + h10 * h * log_slopes_[k] + h01 * y1 + h11 * h * log_slopes_[k + 1]);
}

double PsiTable::operator()(double s) const {
  if (s < grid_.front()) throw std::out_of_range("psi table: separation below the tabulated range");
  if (s > grid_.back()) return 1.0;
  return hermite(s);
}

double PsiTable::extended(double s) const {
  if (!(s > 0.0)) throw std::invalid_argument("psi table: separation must be positive");
  if (s < grid_.front()) return values_.front() * std::pow(s / grid_.front(), log_slopes_.front());
  return (*this)(s);
}

MonotoneKernel PsiTable::majorant_kernel() const {
  if (!has_majorant()) throw std::logic_error("psi table: majorant not filled");
  const double mu = std::clamp(log_slopes_.front(), -1.0 + 1e-12, 0.0);
  if (log_slopes_.front() <= -1.0)
    throw std::domain_error("psi table: small-s exponent <= -1, the majorant is not locally integrable");
  return MonotoneKernel(grid_, majorant_, mu);
}

PsiTable monotone_majorant(PsiTable table) {
  const std::size_t m = table.values_.size();
  table.majorant_.assign(m, 0.0);
  double running = table.values_[m - 1];
  for (std::size_t k = m; k-- > 0;) {
    running = std::max(running, table.values_[k]);
    table.majorant_[k] = running;
  }
  return table;
}

McEstimate second_moment_integral(const PsiTable& table, const SetDescriptor& set, long n_samples,
                                  std::uint64_t seed) {
  const double l1 = top_lyapunov(table.model());
  if (!(l1 > 0.0))
    throw std::domain_error("second_moment_integral: requires lambda_1 > 0 (psi is not integrable at the diagonal)");
  if (n_samples < 2) throw std::invalid_argument("second_moment_integral: need at least two samples");
  if (dimension(set) != table.model().d()) throw std::invalid_argument("second_moment_integral: dimension mismatch");
  const double vol = measure(set);
  NoiseStream rng(seed);
  std::vector<double> vals(static_cast<std::size_t>(n_samples));
  for (auto& v : vals) {
    const Vector x = sample_uniform(set, rng);
    const Vector y = sample_uniform(set, rng);
    const double r = (x - y).norm();
    v = r > 0.0 ? vol * vol * table.extended(r) : 0.0;
  }
  return mc_mean_se(vals);
}

PersistenceBound persistence_lower_bound(const PsiTable& table, const SetDescriptor& set, long n_samples,
                                         std::uint64_t seed) {
  PersistenceBound out;
  out.second_moment = second_moment_integral(table, set, n_samples, seed);
  const double vol = measure(set);
  const double raw = vol * vol / out.second_moment.mean;
  out.bound = std::min(1.0, raw);
  // Delta method: d(a / m) = a dm / m^2.
  out.std_error = raw * out.second_moment.std_error / out.second_moment.mean;
  return out;
}

}  // namespace ibf
