#pragma once

#include <cstdint>
#include <vector>

#include "ibf/covmodel.hpp"
#include "ibf/geometry.hpp"
#include "ibf/kernel.hpp"
#include "ibf/stats.hpp"

namespace ibf {

/// Two-point invariant density
///
///   psi(s) = exp(-(d-1) * int_s^inf (B_L - B_N) / (u (1 - B_L)) du) / (1 - B_L(s)),
///
/// by adaptive Gauss-Kronrod on unit panels in log u. The integrand decays
/// like a Gaussian, so the range is cut at 12 ell (tail below 1e-28).
/// Throws std::invalid_argument for s <= 0.
double psi(const IsotropicModel& model, double s);

/// d log psi / d log s, in closed form.
double psi_log_slope(const IsotropicModel& model, double s);

/// psi tabulated on a log-spaced grid over [1e-4 ell, 50 ell], interpolated
/// by cubic Hermite in (log s, log psi) with exact slopes, and its
/// nonincreasing majorant h(s_k) = max_{j >= k} psi(s_j).
class PsiTable {
 public:
  static constexpr double kMinScale = 1e-4;
  static constexpr double kMaxScale = 50.0;

  /// Evaluates psi at `points` grid abscissae.
  static PsiTable build(const IsotropicModel& model, int points = 512);

  /// Constant-valued table (psi == value); a test double for the moment
  /// integrals.
  static PsiTable constant(const IsotropicModel& model, double value = 1.0, int points = 16);

  /// Table from raw values; log-slopes for interpolation come from finite
  /// differences. The majorant is not filled.
  PsiTable(const IsotropicModel& model, std::vector<double> grid, std::vector<double> values);

  const IsotropicModel& model() const { return model_; }
  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& majorant_values() const { return majorant_; }
  bool has_majorant() const { return !majorant_.empty(); }

  double s_min() const { return grid_.front(); }
  double s_max() const { return grid_.back(); }

  /// Interpolated psi(s). Throws std::out_of_range below the grid; returns 1
  /// beyond it.
  double operator()(double s) const;

  /// As operator(), but below the grid continues the end point as a power law
  /// with the end slope. Used by integrators whose samples can come
  /// arbitrarily close to the diagonal.
  double extended(double s) const;

  /// Step-function majorant as a kernel. Below the grid it follows the
  /// small-s power law when that decays to zero exponent from below.
  MonotoneKernel majorant_kernel() const;

 private:
  friend PsiTable monotone_majorant(PsiTable table);

  PsiTable(const IsotropicModel& model, std::vector<double> grid, std::vector<double> values,
           std::vector<double> log_slopes);

  double hermite(double s) const;

  IsotropicModel model_;
  std::vector<double> grid_;
  std::vector<double> values_;
  std::vector<double> log_slopes_;
  std::vector<double> majorant_;
};

/// Fills h(s_k) = max_{j >= k} psi(s_j).
PsiTable monotone_majorant(PsiTable table);

/// Monte Carlo estimate of int_{A x A} psi(|x - y|) dx dy with i.i.d. uniform
/// pairs. Throws std::domain_error unless lambda_1 > 0 (psi is then locally
/// integrable at the diagonal).
McEstimate second_moment_integral(const PsiTable& table, const SetDescriptor& set, long n_samples,
                                  std::uint64_t seed);

struct PersistenceBound {
  double bound = 0.0;  // lambda(A)^2 / second moment, clamped to (0, 1]
  double std_error = 0.0;
  McEstimate second_moment;
};

/// Second-moment (Paley-Zygmund) lower bound on P(V(A) != 0).
PersistenceBound persistence_lower_bound(const PsiTable& table, const SetDescriptor& set, long n_samples,
                                         std::uint64_t seed);

}  // namespace ibf
