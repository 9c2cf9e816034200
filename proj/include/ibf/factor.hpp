#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace ibf {

/// Raised when a covariance matrix is indefinite beyond round-off.
class FactorizationError : public std::runtime_error {
 public:
  FactorizationError(const std::string& what, double min_eigenvalue)
      : std::runtime_error(what), min_eigenvalue_(min_eigenvalue) {}
  double min_eigenvalue() const { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

/// cov ~= factor * factor^T with factor n x rank. Column c of the factor is
/// driven by canonical normal number source[c], so a draw is
/// factor * z(source) for a canonical standard normal vector z of length n.
struct CovFactor {
  // n x rank (extra trailing columns are ignored), or square with only the
  // lower triangle meaningful when `triangular`.
  Eigen::MatrixXd factor;
  // Lower triangular Cholesky factor with source = 0..n-1.
  bool triangular = false;
  std::vector<int> source;
  bool eigen_fallback = false;
  // Magnitude of the most negative eigenvalue clipped by the fallback.
  double clipped = 0.0;
  // Number of pivots above the truncation level; for the dense path an
  // estimate from the Cholesky diagonal.
  int numerical_rank = 0;

  int rank() const { return static_cast<int>(source.size()); }

  /// out = factor * z(source).
  void apply(const Eigen::VectorXd& z, Eigen::VectorXd& out) const;
};

enum class FactorMethod {
  // Blocked Cholesky of cov + jitter * Id; falls back to Pivoted on failure.
  Dense,
  // Diagonally pivoted Cholesky truncated at the numerical rank.
  Pivoted,
};

/// Cheaper method for a matrix like the one that produced `previous`: the
/// pivoted factorization costs about n r^2 / 2 in matrix-vector products, the
/// dense one n^3 / 3 in blocked products.
FactorMethod preferred_method(const CovFactor& previous);

/// Diagonally pivoted Cholesky that stops once every remaining Schur pivot is
/// below jitter * max(1, max diagonal); rank-deficient PSD matrices therefore
/// factor exactly at their numerical rank. Indefinite input falls back to a
/// symmetric eigendecomposition with negative eigenvalues clipped to zero;
/// throws FactorizationError when the most negative eigenvalue exceeds
/// round-off.
CovFactor factor_covariance(const Eigen::MatrixXd& cov, double jitter,
                            FactorMethod method = FactorMethod::Pivoted);

/// Same, reusing the storage of `out`; `cov` is used as scratch and may be
/// swapped with the old factor storage.
void factor_covariance_inplace(Eigen::MatrixXd& cov, double jitter, FactorMethod method, CovFactor& out);

}  // namespace ibf
