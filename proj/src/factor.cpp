#include "ibf/factor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ibf {

void CovFactor::apply(const Eigen::VectorXd& z, Eigen::VectorXd& out) const {
  if (triangular) {
    out.noalias() = factor.triangularView<Eigen::Lower>() * z.head(factor.cols());
    return;
  }
  const int r = rank();
  Eigen::VectorXd zs(r);
  for (int c = 0; c < r; ++c) zs(c) = z(source[static_cast<std::size_t>(c)]);
  out.noalias() = factor.leftCols(r) * zs;
}

namespace {

CovFactor eigen_factor(const Eigen::MatrixXd& cov, double scale) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw FactorizationError("eigendecomposition did not converge", std::nan(""));
  const double min_ev = es.eigenvalues().minCoeff();
  if (min_ev < -1e-8 * scale) {
    std::ostringstream msg;
    msg << "covariance is indefinite: minimum eigenvalue " << min_ev;
    throw FactorizationError(msg.str(), min_ev);
  }
  const int n = static_cast<int>(cov.rows());
  CovFactor out;
  out.eigen_fallback = true;
  out.clipped = min_ev < 0.0 ? -min_ev : 0.0;
  out.factor = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  out.source.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.source[static_cast<std::size_t>(i)] = i;
  out.numerical_rank = static_cast<int>((es.eigenvalues().array() > std::numeric_limits<double>::epsilon() * scale).count());
  return out;
}

}  // namespace

FactorMethod preferred_method(const CovFactor& previous) {
  return previous.numerical_rank < 0.35 * static_cast<double>(previous.factor.rows()) ? FactorMethod::Pivoted
                                                                                     : FactorMethod::Dense;
}

CovFactor factor_covariance(const Eigen::MatrixXd& cov, double jitter, FactorMethod method) {
  Eigen::MatrixXd work = cov;
  CovFactor out;
  factor_covariance_inplace(work, jitter, method, out);
  return out;
}

void factor_covariance_inplace(Eigen::MatrixXd& cov, double jitter, FactorMethod method, CovFactor& out) {
  const int n = static_cast<int>(cov.rows());
  if (cov.cols() != n) throw std::invalid_argument("covariance must be square");
  if (!(jitter >= 0.0)) throw std::invalid_argument("jitter must be nonnegative");

  out.triangular = false;
  out.eigen_fallback = false;
  out.clipped = 0.0;
  out.numerical_rank = 0;
  out.source.clear();
  if (n == 0) {
    out.factor.resize(0, 0);
    return;
  }

  Eigen::VectorXd diag = cov.diagonal();
  const double scale = std::max(1.0, diag.cwiseAbs().maxCoeff());

  if (method == FactorMethod::Dense) {
    cov.diagonal().array() += jitter;
    Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(cov);
    if (llt.info() == Eigen::Success) {
      // The strict upper triangle still holds the input; apply() ignores it.
      out.factor.swap(cov);
      const double level = 100.0 * std::max(jitter, std::numeric_limits<double>::epsilon()) * scale;
      out.numerical_rank = static_cast<int>((out.factor.diagonal().array().square() > level).count());
      out.triangular = true;
      out.source.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) out.source[static_cast<std::size_t>(i)] = i;
      return;
    }
    // Restore the input from its untouched upper triangle.
    cov.triangularView<Eigen::StrictlyLower>() = cov.transpose();
    cov.diagonal() = diag;
  }

  const double stop = std::max(jitter, std::numeric_limits<double>::epsilon()) * scale;
  const double negative_limit = -std::sqrt(std::numeric_limits<double>::epsilon()) * scale;

  Eigen::MatrixXd& l = out.factor;  // only the first k columns are ever read
  l.resize(n, n);
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  out.source.reserve(static_cast<std::size_t>(n));
  Eigen::VectorXd col(n);

  auto fallback = [&] {
    out = eigen_factor(cov, scale);
  };

  int k = 0;
  for (; k < n; ++k) {
    int p = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (diag(i) < negative_limit) return fallback();
      if (diag(i) > best) {
        best = diag(i);
        p = i;
      }
    }
    if (p < 0 || best <= stop) break;

    col = cov.col(p);
    if (k > 0) col.noalias() -= l.leftCols(k) * l.row(p).head(k).transpose();
    const double pivot = std::sqrt(best);
    col /= pivot;
    for (int i = 0; i < n; ++i)
      if (taken[static_cast<std::size_t>(i)]) col(i) = 0.0;
    col(p) = pivot;
    l.col(k) = col;
    diag -= col.cwiseAbs2();
    diag(p) = 0.0;
    taken[static_cast<std::size_t>(p)] = 1;
    out.source.push_back(p);
  }
  for (int i = 0; i < n; ++i)
    if (!taken[static_cast<std::size_t>(i)] && diag(i) < negative_limit) return fallback();

  out.numerical_rank = k;
}

}  // namespace ibf
