#include "ibf/covmodel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ibf {

namespace {

void require_nonnegative(double r) {
  if (!(r >= 0.0)) throw std::invalid_argument("separation must be nonnegative");
}

double kron(int a, int b) { return a == b ? 1.0 : 0.0; }

}  // namespace

IsotropicModel::IsotropicModel(int d, double alpha, double ell) : d_(d), alpha_(alpha), ell_(ell) {
  if (d < 2) throw std::invalid_argument("dimension must be at least 2");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (!(ell > 0.0) || !std::isfinite(ell)) throw std::invalid_argument("ell must be positive and finite");
  k1_ = (1.0 - alpha) / (d - 1);
  k2_ = k1_ - alpha;
}

double Tensor3::max_abs() const {
  double m = 0.0;
  for (double v : v_) m = std::max(m, std::abs(v));
  return m;
}

double Tensor4::max_abs() const {
  double m = 0.0;
  for (double v : v_) m = std::max(m, std::abs(v));
  return m;
}

GradientCovTensor::GradientCovTensor(int d, double beta_l, double beta_n)
    : d_(d), beta_l_(beta_l), beta_n_(beta_n) {}

double GradientCovTensor::operator()(int i, int k, int j, int l) const {
  return beta_n_ * kron(i, k) * kron(j, l) -
         0.5 * (beta_n_ - beta_l_) * (kron(i, j) * kron(k, l) + kron(i, l) * kron(k, j));
}

Matrix GradientCovTensor::matrix() const {
  const int d = d_;
  Matrix m(d * d, d * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) m(i * d + j, k * d + l) = (*this)(i, k, j, l);
  return m;
}

double longitudinal(const IsotropicModel& model, double r) {
  require_nonnegative(r);
  const double s2 = (r / model.ell()) * (r / model.ell());
  return std::exp(-0.5 * s2) * (1.0 - model.alpha() * s2);
}

double transversal(const IsotropicModel& model, double r) {
  require_nonnegative(r);
  const double s2 = (r / model.ell()) * (r / model.ell());
  return std::exp(-0.5 * s2) * (1.0 - model.k1() * s2);
}

double one_minus_longitudinal(const IsotropicModel& model, double r) {
  require_nonnegative(r);
  const double s2 = (r / model.ell()) * (r / model.ell());
  return -std::expm1(-0.5 * s2) + model.alpha() * s2 * std::exp(-0.5 * s2);
}

double one_minus_transversal(const IsotropicModel& model, double r) {
  require_nonnegative(r);
  const double s2 = (r / model.ell()) * (r / model.ell());
  return -std::expm1(-0.5 * s2) + model.k1() * s2 * std::exp(-0.5 * s2);
}

double longitudinal_derivative(const IsotropicModel& model, double r) {
  require_nonnegative(r);
  const double s = r / model.ell();
  const double a = model.alpha();
  return -(s * std::exp(-0.5 * s * s) / model.ell()) * (1.0 + 2.0 * a - a * s * s);
}

Matrix b_matrix(const IsotropicModel& model, const Vector& x) {
  const int d = model.d();
  if (x.size() != d) throw std::invalid_argument("b_matrix: dimension mismatch");
  const double r = x.norm();
  if (r == 0.0) return Matrix::Identity(d, d);
  const double ell2 = model.ell() * model.ell();
  // (B_L - B_N) / r^2 in closed form; no cancellation at small r.
  const double rank_one = model.k2() * std::exp(-0.5 * r * r / ell2) / ell2;
  Matrix b = rank_one * (x * x.transpose());
  b.diagonal().array() += transversal(model, r);
  return b;
}

Tensor3 grad_b(const IsotropicModel& model, const Vector& x) {
  const int d = model.d();
  if (x.size() != d) throw std::invalid_argument("grad_b: dimension mismatch");
  const Vector u = x / model.ell();
  const double u2 = u.squaredNorm();
  const double g = std::exp(-0.5 * u2);
  const double p = 1.0 - model.k1() * u2;
  const double k1 = model.k1();
  const double k2 = model.k2();
  const double scale = g / model.ell();

  Tensor3 out(d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      const double q = p * kron(i, k) + k2 * u(i) * u(k);
      for (int j = 0; j < d; ++j) {
        const double dq = -2.0 * k1 * u(j) * kron(i, k) + k2 * (kron(i, j) * u(k) + kron(k, j) * u(i));
        out(i, k, j) = scale * (-u(j) * q + dq);
      }
    }
  return out;
}

Tensor4 hess_b(const IsotropicModel& model, const Vector& x) {
  const int d = model.d();
  if (x.size() != d) throw std::invalid_argument("hess_b: dimension mismatch");
  const Vector u = x / model.ell();
  const double u2 = u.squaredNorm();
  const double g = std::exp(-0.5 * u2);
  const double p = 1.0 - model.k1() * u2;
  const double k1 = model.k1();
  const double k2 = model.k2();
  const double scale = g / (model.ell() * model.ell());

  auto dq = [&](int i, int k, int j) {
    return -2.0 * k1 * u(j) * kron(i, k) + k2 * (kron(i, j) * u(k) + kron(k, j) * u(i));
  };

  Tensor4 out(d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      const double q = p * kron(i, k) + k2 * u(i) * u(k);
      for (int j = 0; j < d; ++j)
        for (int l = 0; l < d; ++l) {
          const double ddq = -2.0 * k1 * kron(j, l) * kron(i, k) + k2 * (kron(i, l) * kron(k, j) + kron(k, l) * kron(i, j));
          out(i, k, j, l) =
              scale * ((u(j) * u(l) - kron(j, l)) * q - u(j) * dq(i, k, l) - u(l) * dq(i, k, j) + ddq);
        }
    }
  return out;
}

BetaParams beta_params(const IsotropicModel& model) {
  const double kappa = 1.0 / (model.ell() * model.ell());
  const double a = model.alpha();
  const int d = model.d();
  return {kappa * (3.0 * a + (1.0 - a)), kappa * (a + (1.0 - a) * (d + 1.0) / (d - 1.0))};
}

GradientCovTensor gradient_cov_tensor(const IsotropicModel& model) {
  const auto beta = beta_params(model);
  return {model.d(), beta.beta_l, beta.beta_n};
}

std::vector<double> lyapunov_spectrum(const IsotropicModel& model) {
  const auto beta = beta_params(model);
  const int d = model.d();
  std::vector<double> out(static_cast<std::size_t>(d));
  for (int i = 1; i <= d; ++i) out[static_cast<std::size_t>(i - 1)] = (d - i) * 0.5 * beta.beta_n - i * 0.5 * beta.beta_l;
  return out;
}

double top_lyapunov(const IsotropicModel& model) { return lyapunov_spectrum(model).front(); }

RegimeInfo regime(const IsotropicModel& model) {
  const int d = model.d();
  const double l1 = top_lyapunov(model);
  if (d >= 4) return {Regime::Transient, true};
  if (d == 3) return l1 >= 0.0 ? RegimeInfo{Regime::Transient, true} : RegimeInfo{Regime::NotGuaranteed, false};
  return l1 > 0.0 ? RegimeInfo{Regime::Transient, false} : RegimeInfo{Regime::NotGuaranteed, false};
}

bool is_volume_preserving(const IsotropicModel& model) {
  const auto beta = beta_params(model);
  const int d = model.d();
  const double lhs = (d - 1) * beta.beta_n;
  const double rhs = (d + 1) * beta.beta_l;
  return std::abs(lhs - rhs) <= 1e-12 * std::max(lhs, rhs);
}

double psi_small_s_exponent(const IsotropicModel& model) {
  const auto beta = beta_params(model);
  const int d = model.d();
  return (d - 1) * beta.beta_n / beta.beta_l - (d + 1);
}

std::string to_string(Regime regime) {
  return regime == Regime::Transient ? "Transient" : "NotGuaranteed";
}

}  // namespace ibf
