#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace ibf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Isotropic covariance built from a Gaussian kernel of width `ell`: a mixture
/// of a potential (gradient) field with weight `alpha` and a solenoidal
/// (divergence-free) field with weight `1 - alpha`.
///
/// With u = x / ell and g = exp(-|u|^2 / 2) the covariance tensor is
///
///   b(x) = g * [(1 - k1 |u|^2) Id + k2 u u^T],
///   k1 = (1 - alpha) / (d - 1),  k2 = k1 - alpha,
///
/// so B_N(r) = g (1 - k1 s^2) and B_L(r) = g (1 - alpha s^2) with s = r / ell.
/// Instances are immutable.
class IsotropicModel {
 public:
  IsotropicModel(int d, double alpha, double ell = 1.0);

  int d() const { return d_; }
  double alpha() const { return alpha_; }
  double ell() const { return ell_; }

  // Polynomial coefficients of the factorized form above.
  double k1() const { return k1_; }
  double k2() const { return k2_; }

  bool operator==(const IsotropicModel&) const = default;

 private:
  int d_;
  double alpha_;
  double ell_;
  double k1_;
  double k2_;
};

/// Row-major rank-3 tensor with every index in [0, d).
class Tensor3 {
 public:
  explicit Tensor3(int d) : d_(d), v_(static_cast<std::size_t>(d * d * d), 0.0) {}
  int dim() const { return d_; }
  double& operator()(int i, int j, int k) { return v_[index(i, j, k)]; }
  double operator()(int i, int j, int k) const { return v_[index(i, j, k)]; }
  double max_abs() const;

 private:
  std::size_t index(int i, int j, int k) const { return static_cast<std::size_t>((i * d_ + j) * d_ + k); }
  int d_;
  std::vector<double> v_;
};

/// Row-major rank-4 tensor with every index in [0, d).
class Tensor4 {
 public:
  explicit Tensor4(int d) : d_(d), v_(static_cast<std::size_t>(d * d * d * d), 0.0) {}
  int dim() const { return d_; }
  double& operator()(int i, int j, int k, int l) { return v_[index(i, j, k, l)]; }
  double operator()(int i, int j, int k, int l) const { return v_[index(i, j, k, l)]; }
  double max_abs() const;

 private:
  std::size_t index(int i, int j, int k, int l) const {
    return static_cast<std::size_t>(((i * d_ + j) * d_ + k) * d_ + l);
  }
  int d_;
  std::vector<double> v_;
};

/// Covariance of the velocity-gradient field at zero separation,
/// C(i,k,j,l) = E[dF_ij dF_kl] / dt with dF_ij = d_j dW_i.
class GradientCovTensor {
 public:
  GradientCovTensor(int d, double beta_l, double beta_n);

  int dim() const { return d_; }
  double operator()(int i, int k, int j, int l) const;

  /// d^2 x d^2 covariance of vec(dF) / dt, row index i*d+j, column k*d+l.
  Matrix matrix() const;

 private:
  int d_;
  double beta_l_;
  double beta_n_;
};

struct BetaParams {
  double beta_l;
  double beta_n;
};

enum class Regime { Transient, NotGuaranteed };

struct RegimeInfo {
  Regime regime;
  // Separation diverges almost surely (d >= 4, or d = 3 with lambda_1 >= 0)
  // rather than only in probability.
  bool almost_sure;
};

/// B_L(r). Throws std::invalid_argument for r < 0.
double longitudinal(const IsotropicModel& model, double r);
/// B_N(r). Throws std::invalid_argument for r < 0.
double transversal(const IsotropicModel& model, double r);

// 1 - B_L(r) and 1 - B_N(r) without cancellation near r = 0.
double one_minus_longitudinal(const IsotropicModel& model, double r);
double one_minus_transversal(const IsotropicModel& model, double r);

/// First derivative dB_L/dr.
double longitudinal_derivative(const IsotropicModel& model, double r);

/// Covariance tensor b(x), with b(0) = Id.
Matrix b_matrix(const IsotropicModel& model, const Vector& x);

/// grad(i,j,k) = d_k b_ij(x).
Tensor3 grad_b(const IsotropicModel& model, const Vector& x);

/// hess(i,j,k,l) = d_k d_l b_ij(x).
Tensor4 hess_b(const IsotropicModel& model, const Vector& x);

BetaParams beta_params(const IsotropicModel& model);

GradientCovTensor gradient_cov_tensor(const IsotropicModel& model);

/// (lambda_1, ..., lambda_d), nonincreasing.
std::vector<double> lyapunov_spectrum(const IsotropicModel& model);

double top_lyapunov(const IsotropicModel& model);

RegimeInfo regime(const IsotropicModel& model);

/// (d-1) beta_N == (d+1) beta_L, i.e. the divergence-free case.
bool is_volume_preserving(const IsotropicModel& model);

/// Small-separation exponent of the two-point density,
/// psi(s) ~ c s^mu with mu = (d-1) beta_N / beta_L - (d+1).
double psi_small_s_exponent(const IsotropicModel& model);

std::string to_string(Regime regime);

}  // namespace ibf
