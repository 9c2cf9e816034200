#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "ibf/covmodel.hpp"
#include "ibf/simcore.hpp"
#include "test_util.hpp"

using namespace ibf;

namespace {

// Second derivative of a scalar function at 0 by Richardson-extrapolated
// second differences.
template <class F>
double second_derivative_at_zero(F f, double h) {
  auto d2 = [&](double step) { return (f(step) - 2.0 * f(0.0) + f(-step)) / (step * step); };
  return (4.0 * d2(h / 2) - d2(h)) / 3.0;
}

}  // namespace

TEST_CASE("closed forms of B_L and B_N") {
  const IsotropicModel m(2, 1.0);
  CHECK(longitudinal(m, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(transversal(m, 1.0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  for (double alpha : {0.0, 0.3, 1.0})
    for (int d : {2, 3, 5}) {
      const IsotropicModel model(d, alpha);
      CHECK(longitudinal(model, 0.0) == 1.0);
      CHECK(transversal(model, 0.0) == 1.0);
      CHECK(std::abs(longitudinal(model, 100.0)) < 1e-12);
      CHECK(std::abs(transversal(model, 100.0)) < 1e-12);
      for (double r : {0.1, 0.7, 1.5, 3.0}) {
        CHECK(std::abs(longitudinal(model, r)) < 1.0);
        CHECK(std::abs(transversal(model, r)) < 1.0);
        CHECK(one_minus_longitudinal(model, r) == doctest::Approx(1.0 - longitudinal(model, r)).epsilon(1e-12));
        CHECK(one_minus_transversal(model, r) == doctest::Approx(1.0 - transversal(model, r)).epsilon(1e-12));
      }
    }
  CHECK_THROWS_AS(longitudinal(m, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(IsotropicModel(1, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(IsotropicModel(2, 1.5), std::invalid_argument);
}

TEST_CASE("B_L and B_N agree with second derivatives of the generating Gaussian") {
  // Potential part: b = -Hess(exp(-|x|^2/2)); solenoidal part: (Lap Id - Hess)
  // of the same kernel, normalized to b(0) = Id. Differentiated numerically.
  const int d = 3;
  auto kernel = [](const Vector& x) { return std::exp(-0.5 * x.squaredNorm()); };
  auto hessian = [&](const Vector& x) {
    const double h = 1e-3;
    Matrix hs(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        Vector e_i = Vector::Unit(d, i) * h, e_j = Vector::Unit(d, j) * h;
        hs(i, j) = (kernel(x + e_i + e_j) - kernel(x + e_i - e_j) - kernel(x - e_i + e_j) + kernel(x - e_i - e_j)) /
                   (4 * h * h);
      }
    return hs;
  };
  for (double alpha : {0.0, 0.4, 1.0}) {
    const IsotropicModel model(d, alpha);
    for (double r : {0.3, 1.0, 2.2}) {
      const Vector x = Vector::Unit(d, 0) * r;
      const Matrix hs = hessian(x);
      const Matrix pot = -hs;
      const Matrix sol = (hs.trace() * Matrix::Identity(d, d) - hs) / -(d - 1.0);
      const Matrix expect = alpha * pot + (1 - alpha) * sol;
      CHECK(longitudinal(model, r) == doctest::Approx(expect(0, 0)).epsilon(1e-5));
      CHECK(transversal(model, r) == doctest::Approx(expect(1, 1)).epsilon(1e-5));
      CHECK(std::abs(expect(0, 1)) < 1e-6);
    }
  }
}

TEST_CASE("b_matrix: identity at 0, axis example, isotropy") {
  const IsotropicModel m(2, 1.0);
  CHECK((b_matrix(m, Vector::Zero(2)) - Matrix::Identity(2, 2)).norm() == 0.0);
  Vector x(2);
  x << 1.0, 0.0;
  const Matrix b = b_matrix(m, x);
  CHECK(std::abs(b(0, 0)) < 1e-15);
  CHECK(b(1, 1) == doctest::Approx(0.60653066).epsilon(1e-8));
  CHECK(std::abs(b(0, 1)) < 1e-15);

  std::mt19937_64 rng(7);
  for (int d : {2, 3, 4}) {
    const IsotropicModel model(d, 0.35);
    for (int trial = 0; trial < 50; ++trial) {
      const Matrix r = test::random_rotation(d, rng);
      const Vector y = test::random_vector(d, rng, 2.0);
      const Matrix lhs = b_matrix(model, r * y);
      const Matrix rhs = r * b_matrix(model, y) * r.transpose();
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("grad_b and hess_b match central differences of b_matrix") {
  std::mt19937_64 rng(11);
  for (int d : {2, 3}) {
    for (double alpha : {0.0, 0.05, 0.6, 1.0}) {
      const IsotropicModel model(d, alpha, 1.3);
      for (int trial = 0; trial < 25; ++trial) {
        const Vector x = test::random_vector(d, rng, 2.5);
        const Tensor3 g = grad_b(model, x);
        const Tensor4 hs = hess_b(model, x);
        const double h = 1e-5;
        double worst_g = 0.0, worst_h = 0.0;
        for (int k = 0; k < d; ++k) {
          const Vector e = Vector::Unit(d, k) * h;
          const Matrix fd = (b_matrix(model, x + e) - b_matrix(model, x - e)) / (2 * h);
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) worst_g = std::max(worst_g, std::abs(fd(i, j) - g(i, j, k)));
          // Hessian from differences of the analytic gradient, then checked
          // against hess_b; the gradient itself is checked above.
          const Tensor3 gp = grad_b(model, x + e), gm = grad_b(model, x - e);
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
              for (int l = 0; l < d; ++l)
                worst_h = std::max(worst_h, std::abs((gp(i, j, l) - gm(i, j, l)) / (2 * h) - hs(i, j, l, k)));
        }
        CHECK(worst_g < 1e-6);
        CHECK(worst_h < 1e-6);
      }
    }
  }
}

TEST_CASE("derivatives at and far from the origin") {
  const IsotropicModel model(3, 0.4);
  CHECK(grad_b(model, Vector::Zero(3)).max_abs() == 0.0);
  const Tensor4 h0 = hess_b(model, Vector::Zero(3));
  const GradientCovTensor c = gradient_cov_tensor(model);
  // C(i,k,j,l) = -d_j d_l b_ik(0), here against a Richardson second
  // difference of b itself.
  const double h = 1e-3;
  double worst = 0.0, worst_analytic = 0.0;
  for (int j = 0; j < 3; ++j)
    for (int l = 0; l < 3; ++l) {
      auto b_at = [&](double sj, double sl) {
        Vector x = Vector::Zero(3);
        x(j) += sj;
        x(l) += sl;
        return b_matrix(model, x);
      };
      auto mixed = [&](double s) {
        return Matrix((b_at(s, s) - b_at(s, -s) - b_at(-s, s) + b_at(-s, -s)) / (4 * s * s));
      };
      const Matrix fd = (4.0 * mixed(h / 2) - mixed(h)) / 3.0;
      for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) {
          worst = std::max(worst, std::abs(-fd(i, k) - c(i, k, j, l)));
          worst_analytic = std::max(worst_analytic, std::abs(-h0(i, k, j, l) - c(i, k, j, l)));
        }
    }
  CHECK(worst < 1e-8);
  CHECK(worst_analytic < 1e-14);

  Vector far = Vector::Zero(3);
  far(1) = 50.0;
  CHECK(grad_b(model, far).max_abs() < 1e-10);
  CHECK(hess_b(model, far).max_abs() < 1e-10);
}

TEST_CASE("gradient covariance tensor: symmetry and PSD") {
  for (int d : {2, 3, 4})
    for (double alpha : {0.0, 0.5, 1.0}) {
      const GradientCovTensor c = gradient_cov_tensor(IsotropicModel(d, alpha));
      for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k)
          for (int j = 0; j < d; ++j)
            for (int l = 0; l < d; ++l) CHECK(c(i, k, j, l) == c(k, i, l, j));
      Eigen::SelfAdjointEigenSolver<Matrix> es(c.matrix());
      CHECK(es.eigenvalues().minCoeff() > -1e-12);
    }
}

TEST_CASE("beta parameters: closed forms, finite differences, bounds") {
  const auto b1 = beta_params(IsotropicModel(2, 1.0));
  CHECK(b1.beta_l == doctest::Approx(3.0));
  CHECK(b1.beta_n == doctest::Approx(1.0));
  const auto b0 = beta_params(IsotropicModel(2, 0.0));
  CHECK(b0.beta_l == doctest::Approx(1.0));
  CHECK(b0.beta_n == doctest::Approx(3.0));

  for (int d : {2, 3, 4, 6})
    for (int k = 0; k <= 20; ++k) {
      const double alpha = k / 20.0;
      const IsotropicModel model(d, alpha, 0.8);
      const auto beta = beta_params(model);
      const double fd_l = -second_derivative_at_zero([&](double r) { return longitudinal(model, std::abs(r)); }, 1e-3);
      const double fd_n = -second_derivative_at_zero([&](double r) { return transversal(model, std::abs(r)); }, 1e-3);
      CHECK(fd_l == doctest::Approx(beta.beta_l).epsilon(1e-5));
      CHECK(fd_n == doctest::Approx(beta.beta_n).epsilon(1e-5));
      const double ratio = beta.beta_l / beta.beta_n;
      CHECK(ratio >= (d - 1.0) / (d + 1.0) - 1e-12);
      CHECK(ratio <= 3.0 + 1e-12);
      CHECK(beta.beta_l > 0.0);
      CHECK(beta.beta_n > 0.0);
    }
}

TEST_CASE("scale covariance in ell") {
  const IsotropicModel a(3, 0.3, 1.0), b(3, 0.3, 2.5);
  for (double r : {0.2, 1.0, 3.0}) {
    CHECK(longitudinal(b, 2.5 * r) == doctest::Approx(longitudinal(a, r)).epsilon(1e-14));
    CHECK(transversal(b, 2.5 * r) == doctest::Approx(transversal(a, r)).epsilon(1e-14));
  }
  CHECK(beta_params(b).beta_l == doctest::Approx(beta_params(a).beta_l / 6.25).epsilon(1e-14));
  CHECK(beta_params(b).beta_n == doctest::Approx(beta_params(a).beta_n / 6.25).epsilon(1e-14));
}

TEST_CASE("Lyapunov spectrum and regime") {
  const auto s = lyapunov_spectrum(IsotropicModel(2, 0.0));
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(-1.0));
  const auto s3 = lyapunov_spectrum(IsotropicModel(3, 1.0));
  // beta_L = 3, beta_N = 1: ((3 - i) - 3 i) / 2.
  CHECK(s3[0] == doctest::Approx(-0.5));
  CHECK(s3[1] == doctest::Approx(-2.5));
  CHECK(s3[2] == doctest::Approx(-4.5));
  // d = 3 with beta_N = beta_L = beta: (beta/2, -beta/2, -3 beta/2). The mixture
  // reaches beta_N = beta_L at alpha = 1/3 (beta = 5/3).
  const auto eq = lyapunov_spectrum(IsotropicModel(3, 1.0 / 3.0));
  CHECK(eq[0] == doctest::Approx(5.0 / 6.0));
  CHECK(eq[1] == doctest::Approx(-5.0 / 6.0));
  CHECK(eq[2] == doctest::Approx(-2.5));

  for (int d : {2, 3, 5}) {
    const IsotropicModel vp(d, 0.0);
    CHECK(is_volume_preserving(vp));
    double sum = 0.0;
    for (double v : lyapunov_spectrum(vp)) sum += v;
    CHECK(std::abs(sum) < 1e-12);
    CHECK_FALSE(is_volume_preserving(IsotropicModel(d, 0.2)));
    CHECK(psi_small_s_exponent(vp) == doctest::Approx(0.0).scale(1.0));
  }

  CHECK(regime(IsotropicModel(4, 1.0)).regime == Regime::Transient);
  CHECK(regime(IsotropicModel(4, 1.0)).almost_sure);
  CHECK(regime(IsotropicModel(2, 0.0)).regime == Regime::Transient);
  CHECK_FALSE(regime(IsotropicModel(2, 0.0)).almost_sure);
  CHECK(regime(IsotropicModel(2, 1.0)).regime == Regime::NotGuaranteed);
  CHECK(regime(IsotropicModel(3, 1.0)).regime == Regime::NotGuaranteed);
  CHECK(regime(IsotropicModel(3, 0.0)).regime == Regime::Transient);
  CHECK(regime(IsotropicModel(3, 0.0)).almost_sure);
}

TEST_CASE("block covariance is PSD on random configurations") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> count(1, 8);
  std::uniform_real_distribution<double> coord(0.0, 10.0);
  std::uniform_real_distribution<double> weight(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 2 + trial % 3;
    const IsotropicModel model(d, weight(rng));
    Matrix x(d, count(rng));
    for (Eigen::Index p = 0; p < x.cols(); ++p)
      for (int i = 0; i < d; ++i) x(i, p) = coord(rng);
    if (trial % 10 == 0 && x.cols() > 1) x.col(1) = x.col(0);  // coincident points
    Eigen::SelfAdjointEigenSolver<Matrix> es(npoint_covariance(model, x));
    worst = std::min(worst, es.eigenvalues().minCoeff());
  }
  CHECK(worst >= -1e-8);
}
