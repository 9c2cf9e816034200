#pragma once

#include <random>

#include <Eigen/Dense>

namespace ibf::test {

inline Eigen::VectorXd random_vector(int d, std::mt19937_64& rng, double spread) {
  std::normal_distribution<double> n(0.0, spread);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = n(rng);
  return v;
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-fixed).
inline Eigen::MatrixXd random_rotation(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = n(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

}  // namespace ibf::test
