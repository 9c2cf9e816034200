#pragma once

#include <cstdint>
#include <vector>

#include "ibf/covmodel.hpp"
#include "ibf/geometry.hpp"
#include "ibf/rng.hpp"
#include "ibf/simcore.hpp"
#include "ibf/stats.hpp"

namespace ibf {

/// Positions plus one Jacobian L_t = D phi_t(x_p) per particle.
struct AugmentedState {
  Matrix positions;               // d x n
  std::vector<Matrix> jacobians;  // n matrices d x d
  // log |det L_t| and its sign, accumulated from the per-step factors so that
  // the determinant stays accurate when L_t itself is badly conditioned.
  std::vector<double> log_det;
  std::vector<int> det_sign;
  double time = 0.0;
  long step_count = 0;

  int dim() const { return static_cast<int>(positions.rows()); }
  int count() const { return static_cast<int>(positions.cols()); }
  double det(int p) const;
};

/// Update rule for L.
enum class JacobianScheme {
  // L <- (Id + dF) L, the Ito Euler step.
  Euler,
  // L <- exp(dF - E[dF^2] / 2) L. Keeps det L = exp(sum tr dF - ...), so det
  // L == 1 exactly in the volume-preserving case. For comparison only.
  Exponential,
};

/// Draws dF with E[dF_ij dF_kl] = C(i,k,j,l) dt for one point.
class OnePointLinearizer {
 public:
  OnePointLinearizer(const IsotropicModel& model, double dt);

  const IsotropicModel& model() const { return model_; }
  double dt() const { return dt_; }

  /// dF from d^2 fresh normals.
  Matrix draw(NoiseStream& noise) const;

  /// dF from given standard normals (length d^2).
  Matrix from_normals(const Vector& z) const;

  /// E[dF^2] / dt, a multiple of the identity by isotropy.
  const Matrix& ito_square() const { return ito_square_; }

 private:
  IsotropicModel model_;
  double dt_;
  CovFactor factor_;
  Matrix ito_square_;
};

/// L <- (Id + dF) L.
Matrix onepoint_linearization_step(const Matrix& l, const IsotropicModel& model, const StepConfig& cfg,
                                   NoiseStream& noise);

/// Applies one step of the chosen scheme and returns the factor's determinant.
double apply_jacobian_step(Matrix& l, const Matrix& df, JacobianScheme scheme, const Matrix& ito_square, double dt);

struct LyapunovEstimate {
  std::vector<double> estimates;
  std::vector<double> std_errors;
  std::vector<double> targets;
  // Per replicate, per exponent.
  std::vector<std::vector<double>> samples;
};

/// Propagates L_t for each replicate with QR re-orthonormalization every
/// `qr_every` steps; lambda_i = sum log |R_ii| / T, averaged over replicates.
LyapunovEstimate lyapunov_estimate(const IsotropicModel& model, double horizon, const StepConfig& cfg,
                                   int replicates, int qr_every = 10,
                                   JacobianScheme scheme = JacobianScheme::Euler);

/// det L_T for `count` independent one-point Jacobians.
std::vector<double> jacobian_determinants(const IsotropicModel& model, double horizon, const StepConfig& cfg,
                                          int count, JacobianScheme scheme = JacobianScheme::Euler);

inline constexpr int kMaxAugmentedDim = 6;

/// Per-marker block size d + d^2: the velocity increment, then vec(dF) with
/// index i*d+j for dF_ij = d_j W_i.
int augmented_block(int d);

/// Joint covariance (per unit time) of velocity increments and their
/// gradients at the given points, assembled from b, grad_b and hess_b.
Matrix joint_covariance(const IsotropicModel& model, const Matrix& positions);

/// Counts of per-step factors det(Id + dF) <= 0.
struct AugmentedStats {
  long nonpositive = 0;
  StepStats step;
};

AugmentedState augmented_start(const Matrix& positions);

/// One step of positions and Jacobians from the joint Gaussian law.
AugmentedState augmented_step(const AugmentedState& state, const IsotropicModel& model, const StepConfig& cfg,
                              ParticleNoise& noise, AugmentedStats* stats = nullptr);

/// One replicate of the marker system, recorded at save times.
struct VolumeRun {
  std::vector<double> times;
  std::vector<Matrix> positions;          // per save time, d x n
  std::vector<std::vector<double>> dets;  // per save time, per marker
  std::vector<double> volume;             // V_t = lambda(A) / n * sum det
  long nonpositive = 0;
  int max_cluster = 0;
  bool eigen_fallback = false;
};

struct VolumeSpec {
  SetDescriptor set;
  int markers = 64;
  double horizon = 1.0;
  std::vector<double> save_times;  // default {0, horizon}
};

/// Markers i.i.d. uniform in the set (own stream per replicate), propagated
/// with the coupled position/Jacobian system.
VolumeRun volume_estimate(const VolumeSpec& spec, const IsotropicModel& model, const StepConfig& cfg,
                          std::uint64_t replicate);

struct VolumeEnsemble {
  std::vector<double> times;
  double measure = 0.0;
  int markers = 0;
  std::vector<VolumeRun> runs;

  /// Mean of V_t across replicates at each save time.
  std::vector<McEstimate> curve() const;
  long nonpositive() const;
};

VolumeEnsemble volume_ensemble(const VolumeSpec& spec, const IsotropicModel& model, const StepConfig& cfg,
                               int replicates);

struct SecondMoment {
  double time = 0.0;
  // Mean of V_t^2, biased upward by the diagonal terms det_p^2.
  McEstimate naive;
  // lambda(A)^2 / (n (n - 1)) sum_{p != q} det_p det_q, unbiased for E V_t^2.
  McEstimate pairwise;
};

std::vector<SecondMoment> second_moment_curve(const VolumeEnsemble& ensemble);

}  // namespace ibf
