#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ibf/covmodel.hpp"
#include "ibf/factor.hpp"
#include "ibf/rng.hpp"

namespace ibf {

/// Euler-Maruyama settings. The scheme itself is fixed.
struct StepConfig {
  double dt = 1e-3;
  // Pivots of the covariance factorization below jitter * max(1, max diag)
  // are treated as zero.
  double jitter = 1e-12;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument unless dt > 0 and jitter >= 0.
void validate(const StepConfig& cfg);

/// Particles further apart than this many length scales have covariances
/// (and their first two derivatives) below 1e-17 and are advanced
/// independently.
inline constexpr double kDecouplingRadius = 10.0;

struct NPointState {
  Matrix positions;  // d x n, one column per particle
  double time = 0.0;
  long step_count = 0;

  int dim() const { return static_cast<int>(positions.rows()); }
  int count() const { return static_cast<int>(positions.cols()); }
};

/// The noise of one replicate: particle p draws from its own stream seeded by
/// (seed, replicate, p).
class ParticleNoise {
 public:
  ParticleNoise(std::uint64_t seed, std::uint64_t replicate, int particles);

  NoiseStream& stream(int p) { return streams_[static_cast<std::size_t>(p)]; }
  int count() const { return static_cast<int>(streams_.size()); }

  /// Fills z (length n * per_particle) particle by particle.
  void draw(int per_particle, Vector& z);

 private:
  std::vector<NoiseStream> streams_;
};

/// Groups of particles linked by chains of separations below
/// kDecouplingRadius * ell. Members within a group are increasing.
std::vector<std::vector<int>> coupled_clusters(const Matrix& positions, double radius);

/// Clusters whose bounding box diagonal is below this many length scales have
/// a joint covariance far from full rank.
inline constexpr double kLowRankDiameter = 0.5;

/// nd x nd block matrix [b(x_p - x_q)]_{p,q}.
Matrix npoint_covariance(const IsotropicModel& model, const Matrix& positions);

/// Tracks the factorizations used by the steps of one trajectory.
struct StepStats {
  int max_cluster = 0;
  int max_rank = 0;
  bool eigen_fallback = false;
  double clipped = 0.0;
  // Method for the largest cluster at the next step, from this step's rank.
  FactorMethod next_method = FactorMethod::Pivoted;
};

/// Pivoted for clusters narrower than kLowRankDiameter, otherwise the
/// cheaper method according to the previous step (dense without history).
FactorMethod choose_method(const Matrix& positions, const std::vector<int>& members, double ell,
                           const StepStats* history, bool largest);

/// One Euler-Maruyama step: increments are jointly Gaussian with covariance
/// b(x_p - x_q) dt between particles p and q, so each particle alone moves as
/// a standard Brownian motion. Throws FactorizationError when the covariance
/// is indefinite beyond round-off.
NPointState npoint_step(const NPointState& state, const IsotropicModel& model, const StepConfig& cfg,
                        ParticleNoise& noise, StepStats* stats = nullptr);

/// Number of steps for a time that must be an integer multiple of dt.
long steps_for(double t, double dt);

/// Runs replicate `replicate` from the initial positions (d x n) up to
/// `horizon`, saving snapshots at `save_times` (or {0, horizon} when empty).
///
/// Particles are processed in lexicographic order of their initial
/// positions, and stream p belongs to the p-th particle in that order, so a
/// permutation of the initial points permutes the trajectory bit for bit.
std::vector<NPointState> simulate_npoints(const Matrix& initial, const IsotropicModel& model,
                                          const StepConfig& cfg, double horizon,
                                          std::vector<double> save_times = {}, std::uint64_t replicate = 0);

/// Lexicographic order of the columns (ties by index).
std::vector<int> canonical_order(const Matrix& positions);

/// Drift (d-1)(1 - B_N(r)) / r of the distance diffusion.
double distance_drift(const IsotropicModel& model, double r);
/// Diffusion coefficient sqrt(2 (1 - B_L(r))).
double distance_diffusion(const IsotropicModel& model, double r);

/// One Euler-Maruyama step of
///   d rho = (d-1)(1 - B_N(rho)) / rho dt + sqrt(2 (1 - B_L(rho))) dW.
/// 0 is absorbing; negative proposals are reflected.
double distance_step(double r, const IsotropicModel& model, const StepConfig& cfg, NoiseStream& noise);

/// rho_T for `replicates` independent runs of the distance diffusion.
std::vector<double> simulate_distance(double r0, const IsotropicModel& model, const StepConfig& cfg,
                                      double horizon, int replicates);

/// |phi_T(x) - phi_T(y)| from the two-point motion started at distance r0
/// along the first axis, for `replicates` independent runs.
std::vector<double> two_point_distances(double r0, const IsotropicModel& model, const StepConfig& cfg,
                                        double horizon, int replicates);

/// Normalized quadratic variation <psi>_t / t of
/// psi_t = xi_x . phi_t(x) + xi_y . phi_t(y) along a saved two-point
/// trajectory:
///
///   <psi>_t = t |xi|^2 + 2 sum_ij xi_x,i xi_y,j int_0^t b_ij(phi_s(x) - phi_s(y)) ds,
///
/// with the integral by the trapezoid rule over the snapshots, which must
/// start at t = 0. Entries with t > 0 only. Throws std::invalid_argument
/// unless |xi| = 1, n = 2 and the first snapshot is at t = 0.
std::vector<std::pair<double, double>> quad_variation_curve(const std::vector<NPointState>& trajectory,
                                                            const Vector& xi, const IsotropicModel& model);

}  // namespace ibf
