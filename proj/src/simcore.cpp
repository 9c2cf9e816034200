#include "ibf/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ibf/parallel.hpp"

namespace ibf {

void validate(const StepConfig& cfg) {
  if (!(cfg.dt > 0.0) || !std::isfinite(cfg.dt)) throw std::invalid_argument("dt must be positive and finite");
  if (!(cfg.jitter >= 0.0)) throw std::invalid_argument("jitter must be nonnegative");
}

ParticleNoise::ParticleNoise(std::uint64_t seed, std::uint64_t replicate, int particles) {
  streams_.reserve(static_cast<std::size_t>(particles));
  for (int p = 0; p < particles; ++p)
    streams_.emplace_back(derive_seed(seed, {replicate, static_cast<std::uint64_t>(p)}));
}

void ParticleNoise::draw(int per_particle, Vector& z) {
  z.resize(static_cast<Eigen::Index>(per_particle) * count());
  Eigen::Index k = 0;
  for (auto& s : streams_)
    for (int i = 0; i < per_particle; ++i) z(k++) = s.normal();
}

namespace {

int find_root(std::vector<int>& parent, int i) {
  while (parent[static_cast<std::size_t>(i)] != i) {
    auto& pi = parent[static_cast<std::size_t>(i)];
    pi = parent[static_cast<std::size_t>(pi)];
    i = pi;
  }
  return i;
}

}  // namespace

std::vector<std::vector<int>> coupled_clusters(const Matrix& positions, double radius) {
  const int n = static_cast<int>(positions.cols());
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  const double r2 = radius * radius;
  for (int p = 0; p < n; ++p)
    for (int q = p + 1; q < n; ++q) {
      if ((positions.col(p) - positions.col(q)).squaredNorm() >= r2) continue;
      const int a = find_root(parent, p);
      const int b = find_root(parent, q);
      if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }
  std::vector<int> slot(static_cast<std::size_t>(n), -1);
  std::vector<std::vector<int>> out;
  for (int p = 0; p < n; ++p) {
    const int root = find_root(parent, p);
    auto& s = slot[static_cast<std::size_t>(root)];
    if (s < 0) {
      s = static_cast<int>(out.size());
      out.emplace_back();
    }
    out[static_cast<std::size_t>(s)].push_back(p);
  }
  return out;
}

FactorMethod choose_method(const Matrix& positions, const std::vector<int>& members, double ell,
                           const StepStats* history, bool largest) {
  const int d = static_cast<int>(positions.rows());
  Vector lo = Vector::Constant(d, std::numeric_limits<double>::infinity());
  Vector hi = -lo;
  for (int p : members) {
    lo = lo.cwiseMin(positions.col(p));
    hi = hi.cwiseMax(positions.col(p));
  }
  if ((hi - lo).norm() < kLowRankDiameter * ell) return FactorMethod::Pivoted;
  return history && largest ? history->next_method : FactorMethod::Dense;
}

namespace {

void cluster_covariance(const IsotropicModel& model, const Matrix& positions, const std::vector<int>& members,
                        Matrix& c) {
  const int d = model.d();
  const int m = static_cast<int>(members.size());
  c.resize(m * d, m * d);
  for (int a = 0; a < m; ++a) {
    c.block(a * d, a * d, d, d).setIdentity();
    for (int b = a + 1; b < m; ++b) {
      const Vector z = positions.col(members[static_cast<std::size_t>(a)]) - positions.col(members[static_cast<std::size_t>(b)]);
      const Matrix blk = b_matrix(model, z);
      c.block(a * d, b * d, d, d) = blk;
      c.block(b * d, a * d, d, d) = blk;  // b is even and symmetric
    }
  }
}

struct Workspace {
  Matrix cov;
  CovFactor factor;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

std::vector<int> all_indices(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

Matrix npoint_covariance(const IsotropicModel& model, const Matrix& positions) {
  if (positions.rows() != model.d()) throw std::invalid_argument("npoint_covariance: dimension mismatch");
  Matrix c;
  cluster_covariance(model, positions, all_indices(static_cast<int>(positions.cols())), c);
  return c;
}

NPointState npoint_step(const NPointState& state, const IsotropicModel& model, const StepConfig& cfg,
                        ParticleNoise& noise, StepStats* stats) {
  const int d = model.d();
  const int n = state.count();
  if (state.dim() != d) throw std::invalid_argument("npoint_step: dimension mismatch");
  if (noise.count() != n) throw std::invalid_argument("npoint_step: one noise stream per particle required");

  Vector z;
  noise.draw(d, z);
  const double sdt = std::sqrt(cfg.dt);

  NPointState next = state;
  const auto clusters = coupled_clusters(state.positions, kDecouplingRadius * model.ell());
  std::size_t largest = 0;
  for (const auto& members : clusters) largest = std::max(largest, members.size());
  for (const auto& members : clusters) {
    const int m = static_cast<int>(members.size());
    if (stats) stats->max_cluster = std::max(stats->max_cluster, m);
    if (m == 1) {
      const int p = members.front();
      next.positions.col(p) += sdt * z.segment(static_cast<Eigen::Index>(p) * d, d);
      continue;
    }
    auto& ws = workspace();
    cluster_covariance(model, state.positions, members, ws.cov);
    const bool is_largest = members.size() == largest;
    factor_covariance_inplace(ws.cov, cfg.jitter, choose_method(state.positions, members, model.ell(), stats, is_largest),
                              ws.factor);
    const CovFactor& f = ws.factor;
    if (stats && is_largest) stats->next_method = preferred_method(f);
    if (stats) {
      stats->max_rank = std::max(stats->max_rank, f.rank());
      stats->eigen_fallback = stats->eigen_fallback || f.eigen_fallback;
      stats->clipped = std::max(stats->clipped, f.clipped);
    }
    Vector zc(m * d);
    for (int a = 0; a < m; ++a)
      zc.segment(a * d, d) = z.segment(static_cast<Eigen::Index>(members[static_cast<std::size_t>(a)]) * d, d);
    Vector inc;
    f.apply(zc, inc);
    for (int a = 0; a < m; ++a) next.positions.col(members[static_cast<std::size_t>(a)]) += sdt * inc.segment(a * d, d);
  }
  next.step_count = state.step_count + 1;
  next.time = static_cast<double>(next.step_count) * cfg.dt;
  if (!next.positions.allFinite()) throw std::runtime_error("npoint_step: non-finite positions");
  return next;
}

long steps_for(double t, double dt) {
  if (!(t >= 0.0)) throw std::invalid_argument("time must be nonnegative");
  const double k = t / dt;
  const double r = std::round(k);
  if (std::abs(k - r) > 1e-9 * std::max(1.0, k))
    throw std::invalid_argument("time " + std::to_string(t) + " is not a multiple of dt");
  return static_cast<long>(r);
}

std::vector<int> canonical_order(const Matrix& positions) {
  std::vector<int> order = all_indices(static_cast<int>(positions.cols()));
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    for (Eigen::Index i = 0; i < positions.rows(); ++i) {
      if (positions(i, a) < positions(i, b)) return true;
      if (positions(i, a) > positions(i, b)) return false;
    }
    return false;
  });
  return order;
}

std::vector<NPointState> simulate_npoints(const Matrix& initial, const IsotropicModel& model, const StepConfig& cfg,
                                          double horizon, std::vector<double> save_times, std::uint64_t replicate) {
  validate(cfg);
  if (initial.rows() != model.d()) throw std::invalid_argument("simulate_npoints: dimension mismatch");
  if (!initial.allFinite()) throw std::invalid_argument("simulate_npoints: initial positions must be finite");
  const long total = steps_for(horizon, cfg.dt);
  if (save_times.empty()) save_times = horizon > 0.0 ? std::vector<double>{0.0, horizon} : std::vector<double>{0.0};
  std::vector<long> save_steps;
  for (double t : save_times) {
    const long k = steps_for(t, cfg.dt);
    if (k > total) throw std::invalid_argument("save time beyond the horizon");
    save_steps.push_back(k);
  }
  std::sort(save_steps.begin(), save_steps.end());
  save_steps.erase(std::unique(save_steps.begin(), save_steps.end()), save_steps.end());

  const int n = static_cast<int>(initial.cols());
  const auto order = canonical_order(initial);
  NPointState state;
  state.positions.resize(initial.rows(), n);
  for (int p = 0; p < n; ++p) state.positions.col(p) = initial.col(order[static_cast<std::size_t>(p)]);

  auto restore = [&](const NPointState& s) {
    NPointState out = s;
    for (int p = 0; p < n; ++p) out.positions.col(order[static_cast<std::size_t>(p)]) = s.positions.col(p);
    return out;
  };

  ParticleNoise noise(cfg.seed, replicate, n);
  StepStats stats;
  std::vector<NPointState> out;
  std::size_t next_save = 0;
  for (long k = 0;; ++k) {
    if (next_save < save_steps.size() && save_steps[next_save] == k) {
      out.push_back(restore(state));
      ++next_save;
    }
    if (k == total) break;
    state = npoint_step(state, model, cfg, noise, &stats);
  }
  return out;
}

namespace {

constexpr double kSmallDistance = 1e-8;  // in units of ell

}  // namespace

double distance_drift(const IsotropicModel& model, double r) {
  if (!(r >= 0.0)) throw std::invalid_argument("distance must be nonnegative");
  if (r == 0.0) return 0.0;
  if (r < kSmallDistance * model.ell()) return (model.d() - 1) * beta_params(model).beta_n * r / 2.0;
  return (model.d() - 1) * one_minus_transversal(model, r) / r;
}

double distance_diffusion(const IsotropicModel& model, double r) {
  if (!(r >= 0.0)) throw std::invalid_argument("distance must be nonnegative");
  if (r < kSmallDistance * model.ell()) return std::sqrt(beta_params(model).beta_l) * r;
  return std::sqrt(2.0 * one_minus_longitudinal(model, r));
}

double distance_step(double r, const IsotropicModel& model, const StepConfig& cfg, NoiseStream& noise) {
  if (!(r >= 0.0)) throw std::invalid_argument("distance must be nonnegative");
  const double z = noise.normal();
  if (r == 0.0) return 0.0;
  const double next = r + distance_drift(model, r) * cfg.dt + distance_diffusion(model, r) * std::sqrt(cfg.dt) * z;
  return std::abs(next);
}

std::vector<double> simulate_distance(double r0, const IsotropicModel& model, const StepConfig& cfg, double horizon,
                                      int replicates) {
  validate(cfg);
  if (replicates < 1) throw std::invalid_argument("need at least one replicate");
  const long steps = steps_for(horizon, cfg.dt);
  std::vector<double> out(static_cast<std::size_t>(replicates));
  parallel_for(out.size(), [&](std::size_t i) {
    NoiseStream noise(derive_seed(cfg.seed, {kAuxStreamTag, i}));
    double r = r0;
    for (long k = 0; k < steps; ++k) r = distance_step(r, model, cfg, noise);
    out[i] = r;
  });
  return out;
}

std::vector<double> two_point_distances(double r0, const IsotropicModel& model, const StepConfig& cfg, double horizon,
                                        int replicates) {
  if (replicates < 1) throw std::invalid_argument("need at least one replicate");
  Matrix initial = Matrix::Zero(model.d(), 2);
  initial(0, 1) = r0;
  std::vector<double> out(static_cast<std::size_t>(replicates));
  parallel_for(out.size(), [&](std::size_t i) {
    const auto traj = simulate_npoints(initial, model, cfg, horizon, {horizon}, i);
    const auto& x = traj.back().positions;
    out[i] = (x.col(0) - x.col(1)).norm();
  });
  return out;
}

std::vector<std::pair<double, double>> quad_variation_curve(const std::vector<NPointState>& trajectory,
                                                            const Vector& xi, const IsotropicModel& model) {
  const int d = model.d();
  if (xi.size() != 2 * d) throw std::invalid_argument("quad_variation_curve: xi must have 2d entries");
  if (std::abs(xi.squaredNorm() - 1.0) > 1e-12) throw std::invalid_argument("quad_variation_curve: xi must be a unit vector");
  if (trajectory.empty()) return {};
  if (trajectory.front().time != 0.0)
    throw std::invalid_argument("quad_variation_curve: trajectory must start at t = 0 (save time 0 included)");
  const Vector xa = xi.head(d);
  const Vector xb = xi.tail(d);

  // Written as |xa + xb|^2 t + 2 int xa . (b - Id) xb ds, which is exact
  // when the two points coincide.
  const double head = (xa + xb).squaredNorm();
  auto excess = [&](const NPointState& s) {
    if (s.count() != 2 || s.dim() != d) throw std::invalid_argument("quad_variation_curve: two-point trajectory required");
    Matrix b = b_matrix(model, s.positions.col(0) - s.positions.col(1));
    b.diagonal().array() -= 1.0;
    return xa.dot(b * xb);
  };

  std::vector<std::pair<double, double>> out;
  double integral = 0.0;
  double prev_t = trajectory.front().time;
  double prev_c = excess(trajectory.front());
  for (std::size_t k = 1; k < trajectory.size(); ++k) {
    const double t = trajectory[k].time;
    const double c = excess(trajectory[k]);
    integral += 0.5 * (t - prev_t) * (prev_c + c);
    prev_t = t;
    prev_c = c;
    if (t > 0.0) out.emplace_back(t, head + 2.0 * integral / t);
  }
  return out;
}

}  // namespace ibf
