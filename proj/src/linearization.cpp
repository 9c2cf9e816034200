#include "ibf/linearization.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unsupported/Eigen/MatrixFunctions>

#include "ibf/parallel.hpp"

namespace ibf {

double AugmentedState::det(int p) const {
  const auto i = static_cast<std::size_t>(p);
  return det_sign[i] * std::exp(log_det[i]);
}

OnePointLinearizer::OnePointLinearizer(const IsotropicModel& model, double dt) : model_(model), dt_(dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const Matrix c = gradient_cov_tensor(model).matrix();
  factor_ = factor_covariance(c, 1e-14);
  const int d = model.d();
  const auto t = gradient_cov_tensor(model);
  ito_square_ = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k)
      for (int j = 0; j < d; ++j) ito_square_(i, k) += t(i, j, j, k);  // E[dF_ij dF_jk] / dt
}

Matrix OnePointLinearizer::from_normals(const Vector& z) const {
  const int d = model_.d();
  Vector v;
  factor_.apply(z, v);
  Matrix df(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) df(i, j) = std::sqrt(dt_) * v(i * d + j);
  return df;
}

Matrix OnePointLinearizer::draw(NoiseStream& noise) const {
  const int d = model_.d();
  Vector z(d * d);
  for (int i = 0; i < d * d; ++i) z(i) = noise.normal();
  return from_normals(z);
}

Matrix onepoint_linearization_step(const Matrix& l, const IsotropicModel& model, const StepConfig& cfg,
                                   NoiseStream& noise) {
  validate(cfg);
  const int d = model.d();
  if (l.rows() != d || l.cols() != d) throw std::invalid_argument("jacobian has the wrong shape");
  const OnePointLinearizer lin(model, cfg.dt);
  const Matrix df = lin.draw(noise);
  return (Matrix::Identity(d, d) + df) * l;
}

double apply_jacobian_step(Matrix& l, const Matrix& df, JacobianScheme scheme, const Matrix& ito_square, double dt) {
  const int d = static_cast<int>(df.rows());
  if (scheme == JacobianScheme::Euler) {
    Matrix g = df;
    g.diagonal().array() += 1.0;
    l = g * l;
    return g.partialPivLu().determinant();
  }
  const Matrix a = df - 0.5 * dt * ito_square;
  l = a.exp() * l;
  (void)d;
  return std::exp(a.trace());
}

LyapunovEstimate lyapunov_estimate(const IsotropicModel& model, double horizon, const StepConfig& cfg, int replicates,
                                   int qr_every, JacobianScheme scheme) {
  validate(cfg);
  if (replicates < 1) throw std::invalid_argument("need at least one replicate");
  if (qr_every < 1) throw std::invalid_argument("QR cadence must be positive");
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  const long steps = steps_for(horizon, cfg.dt);
  const int d = model.d();
  const OnePointLinearizer lin(model, cfg.dt);

  LyapunovEstimate out;
  out.targets = lyapunov_spectrum(model);
  out.samples.assign(static_cast<std::size_t>(replicates), std::vector<double>(static_cast<std::size_t>(d), 0.0));
  parallel_for(static_cast<std::size_t>(replicates), [&](std::size_t r) {
    NoiseStream noise(derive_seed(cfg.seed, {r, 0}));
    Matrix l = Matrix::Identity(d, d);
    Matrix g(d, d);
    Matrix tmp(d, d);
    std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
    auto reorthonormalize = [&] {
      Eigen::HouseholderQR<Matrix> qr(l);
      const Matrix rmat = qr.matrixQR().triangularView<Eigen::Upper>();
      Matrix q = qr.householderQ();
      for (int i = 0; i < d; ++i) {
        acc[static_cast<std::size_t>(i)] += std::log(std::abs(rmat(i, i)));
        if (rmat(i, i) < 0.0) q.col(i) = -q.col(i);
      }
      l = q;
    };
    for (long k = 1; k <= steps; ++k) {
      g = lin.draw(noise);
      if (scheme == JacobianScheme::Euler) {
        g.diagonal().array() += 1.0;
        tmp.noalias() = g * l;
        l.swap(tmp);
      } else {
        apply_jacobian_step(l, g, scheme, lin.ito_square(), cfg.dt);
      }
      if (k % qr_every == 0 || k == steps) reorthonormalize();
    }
    for (int i = 0; i < d; ++i) out.samples[r][static_cast<std::size_t>(i)] = acc[static_cast<std::size_t>(i)] / horizon;
  });

  for (int i = 0; i < d; ++i) {
    std::vector<double> xs;
    for (const auto& s : out.samples) xs.push_back(s[static_cast<std::size_t>(i)]);
    const auto est = mc_mean_se(xs);
    out.estimates.push_back(est.mean);
    out.std_errors.push_back(est.std_error);
  }
  return out;
}

std::vector<double> jacobian_determinants(const IsotropicModel& model, double horizon, const StepConfig& cfg,
                                          int count, JacobianScheme scheme) {
  validate(cfg);
  if (count < 1) throw std::invalid_argument("need at least one sample");
  const long steps = steps_for(horizon, cfg.dt);
  const int d = model.d();
  const OnePointLinearizer lin(model, cfg.dt);
  std::vector<double> out(static_cast<std::size_t>(count));
  parallel_for(out.size(), [&](std::size_t r) {
    NoiseStream noise(derive_seed(cfg.seed, {r, 0}));
    Matrix l = Matrix::Identity(d, d);
    double log_det = 0.0;
    int sign = 1;
    for (long k = 0; k < steps; ++k) {
      const double f = apply_jacobian_step(l, lin.draw(noise), scheme, lin.ito_square(), cfg.dt);
      log_det += std::log(std::abs(f));
      if (f < 0.0) sign = -sign;
    }
    out[r] = sign * std::exp(log_det);
  });
  return out;
}

int augmented_block(int d) { return d + d * d; }

namespace {

// Cross block between markers at x and y (rows: marker at x), z = x - y:
//   Cov(W(x), W(y)) = b(z),            Cov(W_i(x), d_l W_k(y)) = -d_l b_ik(z),
//   Cov(d_j W_i(x), W_k(y)) = d_j b_ik(z), Cov(d_j W_i(x), d_l W_k(y)) = -d_j d_l b_ik(z).
// Closed forms as in grad_b and hess_b, without temporaries. Writes the block
// at (row0, col0) of the column-major matrix `c` and its transpose at
// (col0, row0).
// D > 0 fixes the dimension at compile time so the loops unroll.
template <int D>
void fill_cross_block(const IsotropicModel& model, const double* zp, Matrix& c, Eigen::Index row0, Eigen::Index col0) {
  const int d = D > 0 ? D : model.d();
  const int s = d + d * d;
  const double ell = model.ell();
  const double k1 = model.k1();
  const double k2 = model.k2();
  double u[kMaxAugmentedDim];
  double u2 = 0.0;
  for (int i = 0; i < d; ++i) {
    u[i] = zp[i] / ell;
    u2 += u[i] * u[i];
  }
  const double g = std::exp(-0.5 * u2);
  const double p = 1.0 - k1 * u2;
  const double s1 = g / ell;
  const double s2 = g / (ell * ell);

  double blk[(kMaxAugmentedDim + kMaxAugmentedDim * kMaxAugmentedDim) * (kMaxAugmentedDim + kMaxAugmentedDim * kMaxAugmentedDim)];
  auto at = [&](int r, int col) -> double& { return blk[r * s + col]; };
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      const double dik = i == k ? 1.0 : 0.0;
      const double q = p * dik + k2 * u[i] * u[k];
      at(i, k) = g * q;
      double dq[kMaxAugmentedDim];
      for (int j = 0; j < d; ++j)
        dq[j] = -2.0 * k1 * u[j] * dik + k2 * ((i == j ? u[k] : 0.0) + (k == j ? u[i] : 0.0));
      for (int j = 0; j < d; ++j) {
        const double grad = s1 * (-u[j] * q + dq[j]);
        at(i, d + k * d + j) = -grad;
        at(d + i * d + j, k) = grad;
      }
      for (int j = 0; j < d; ++j)
        for (int l = 0; l < d; ++l) {
          const double djl = j == l ? 1.0 : 0.0;
          const double ddq = -2.0 * k1 * djl * dik + k2 * ((i == l && k == j ? 1.0 : 0.0) + (k == l && i == j ? 1.0 : 0.0));
          at(d + i * d + j, d + k * d + l) = -s2 * ((u[j] * u[l] - djl) * q - u[j] * dq[l] - u[l] * dq[j] + ddq);
        }
    }
  double* data = c.data();
  const Eigen::Index ld = c.rows();
  for (int r = 0; r < s; ++r)
    for (int col = 0; col < s; ++col) {
      const double v = blk[r * s + col];
      data[(col0 + col) * ld + row0 + r] = v;
      data[(row0 + r) * ld + col0 + col] = v;
    }
}

void cluster_joint_covariance(const IsotropicModel& model, const Matrix& positions, const std::vector<int>& members,
                              const Matrix& self, Matrix& c) {
  if (model.d() > kMaxAugmentedDim) throw std::invalid_argument("augmented system supports d <= 6");
  const int s = augmented_block(model.d());
  const int m = static_cast<int>(members.size());
  c.resize(m * s, m * s);
  for (int a = 0; a < m; ++a) {
    c.block(a * s, a * s, s, s) = self;
    for (int b = a + 1; b < m; ++b) {
      double z[kMaxAugmentedDim];
      for (int i = 0; i < model.d(); ++i)
        z[i] = positions(i, members[static_cast<std::size_t>(a)]) - positions(i, members[static_cast<std::size_t>(b)]);
      switch (model.d()) {
        case 2: fill_cross_block<2>(model, z, c, a * s, b * s); break;
        case 3: fill_cross_block<3>(model, z, c, a * s, b * s); break;
        default: fill_cross_block<0>(model, z, c, a * s, b * s);
      }
    }
  }
}

// Scratch storage reused across steps so that the large matrices are not
// reallocated every step.
struct Workspace {
  Matrix cov;
  CovFactor factor;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

Matrix self_block(const IsotropicModel& model) {
  const int d = model.d();
  const int s = augmented_block(d);
  Matrix self = Matrix::Zero(s, s);
  self.topLeftCorner(d, d).setIdentity();
  self.bottomRightCorner(d * d, d * d) = gradient_cov_tensor(model).matrix();
  return self;
}

}  // namespace

Matrix joint_covariance(const IsotropicModel& model, const Matrix& positions) {
  if (positions.rows() != model.d()) throw std::invalid_argument("joint_covariance: dimension mismatch");
  std::vector<int> members(static_cast<std::size_t>(positions.cols()));
  for (std::size_t i = 0; i < members.size(); ++i) members[i] = static_cast<int>(i);
  Matrix c;
  cluster_joint_covariance(model, positions, members, self_block(model), c);
  return c;
}

AugmentedState augmented_start(const Matrix& positions) {
  AugmentedState s;
  s.positions = positions;
  const int d = static_cast<int>(positions.rows());
  const auto n = static_cast<std::size_t>(positions.cols());
  s.jacobians.assign(n, Matrix::Identity(d, d));
  s.log_det.assign(n, 0.0);
  s.det_sign.assign(n, 1);
  return s;
}

AugmentedState augmented_step(const AugmentedState& state, const IsotropicModel& model, const StepConfig& cfg,
                              ParticleNoise& noise, AugmentedStats* stats) {
  const int d = model.d();
  const int n = state.count();
  const int s = augmented_block(d);
  if (state.dim() != d) throw std::invalid_argument("augmented_step: dimension mismatch");
  if (noise.count() != n) throw std::invalid_argument("augmented_step: one noise stream per particle required");

  Vector z;
  noise.draw(s, z);
  const double sdt = std::sqrt(cfg.dt);
  const Matrix self = self_block(model);
  const CovFactor self_factor = factor_covariance(self, 1e-14);

  Vector inc(static_cast<Eigen::Index>(n) * s);
  const auto clusters = coupled_clusters(state.positions, kDecouplingRadius * model.ell());
  std::size_t largest = 0;
  for (const auto& members : clusters) largest = std::max(largest, members.size());
  for (const auto& members : clusters) {
    const int m = static_cast<int>(members.size());
    if (stats) stats->step.max_cluster = std::max(stats->step.max_cluster, m);
    if (m == 1) {
      Vector v;
      self_factor.apply(z.segment(static_cast<Eigen::Index>(members.front()) * s, s), v);
      inc.segment(static_cast<Eigen::Index>(members.front()) * s, s) = v;
      continue;
    }
    auto& ws = workspace();
    cluster_joint_covariance(model, state.positions, members, self, ws.cov);
    const bool is_largest = members.size() == largest;
    factor_covariance_inplace(
        ws.cov, cfg.jitter,
        choose_method(state.positions, members, model.ell(), stats ? &stats->step : nullptr, is_largest), ws.factor);
    const CovFactor& f = ws.factor;
    if (stats && is_largest) stats->step.next_method = preferred_method(f);
    if (stats) {
      stats->step.max_rank = std::max(stats->step.max_rank, f.rank());
      stats->step.eigen_fallback = stats->step.eigen_fallback || f.eigen_fallback;
      stats->step.clipped = std::max(stats->step.clipped, f.clipped);
    }
    Vector zc(m * s);
    for (int a = 0; a < m; ++a)
      zc.segment(a * s, s) = z.segment(static_cast<Eigen::Index>(members[static_cast<std::size_t>(a)]) * s, s);
    Vector v;
    f.apply(zc, v);
    for (int a = 0; a < m; ++a)
      inc.segment(static_cast<Eigen::Index>(members[static_cast<std::size_t>(a)]) * s, s) = v.segment(a * s, s);
  }

  AugmentedState next = state;
  Matrix df(d, d);
  for (int p = 0; p < n; ++p) {
    const auto seg = inc.segment(static_cast<Eigen::Index>(p) * s, s);
    next.positions.col(p) += sdt * seg.head(d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) df(i, j) = sdt * seg(d + i * d + j);
    const auto ps = static_cast<std::size_t>(p);
    const double f = apply_jacobian_step(next.jacobians[ps], df, JacobianScheme::Euler, Matrix(), cfg.dt);
    if (!(f > 0.0)) {
      if (stats) ++stats->nonpositive;
      if (f < 0.0) next.det_sign[ps] = -next.det_sign[ps];
    }
    next.log_det[ps] += std::log(std::abs(f));
  }
  next.step_count = state.step_count + 1;
  next.time = static_cast<double>(next.step_count) * cfg.dt;
  if (!next.positions.allFinite()) throw std::runtime_error("augmented_step: non-finite positions");
  return next;
}

VolumeRun volume_estimate(const VolumeSpec& spec, const IsotropicModel& model, const StepConfig& cfg,
                          std::uint64_t replicate) {
  validate(cfg);
  if (spec.markers < 1) throw std::invalid_argument("need at least one marker");
  if (dimension(spec.set) != model.d()) throw std::invalid_argument("volume_estimate: dimension mismatch");
  const long total = steps_for(spec.horizon, cfg.dt);
  std::vector<double> save_times = spec.save_times;
  if (save_times.empty()) save_times = {0.0, spec.horizon};
  std::sort(save_times.begin(), save_times.end());
  std::vector<long> save_steps;
  for (double t : save_times) {
    const long k = steps_for(t, cfg.dt);
    if (k > total) throw std::invalid_argument("save time beyond the horizon");
    save_steps.push_back(k);
  }

  const int d = model.d();
  const double vol = measure(spec.set);
  NoiseStream init(derive_seed(cfg.seed, {kInitialStreamTag, replicate}));
  Matrix x0(d, spec.markers);
  for (int p = 0; p < spec.markers; ++p) x0.col(p) = sample_uniform(spec.set, init);

  ParticleNoise noise(cfg.seed, replicate, spec.markers);
  AugmentedState state = augmented_start(x0);
  AugmentedStats stats;
  VolumeRun run;
  std::size_t next_save = 0;
  for (long k = 0;; ++k) {
    while (next_save < save_steps.size() && save_steps[next_save] == k) {
      run.times.push_back(state.time);
      run.positions.push_back(state.positions);
      std::vector<double> dets(static_cast<std::size_t>(spec.markers));
      double sum = 0.0;
      for (int p = 0; p < spec.markers; ++p) {
        dets[static_cast<std::size_t>(p)] = state.det(p);
        sum += dets[static_cast<std::size_t>(p)];
      }
      run.dets.push_back(std::move(dets));
      run.volume.push_back(vol * sum / spec.markers);
      ++next_save;
    }
    if (k == total) break;
    state = augmented_step(state, model, cfg, noise, &stats);
  }
  run.nonpositive = stats.nonpositive;
  run.max_cluster = stats.step.max_cluster;
  run.eigen_fallback = stats.step.eigen_fallback;
  return run;
}

std::vector<McEstimate> VolumeEnsemble::curve() const {
  std::vector<McEstimate> out;
  for (std::size_t k = 0; k < times.size(); ++k) {
    std::vector<double> xs;
    for (const auto& r : runs) xs.push_back(r.volume[k]);
    out.push_back(mc_mean_se(xs));
  }
  return out;
}

long VolumeEnsemble::nonpositive() const {
  long n = 0;
  for (const auto& r : runs) n += r.nonpositive;
  return n;
}

VolumeEnsemble volume_ensemble(const VolumeSpec& spec, const IsotropicModel& model, const StepConfig& cfg,
                               int replicates) {
  if (replicates < 1) throw std::invalid_argument("need at least one replicate");
  VolumeEnsemble out;
  out.measure = measure(spec.set);
  out.markers = spec.markers;
  out.runs.resize(static_cast<std::size_t>(replicates));
  parallel_for(out.runs.size(), [&](std::size_t r) { out.runs[r] = volume_estimate(spec, model, cfg, r); });
  out.times = out.runs.front().times;
  return out;
}

std::vector<SecondMoment> second_moment_curve(const VolumeEnsemble& ensemble) {
  std::vector<SecondMoment> out;
  const double vol = ensemble.measure;
  const double n = ensemble.markers;
  for (std::size_t k = 0; k < ensemble.times.size(); ++k) {
    std::vector<double> naive;
    std::vector<double> pairwise;
    for (const auto& r : ensemble.runs) {
      double sum = 0.0;
      double sum_sq = 0.0;
      for (double v : r.dets[k]) {
        sum += v;
        sum_sq += v * v;
      }
      naive.push_back(r.volume[k] * r.volume[k]);
      if (n > 1) pairwise.push_back(vol * vol * (sum * sum - sum_sq) / (n * (n - 1.0)));
    }
    SecondMoment m;
    m.time = ensemble.times[k];
    m.naive = mc_mean_se(naive);
    if (!pairwise.empty()) m.pairwise = mc_mean_se(pairwise);
    out.push_back(m);
  }
  return out;
}

}  // namespace ibf
