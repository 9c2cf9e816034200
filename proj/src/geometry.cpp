#include "ibf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace ibf {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

Vector sample_ball_direction(int d, NoiseStream& rng) {
  Vector v(d);
  do {
    for (int i = 0; i < d; ++i) v(i) = rng.normal();
  } while (v.squaredNorm() == 0.0);
  return v.normalized();
}

// Uniform point in the radius-r ball of R^k.
Vector sample_in_ball(int k, double r, NoiseStream& rng) {
  const Vector dir = sample_ball_direction(k, rng);
  return dir * (r * std::pow(rng.uniform(), 1.0 / k));
}

double axial_coordinate(const Cylinder& c, const Vector& x) { return c.axis().dot(x - c.center()); }

double radial_distance(const Cylinder& c, const Vector& x) {
  const Vector rel = x - c.center();
  return (rel - c.axis().dot(rel) * c.axis()).norm();
}

}  // namespace

Ball::Ball(Vector center, double radius) : center_(std::move(center)), radius_(radius) {
  if (center_.size() < 1) throw std::invalid_argument("ball: empty center");
  if (!(radius > 0.0)) throw std::invalid_argument("ball: radius must be positive");
}

Box::Box(Vector lo, Vector hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
  if (lo_.size() != hi_.size() || lo_.size() < 1) throw std::invalid_argument("box: corner dimensions differ");
  if (!((hi_ - lo_).minCoeff() > 0.0)) throw std::invalid_argument("box: degenerate extent");
}

Cylinder::Cylinder(Vector center, Vector axis, double half_length, double radius)
    : center_(std::move(center)), axis_(std::move(axis)), half_length_(half_length), radius_(radius) {
  const auto d = center_.size();
  if (d < 2 || axis_.size() != d) throw std::invalid_argument("cylinder: dimension mismatch");
  if (!(axis_.norm() > 0.0)) throw std::invalid_argument("cylinder: zero axis");
  if (!(half_length > 0.0) || !(radius > 0.0)) throw std::invalid_argument("cylinder: degenerate extent");
  axis_.normalize();
  Matrix frame = Matrix::Identity(d, d);
  frame.col(0) = axis_;
  Eigen::HouseholderQR<Matrix> qr(frame);
  const Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  basis_ = q.rightCols(d - 1);
}

Segment::Segment(Vector a, Vector b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.size() != b_.size() || a_.size() < 1) throw std::invalid_argument("segment: endpoint dimensions differ");
  if (!((b_ - a_).norm() > 0.0)) throw std::invalid_argument("segment: endpoints coincide");
}

PiecewiseCylinder::PiecewiseCylinder(std::vector<Segment> segments, double radius)
    : segments_(std::move(segments)), radius_(radius) {
  if (segments_.empty()) throw std::invalid_argument("piecewise cylinder: no segments");
  if (!(radius > 0.0)) throw std::invalid_argument("piecewise cylinder: radius must be positive");
  for (std::size_t i = 0; i < segments_.size(); ++i)
    for (std::size_t j = i + 1; j < segments_.size(); ++j)
      if (segment_distance(segments_[i], segments_[j]) <= 2.0 * radius) {
        std::ostringstream msg;
        msg << "piecewise cylinder: fattened segments " << i << " and " << j << " overlap";
        throw std::invalid_argument(msg.str());
      }
  for (const auto& s : segments_) pieces_.push_back(fatten(s, radius));
}

Cylinder axis_cylinder(int d, double length, double delta) {
  Vector axis = Vector::Zero(d);
  axis(0) = 1.0;
  return Cylinder(Vector::Zero(d), axis, 0.5 * length, delta);
}

Cylinder fatten(const Segment& segment, double delta) {
  return Cylinder(segment.midpoint(), segment.b() - segment.a(), 0.5 * segment.length(), delta);
}

int dimension(const SetDescriptor& set) {
  return std::visit(overloaded{[](const Ball& b) { return static_cast<int>(b.center().size()); },
                               [](const Box& b) { return static_cast<int>(b.lo().size()); },
                               [](const Cylinder& c) { return static_cast<int>(c.center().size()); },
                               [](const PiecewiseCylinder& p) { return static_cast<int>(p.segments().front().a().size()); }},
                    set);
}

double unit_ball_volume(int d) {
  return std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

double measure(const SetDescriptor& set) {
  return std::visit(
      overloaded{[](const Ball& b) {
                   const int d = static_cast<int>(b.center().size());
                   return unit_ball_volume(d) * std::pow(b.radius(), d);
                 },
                 [](const Box& b) { return (b.hi() - b.lo()).prod(); },
                 [](const Cylinder& c) {
                   const int d = static_cast<int>(c.center().size());
                   return 2.0 * c.half_length() * unit_ball_volume(d - 1) * std::pow(c.radius(), d - 1);
                 },
                 [](const PiecewiseCylinder& p) {
                   double total = 0.0;
                   for (const auto& c : p.pieces()) total += measure(c);
                   return total;
                 }},
      set);
}

bool contains(const SetDescriptor& set, const Vector& x) {
  return std::visit(overloaded{[&](const Ball& b) { return (x - b.center()).norm() <= b.radius(); },
                               [&](const Box& b) {
                                 return (x - b.lo()).minCoeff() >= 0.0 && (b.hi() - x).minCoeff() >= 0.0;
                               },
                               [&](const Cylinder& c) {
                                 return std::abs(axial_coordinate(c, x)) <= c.half_length() &&
                                        radial_distance(c, x) <= c.radius();
                               },
                               [&](const PiecewiseCylinder& p) {
                                 return std::any_of(p.pieces().begin(), p.pieces().end(),
                                                    [&](const Cylinder& c) { return contains(c, x); });
                               }},
                    set);
}

Vector sample_uniform(const SetDescriptor& set, NoiseStream& rng) {
  return std::visit(
      overloaded{[&](const Ball& b) -> Vector {
                   return b.center() + sample_in_ball(static_cast<int>(b.center().size()), b.radius(), rng);
                 },
                 [&](const Box& b) -> Vector {
                   Vector x(b.lo().size());
                   for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = b.lo()(i) + (b.hi()(i) - b.lo()(i)) * rng.uniform();
                   return x;
                 },
                 [&](const Cylinder& c) -> Vector {
                   const int d = static_cast<int>(c.center().size());
                   const double t = c.half_length() * (2.0 * rng.uniform() - 1.0);
                   const Vector cross = sample_in_ball(d - 1, c.radius(), rng);
                   return c.center() + t * c.axis() + c.cross_section_basis() * cross;
                 },
                 [&](const PiecewiseCylinder& p) -> Vector {
                   // Pieces share the radius, so volume is proportional to length.
                   double total = 0.0;
                   for (const auto& s : p.segments()) total += s.length();
                   double u = rng.uniform() * total;
                   std::size_t k = 0;
                   for (; k + 1 < p.segments().size(); ++k) {
                     u -= p.segments()[k].length();
                     if (u < 0.0) break;
                   }
                   return sample_uniform(p.pieces()[k], rng);
                 }},
      set);
}

std::pair<Vector, Vector> bounding_box(const SetDescriptor& set) {
  return std::visit(
      overloaded{[](const Ball& b) -> std::pair<Vector, Vector> {
                   const Vector r = Vector::Constant(b.center().size(), b.radius());
                   return {b.center() - r, b.center() + r};
                 },
                 [](const Box& b) -> std::pair<Vector, Vector> { return {b.lo(), b.hi()}; },
                 [](const Cylinder& c) -> std::pair<Vector, Vector> {
                   // Per coordinate: half_length |a_i| + radius sqrt(1 - a_i^2).
                   const Vector a = c.axis();
                   Vector ext(a.size());
                   for (Eigen::Index i = 0; i < a.size(); ++i)
                     ext(i) = c.half_length() * std::abs(a(i)) + c.radius() * std::sqrt(std::max(0.0, 1.0 - a(i) * a(i)));
                   return {c.center() - ext, c.center() + ext};
                 },
                 [](const PiecewiseCylinder& p) -> std::pair<Vector, Vector> {
                   auto box = bounding_box(p.pieces().front());
                   for (const auto& c : p.pieces()) {
                     const auto b = bounding_box(c);
                     box.first = box.first.cwiseMin(b.first);
                     box.second = box.second.cwiseMax(b.second);
                   }
                   return box;
                 }},
      set);
}

double clearance(const SetDescriptor& set, const Vector& x) {
  return std::visit(overloaded{[&](const Ball& b) { return std::max(0.0, b.radius() - (x - b.center()).norm()); },
                               [&](const Box& b) {
                                 return std::max(0.0, std::min((x - b.lo()).minCoeff(), (b.hi() - x).minCoeff()));
                               },
                               [&](const Cylinder& c) {
                                 return std::max(0.0, std::min(c.half_length() - std::abs(axial_coordinate(c, x)),
                                                               c.radius() - radial_distance(c, x)));
                               },
                               [&](const PiecewiseCylinder&) -> double {
                                 throw std::invalid_argument("clearance: piecewise cylinders are not convex");
                               }},
                    set);
}

double segment_distance(const Segment& s, const Segment& t) {
  // Closest points of two segments; see Ericson, Real-Time Collision Detection, 5.1.9.
  const Vector d1 = s.b() - s.a();
  const Vector d2 = t.b() - t.a();
  const Vector r = s.a() - t.a();
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  const double c = d1.dot(r);
  const double b = d1.dot(d2);
  const double denom = a * e - b * b;
  double u = denom > 1e-14 * a * e ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
  double v = (b * u + f) / e;
  if (v < 0.0) {
    v = 0.0;
    u = std::clamp(-c / a, 0.0, 1.0);
  } else if (v > 1.0) {
    v = 1.0;
    u = std::clamp((b - c) / a, 0.0, 1.0);
  }
  return ((s.a() + u * d1) - (t.a() + v * d2)).norm();
}

McEstimate pair_kernel_mean(const MonotoneKernel& h, const SetDescriptor& set, long n_samples,
                            std::uint64_t seed) {
  if (n_samples < 2) throw std::invalid_argument("pair_kernel_mean: need at least two samples");
  NoiseStream rng(seed);
  std::vector<double> vals(static_cast<std::size_t>(n_samples));
  for (auto& v : vals) {
    const Vector x = sample_uniform(set, rng);
    const Vector y = sample_uniform(set, rng);
    v = h((x - y).norm());
  }
  return mc_mean_se(vals);
}

CylinderRatio cylinder_kernel_ratio(const MonotoneKernel& h, int d, double half_length, double delta,
                                    long n_samples, std::uint64_t seed) {
  const Cylinder z = axis_cylinder(d, 2.0 * half_length, delta);
  return {pair_kernel_mean(h, z, n_samples, seed), h.mean_on_interval(half_length)};
}

std::vector<Segment> resample_polyline(const std::vector<Vector>& vertices, double segment_length) {
  if (vertices.size() < 2) throw std::invalid_argument("resample_polyline: need at least two vertices");
  if (!(segment_length > 0.0)) throw std::invalid_argument("resample_polyline: segment length must be positive");
  std::vector<Segment> out;
  Vector p = vertices.front();
  std::size_t edge = 0;
  double t_start = 0.0;
  const double l2 = segment_length * segment_length;
  while (edge + 1 < vertices.size()) {
    bool found = false;
    for (std::size_t e = edge; e + 1 < vertices.size() && !found; ++e) {
      const Vector a = vertices[e];
      const Vector dir = vertices[e + 1] - a;
      // |a + t dir - p|^2 = l^2, smallest root beyond the current parameter.
      const Vector w = a - p;
      const double qa = dir.squaredNorm();
      const double qb = 2.0 * dir.dot(w);
      const double qc = w.squaredNorm() - l2;
      const double disc = qb * qb - 4.0 * qa * qc;
      if (qa == 0.0 || disc < 0.0) continue;
      const double lo = e == edge ? t_start : 0.0;
      const double sq = std::sqrt(disc);
      for (double t : {(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)}) {
        if (t >= lo && t <= 1.0) {
          const Vector q = a + t * dir;
          out.emplace_back(p, q);
          p = q;
          edge = e;
          t_start = t;
          found = true;
          break;
        }
      }
    }
    if (!found) break;
  }
  if (out.empty()) throw std::invalid_argument("resample_polyline: path shorter than one segment");
  return out;
}

SegmentExtraction extract_segments(const std::vector<Segment>& polyline, double length,
                                   const SetDescriptor& domain) {
  if (polyline.empty()) throw std::invalid_argument("extract_segments: empty polyline");
  if (std::holds_alternative<PiecewiseCylinder>(domain))
    throw std::invalid_argument("extract_segments: domain must be convex");
  const double l = polyline.front().length();
  for (std::size_t i = 0; i < polyline.size(); ++i) {
    if (std::abs(polyline[i].length() - l) > 1e-9 * l)
      throw std::invalid_argument("extract_segments: segments must share a common length");
    if (i > 0 && (polyline[i].a() - polyline[i - 1].b()).norm() > 1e-9 * l)
      throw std::invalid_argument("extract_segments: polyline is not connected");
  }

  std::vector<Vector> vertices;
  vertices.push_back(polyline.front().a());
  for (const auto& s : polyline) vertices.push_back(s.b());
  for (const auto& v : vertices)
    if (!contains(domain, v)) throw std::invalid_argument("extract_segments: polyline leaves the domain");

  std::size_t ia = 0;
  std::size_t ib = 0;
  double diameter = 0.0;
  for (std::size_t i = 0; i < vertices.size(); ++i)
    for (std::size_t j = i + 1; j < vertices.size(); ++j) {
      const double dist = (vertices[i] - vertices[j]).norm();
      if (dist > diameter) {
        diameter = dist;
        ia = i;
        ib = j;
      }
    }
  if (diameter < length) throw std::invalid_argument("extract_segments: polyline diameter is smaller than L");

  SegmentExtraction out;
  out.segment_length = l;
  out.slab_width = 3.0 * l;
  const double blocks = std::floor(length / (6.0 * l) + 1e-9);
  if (blocks < 1.0) throw std::invalid_argument("extract_segments: L is shorter than six segment lengths");
  out.rounded_length = blocks * 6.0 * l;
  out.chord_start = vertices[ia];
  out.chord_end = vertices[ib];
  const Vector axis = (out.chord_end - out.chord_start).normalized();
  auto proj = [&](const Vector& x) { return axis.dot(x - out.chord_start); };

  const int n = static_cast<int>(blocks);
  for (int m = 0; m < n; ++m) {
    const int slab = 2 * m;
    const double lo = slab * out.slab_width;
    const double hi = lo + out.slab_width;
    const double mid = 0.5 * (lo + hi);
    // First crossing of the slab's mid-plane along the chord's sub-path.
    bool found = false;
    for (std::size_t k = ia; k < ib; ++k) {
      const double pa = proj(polyline[k].a());
      const double pb = proj(polyline[k].b());
      if (std::min(pa, pb) <= mid && mid <= std::max(pa, pb)) {
        if (std::min(pa, pb) <= lo || std::max(pa, pb) >= hi) break;
        out.segments.push_back(polyline[k]);
        out.slab_indices.push_back(slab);
        found = true;
        break;
      }
    }
    if (!found) {
      std::ostringstream msg;
      msg << "extract_segments: no segment wholly inside slab " << slab;
      throw std::runtime_error(msg.str());
    }
  }

  double bar = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.segments.size(); ++i) {
    const auto& s = out.segments[i];
    bar = std::min({bar, clearance(domain, s.a()), clearance(domain, s.b())});
    const double lo = out.slab_indices[i] * out.slab_width;
    const double hi = lo + out.slab_width;
    for (const Vector& p : {s.a(), s.b()}) bar = std::min({bar, proj(p) - lo, hi - proj(p)});
    for (std::size_t j = i + 1; j < out.segments.size(); ++j)
      bar = std::min(bar, 0.5 * segment_distance(s, out.segments[j]));
  }
  out.bar_delta = bar;
  return out;
}

PiecewiseComparison piecewise_vs_straight(const MonotoneKernel& h, const std::vector<Segment>& segments,
                                          double delta, long n_samples, std::uint64_t seed) {
  if (segments.empty()) throw std::invalid_argument("piecewise_vs_straight: no segments");
  const double l = segments.front().length();
  for (const auto& s : segments)
    if (std::abs(s.length() - l) > 1e-9 * l)
      throw std::invalid_argument("piecewise_vs_straight: segments must share a common length");
  const PiecewiseCylinder gamma(segments, delta);
  const int d = static_cast<int>(segments.front().a().size());
  const Cylinder straight = axis_cylinder(d, l * static_cast<double>(segments.size()), delta);
  return {pair_kernel_mean(h, gamma, n_samples, derive_seed(seed, {0})),
          pair_kernel_mean(h, straight, n_samples, derive_seed(seed, {1}))};
}

}  // namespace ibf
