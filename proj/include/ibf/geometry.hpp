#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "ibf/covmodel.hpp"
#include "ibf/kernel.hpp"
#include "ibf/rng.hpp"
#include "ibf/stats.hpp"

namespace ibf {

class Ball {
 public:
  Ball(Vector center, double radius);
  const Vector& center() const { return center_; }
  double radius() const { return radius_; }

 private:
  Vector center_;
  double radius_;
};

class Box {
 public:
  Box(Vector lo, Vector hi);
  const Vector& lo() const { return lo_; }
  const Vector& hi() const { return hi_; }

 private:
  Vector lo_;
  Vector hi_;
};

/// Points whose axial coordinate lies in [-half_length, half_length] and whose
/// distance from the axis is at most radius.
class Cylinder {
 public:
  Cylinder(Vector center, Vector axis, double half_length, double radius);

  const Vector& center() const { return center_; }
  const Vector& axis() const { return axis_; }
  double half_length() const { return half_length_; }
  double radius() const { return radius_; }
  // Orthonormal basis (d x (d-1)) of the complement of the axis.
  const Matrix& cross_section_basis() const { return basis_; }

 private:
  Vector center_;
  Vector axis_;
  double half_length_;
  double radius_;
  Matrix basis_;
};

class Segment {
 public:
  Segment(Vector a, Vector b);
  const Vector& a() const { return a_; }
  const Vector& b() const { return b_; }
  double length() const { return (b_ - a_).norm(); }
  Vector midpoint() const { return 0.5 * (a_ + b_); }

 private:
  Vector a_;
  Vector b_;
};

/// Disjoint union of the radius-delta cylinders around a list of segments.
class PiecewiseCylinder {
 public:
  /// Throws std::invalid_argument if two fattened segments overlap.
  PiecewiseCylinder(std::vector<Segment> segments, double radius);

  const std::vector<Segment>& segments() const { return segments_; }
  double radius() const { return radius_; }
  const std::vector<Cylinder>& pieces() const { return pieces_; }

 private:
  std::vector<Segment> segments_;
  double radius_;
  std::vector<Cylinder> pieces_;
};

using SetDescriptor = std::variant<Ball, Box, Cylinder, PiecewiseCylinder>;

/// Z(length, delta): |x_1| <= length / 2 and |(x_2, ..., x_d)| <= delta.
Cylinder axis_cylinder(int d, double length, double delta);

/// Radius-delta cylinder around a segment (no end caps).
Cylinder fatten(const Segment& segment, double delta);

int dimension(const SetDescriptor& set);

/// Lebesgue measure in closed form.
double measure(const SetDescriptor& set);

/// Volume of the unit ball in R^d.
double unit_ball_volume(int d);

bool contains(const SetDescriptor& set, const Vector& x);

/// Uniform point in the set.
Vector sample_uniform(const SetDescriptor& set, NoiseStream& rng);

/// Axis-aligned bounding box (lo, hi).
std::pair<Vector, Vector> bounding_box(const SetDescriptor& set);

/// Distance from x to the complement of a convex set (0 outside).
/// Throws std::invalid_argument for PiecewiseCylinder.
double clearance(const SetDescriptor& set, const Vector& x);

/// Euclidean distance between two segments.
double segment_distance(const Segment& s, const Segment& t);

/// E h(|X - Y|) for X, Y independent uniform in the set.
McEstimate pair_kernel_mean(const MonotoneKernel& h, const SetDescriptor& set, long n_samples,
                            std::uint64_t seed);

struct CylinderRatio {
  McEstimate ratio;  // lambda(Z)^-2 * double integral of h over Z x Z
  double reference;  // (1 / 2L) * integral of h(|r|) over [-L, L]
};

/// Pair-kernel ratio over Z(2L, delta) in R^d with its one-dimensional bound.
CylinderRatio cylinder_kernel_ratio(const MonotoneKernel& h, int d, double half_length, double delta,
                                    long n_samples, std::uint64_t seed);

struct SegmentExtraction {
  std::vector<Segment> segments;
  double bar_delta = 0.0;
  double segment_length = 0.0;
  double rounded_length = 0.0;  // L rounded down to a multiple of 6 l
  double slab_width = 0.0;      // 3 l
  std::vector<int> slab_indices;
  Vector chord_start;
  Vector chord_end;

  double total_length() const { return segment_length * static_cast<double>(segments.size()); }
};

/// Extracts disjoint polyline segments, one inside every second slab of width
/// 3 l orthogonal to a chord of length at least L, together with a clearance
/// radius bar_delta below which the fattened segments are disjoint and lie in
/// the (convex) domain.
///
/// The polyline is a connected chain of segments of equal length l lying in
/// the domain. Throws std::invalid_argument when the preconditions fail and
/// std::runtime_error if some slab has no segment wholly inside it.
SegmentExtraction extract_segments(const std::vector<Segment>& polyline, double length,
                                   const SetDescriptor& domain);

/// Builds a connected polyline of equal-length segments through the given
/// vertices' path, resampled at arc-length step l.
std::vector<Segment> resample_polyline(const std::vector<Vector>& vertices, double segment_length);

struct PiecewiseComparison {
  McEstimate piecewise;  // normalized pair-kernel integral over gamma_delta
  McEstimate straight;   // same over Z(n l, delta)
};

/// Throws std::invalid_argument if the fattened segments overlap or the
/// segment lengths differ.
PiecewiseComparison piecewise_vs_straight(const MonotoneKernel& h, const std::vector<Segment>& segments,
                                          double delta, long n_samples, std::uint64_t seed);

}  // namespace ibf
