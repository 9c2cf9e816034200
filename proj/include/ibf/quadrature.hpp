#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

namespace ibf {

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
  int evaluations = 0;
};

namespace detail {

inline constexpr double kGkNodes[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr double kKronrodWeights[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
// Gauss weights for the odd Kronrod nodes (1, 3, 5, 7).
inline constexpr double kGaussWeights[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class F>
QuadResult gk15(const F& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = f(c);
  double kronrod = kKronrodWeights[7] * fc;
  double gauss = kGaussWeights[3] * fc;
  for (int i = 0; i < 7; ++i) {
    const double dx = h * kGkNodes[i];
    const double sum = f(c - dx) + f(c + dx);
    kronrod += kKronrodWeights[i] * sum;
    if (i % 2 == 1) gauss += kGaussWeights[i / 2] * sum;
  }
  return {kronrod * h, std::abs((kronrod - gauss) * h), 15};
}

template <class F>
QuadResult adapt(const F& f, double a, double b, const QuadResult& whole, double tol, int depth) {
  if (whole.error <= tol || depth <= 0) return whole;
  const double m = 0.5 * (a + b);
  const QuadResult left = gk15(f, a, m);
  const QuadResult right = gk15(f, m, b);
  const QuadResult l = adapt(f, a, m, left, 0.5 * tol, depth - 1);
  const QuadResult r = adapt(f, m, b, right, 0.5 * tol, depth - 1);
  return {l.value + r.value, l.error + r.error, whole.evaluations + l.evaluations + r.evaluations};
}

}  // namespace detail

/// Adaptive Gauss-Kronrod (7/15) by recursive bisection until the local error
/// estimate is below `abs_tol`.
template <class F>
QuadResult integrate(const F& f, double a, double b, double abs_tol = 1e-10, int max_depth = 40) {
  if (!(abs_tol > 0.0)) throw std::invalid_argument("integrate: tolerance must be positive");
  if (a == b) return {};
  return detail::adapt(f, a, b, detail::gk15(f, a, b), abs_tol, max_depth);
}

/// Integrates panel by panel over consecutive breakpoints, each panel refined
/// independently to `abs_tol`.
template <class F>
QuadResult integrate_panels(const F& f, std::span<const double> breaks, double abs_tol = 1e-10) {
  QuadResult total;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const QuadResult p = integrate(f, breaks[i], breaks[i + 1], abs_tol);
    total.value += p.value;
    total.error += p.error;
    total.evaluations += p.evaluations;
  }
  return total;
}

}  // namespace ibf
