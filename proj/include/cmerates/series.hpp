#pragma once

#include <cmath>
#include <cstddef>
#include <functional>

#include "cmerates/errors.hpp"

namespace cmerates {

namespace detail {

inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double b,
                                   double fa, double fm, double fb, double whole, double tol,
                                   int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::fabs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

// Adaptive Simpson on [a, b]; tol is an absolute target.
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol,
                        int max_depth = 48) {
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

struct SeriesResult {
  double value = 0.0;        // exact partial sum + midpoint-rule tail
  double partial = 0.0;      // exact sum of the first m_exact terms
  double tail = 0.0;         // integral estimate of the remainder
  double tail_error = 0.0;   // estimated error committed by the tail rule
};

// Sums h(1) + h(2) + ... for positive h that is smooth and decreasing beyond
// m_exact with algebraic decay h(x) ~ c x^{-decay}, decay > 1. The first
// m_exact terms are summed exactly; the remainder is the midpoint-rule
// integral ∫_{m+1/2}^∞ h, whose Euler-Maclaurin error is reported.
template <class F>
SeriesResult sum_with_tail(F&& h, std::size_t m_exact, double decay) {
  if (m_exact < 2) throw argument_error("sum_with_tail: m_exact too small");
  if (!(decay > 1.0)) throw argument_error("sum_with_tail: decay must exceed 1");
  SeriesResult r;
  for (std::size_t i = 1; i <= m_exact; ++i) r.partial += h(static_cast<double>(i));

  // ∫_X^∞ h(x) dx with x = X u^{-q}, q = 2/(decay-1): integrand vanishes at u=0.
  const double X = static_cast<double>(m_exact) + 0.5;
  const double q = 2.0 / (decay - 1.0);
  auto integrand = [&](double u) -> double {
    if (u <= 0.0) return 0.0;
    const double x = X * std::pow(u, -q);
    return h(x) * X * q * std::pow(u, -q - 1.0);
  };
  const double scale = h(X) * X;  // rough magnitude of the tail
  r.tail = integrate(integrand, 0.0, 1.0, std::max(scale, 1e-300) * 1e-12);
  r.tail_error = std::fabs(h(static_cast<double>(m_exact)) - h(static_cast<double>(m_exact) + 1.0)) / 12.0 +
                 1e-12 * r.tail;
  r.value = r.partial + r.tail;
  return r;
}

}  // namespace cmerates
