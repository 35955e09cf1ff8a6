#pragma once

#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

namespace sgdlm {

// Digamma for x > 0: upward recurrence into the asymptotic region, then
// the Bernoulli series in 1/x^2. Accurate to ~1e-13 relative for doubles.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: requires x > 0");
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 -
                                              inv2 * (691.0 / 32760 -
                                                      inv2 * (1.0 / 12)))))));
  return result + std::log(x) - 0.5 * inv - series;
}

// Student-t quantile (CDF inverse) for fractional degrees of freedom.
inline double student_t_quantile(double dof, double prob) {
  if (!(dof > 0.0)) throw std::domain_error("student_t_quantile: dof <= 0");
  boost::math::students_t_distribution<double> dist(dof);
  return boost::math::quantile(dist, prob);
}

// Half-width of the central interval holding `prob` mass of a standard
// Student-t with `dof` degrees of freedom.
inline double student_t_central_halfwidth(double dof, double prob) {
  return student_t_quantile(dof, 0.5 * (1.0 + prob));
}

}  // namespace sgdlm
