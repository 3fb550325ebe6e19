#pragma once

#include <cmath>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "swapwm/errors.hpp"

namespace swapwm {

// Values below this are reported as 0 with the underflow flag set.
inline constexpr double kPValueFloor = 1e-300;

enum class Tail { Lower, Upper };

struct TTestResult {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (m - 1 denominator)
  double t = 0.0;   // +-inf when sd = 0
  double p = 1.0;
  bool underflow = false;
  int dof = 0;
};

inline double student_t_cdf(double t, double dof) {
  require(dof > 0.0, "degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  return boost::math::cdf(boost::math::students_t(dof), t);
}

// Lower alpha-quantile (negative for alpha < 0.5).
inline double student_t_quantile(double alpha, double dof) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
  require(dof > 0.0, "degrees of freedom must be positive");
  return boost::math::quantile(boost::math::students_t(dof), alpha);
}

// One-sample t-test of the mean against mu0. Lower: H1 mean < mu0. Upper: H1 mean > mu0.
// With zero spread the statistic is degenerate: p = 0 if the mean lies strictly on the H1 side, else 1.
inline TTestResult one_sample_t_test(const std::vector<double>& xs, double mu0, Tail tail) {
  require(xs.size() >= 2, "t-test needs at least two observations");
  TTestResult r;
  const double m = static_cast<double>(xs.size());
  r.dof = static_cast<int>(xs.size()) - 1;
  for (double x : xs) r.mean += x;
  r.mean /= m;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.sd = std::sqrt(ss / (m - 1.0));
  const bool h1_side = tail == Tail::Lower ? r.mean < mu0 : r.mean > mu0;
  if (r.sd == 0.0) {
    r.t = r.mean == mu0 ? 0.0 : (r.mean < mu0 ? -INFINITY : INFINITY);
    r.p = h1_side ? 0.0 : 1.0;
    return r;
  }
  r.t = (r.mean - mu0) / (r.sd / std::sqrt(m));
  r.p = tail == Tail::Lower ? student_t_cdf(r.t, r.dof) : student_t_cdf(-r.t, r.dof);
  if (r.p < kPValueFloor) {
    r.p = 0.0;
    r.underflow = true;
  }
  return r;
}

}  // namespace swapwm
