#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

namespace classo::normal {

inline constexpr double kProbFloor = 1e-12;

inline double pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline double cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Upper tail 1 - Phi(z) without cancellation.
inline double survival(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

namespace detail {

// Phi(-x) / phi(x) for large positive x via the Laplace continued fraction.
inline double tail_ratio(double x) {
  double frac = x;
  for (int k = 60; k >= 1; --k) frac = x + k / frac;
  return 1.0 / frac;
}

}  // namespace detail

/// Inverse Mills ratio phi(z) / Phi(z), stable for very negative z.
inline double mills(double z) {
  if (z > -25.0) return pdf(z) / cdf(z);
  return 1.0 / detail::tail_ratio(-z);
}

/// log Phi(z) with Phi clamped to [kProbFloor, 1 - kProbFloor].
inline double log_cdf_clamped(double z) {
  const double p = std::clamp(cdf(z), kProbFloor, 1.0 - kProbFloor);
  if (p > 0.5) return std::log1p(-std::max(survival(z), kProbFloor));
  return std::log(p);
}

/// Acklam's rational approximation refined by one Halley step.
inline double quantile(double p) {
  if (p <= 0.0) return -INFINITY;
  if (p >= 1.0) return INFINITY;
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p > 1.0 - 0.02425) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Per-observation probit pieces at linear index `idx`:
/// log-likelihood (clamped), score d/d idx, and weight -d^2/d idx^2 (always in (0, 1)).
struct ObsTerms {
  double loglik;
  double score;
  double weight;
};

inline ObsTerms probit_terms(double y, double idx) {
  const double sign = y > 0.5 ? 1.0 : -1.0;
  const double z = sign * idx;
  const double m = mills(z);
  return {log_cdf_clamped(z), sign * m, m * (z + m)};
}

}  // namespace classo::normal
