#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace transduct {

// Pairwise (cascade) summation. Used for all Monte Carlo reductions so that
// aggregate totals do not depend on accumulation order or thread count.
inline double pairwise_sum(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // sample sd / sqrt(n)
};

inline MeanSe mean_and_se(std::span<const double> v) {
  if (v.size() < 2) throw std::invalid_argument("mean_and_se: need at least 2 values");
  const double n = static_cast<double>(v.size());
  const double mean = pairwise_sum(v) / n;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = v[i] - mean;
    sq[i] = d * d;
  }
  const double var = pairwise_sum(sq) / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

// Log-spaced grid of `count` values from lo to hi inclusive, increasing.
inline std::vector<double> log_spaced_grid(double lo, double hi, std::size_t count) {
  if (lo <= 0.0 || hi <= lo || count < 2)
    throw std::invalid_argument("log_spaced_grid: need 0 < lo < hi and count >= 2");
  std::vector<double> grid(count);
  const double llo = std::log(lo);
  const double lhi = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(count - 1);
    grid[i] = std::exp(llo + f * (lhi - llo));
  }
  grid.front() = lo;
  grid.back() = hi;
  return grid;
}

// Inverse standard normal CDF (Acklam's rational approximation, refined by
// one Halley step; |error| < 1e-13 on (0,1)).
inline double normal_quantile(double prob) {
  if (!(prob > 0.0 && prob < 1.0)) {
    if (prob == 0.5) return 0.0;
    throw std::invalid_argument("normal_quantile: p must lie in (0,1)");
  }
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (prob < plow) {
    const double q = std::sqrt(-2.0 * std::log(prob));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (prob <= 1.0 - plow) {
    const double q = prob - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - prob));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley refinement against erfc.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - prob;
  const double u = e * std::sqrt(2.0 * 3.141592653589793238462643) * std::exp(x * x / 2.0);
  x -= u / (1.0 + x * u / 2.0);
  return x;
}

}  // namespace transduct
