#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's numerical routines.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

/// Composite Simpson rule with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// Standard normal CDF from the Taylor series of erf (fine for |z| <= 6).
inline double normal_cdf_series(double z) {
  const long double x = z / std::sqrt(2.0L);
  long double term = x;
  long double sum = x;
  for (int n = 1; n < 200; ++n) {
    term *= -x * x / n;
    const long double add = term / (2 * n + 1);
    sum += add;
    if (std::fabs(static_cast<double>(add)) < 1e-22) break;
  }
  const long double erf = 2.0L / std::sqrt(3.14159265358979323846264338327950288L) * sum;
  return static_cast<double>(0.5L * (1.0L + erf));
}

/// Quantile by bisection on the series CDF.
inline double normal_quantile_bisect(double p) {
  double lo = -8.0;
  double hi = 8.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf_series(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// The (1 - alpha) quantile of the discrete law putting mass w_i / (sum w + w_new)
/// on v_i and w_new / (sum w + w_new) on +infinity: the smallest atom whose
/// cumulative mass reaches 1 - alpha.
inline double weighted_quantile(const std::vector<double>& v, const std::vector<double>& w, double w_new,
                                double alpha) {
  long double total = w_new;
  for (double x : w) total += x;
  std::vector<double> atoms = v;
  std::sort(atoms.begin(), atoms.end());
  atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
  for (double a : atoms) {
    long double mass = 0.0L;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] <= a) mass += w[i];
    if (mass / total >= 1.0L - static_cast<long double>(alpha)) return a;
  }
  return std::numeric_limits<double>::infinity();
}

/// Pinball objective, summed.
inline double pinball_sum(const std::vector<double>& r, double tau) {
  double s = 0.0;
  for (double u : r) s += u * (tau - (u < 0.0 ? 1.0 : 0.0));
  return s;
}

}  // namespace oracle
