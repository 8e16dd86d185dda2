#pragma once

// Average dose-response estimators: the Hirano-Imbens GPS imputation, kernel
// weighting with stabilized weights, local linear regression, and percentile
// bootstrap intervals.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipb/assignment.hpp"
#include "ipb/data.hpp"
#include "ipb/dist.hpp"
#include "ipb/linalg.hpp"
#include "ipb/parallel.hpp"
#include "ipb/propensity.hpp"
#include "ipb/rng.hpp"
#include "ipb/stats.hpp"

namespace ipb {

struct AdrfEstimate {
  std::vector<double> t_grid;
  std::vector<double> mu;
  /// True where the estimator has no value (NaN in mu).
  std::vector<bool> missing;
  std::optional<std::vector<double>> ci_lower;
  std::optional<std::vector<double>> ci_upper;
  std::size_t bootstrap_used = 0;
  std::size_t bootstrap_dropped = 0;

  std::size_t missing_count() const { return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), true)); }
};

enum class Kernel { Gaussian, Epanechnikov };

struct KernelConfig {
  double bandwidth = 0.0;  // <= 0 selects the rule-of-thumb bandwidth
  Kernel kernel = Kernel::Gaussian;
};

inline double kernel_value(Kernel k, double u) {
  if (k == Kernel::Gaussian) return std_normal_pdf(u);
  const double a = 1.0 - u * u;
  return a > 0.0 ? 0.75 * a : 0.0;
}

/// 1.06 * sd(T) * n^(-1/5).
inline double silverman_bandwidth(std::span<const double> t) {
  if (t.size() < 2) throw std::invalid_argument("silverman_bandwidth: need at least 2 observations");
  const double h = 1.06 * sample_sd(t) * std::pow(static_cast<double>(t.size()), -0.2);
  if (!(h > 0.0)) throw std::invalid_argument("silverman_bandwidth: treatment has zero spread");
  return h;
}

using MarginalDensity = std::function<double(double)>;

/// Normal density with the sample mean and variance of t.
inline MarginalDensity moment_matched_normal(std::span<const double> t) {
  const double sd = sample_sd(t);
  if (!(sd > 0.0)) throw std::invalid_argument("moment_matched_normal: treatment has zero spread");
  NormalParams p{sample_mean(t), sd * sd};
  return [p](double x) { return normal_pdf(x, p); };
}

// --- Hirano-Imbens -----------------------------------------------------------

/// E[Y | T, R] = a0 + a1 T + a2 T^2 + a3 R + a4 R^2 + a5 T R.
struct HiranoImbensSurface {
  Vector alpha = Vector::Zero(6);

  double operator()(double t, double r) const {
    return alpha[0] + alpha[1] * t + alpha[2] * t * t + alpha[3] * r + alpha[4] * r * r + alpha[5] * t * r;
  }
};

inline HiranoImbensSurface fit_hirano_imbens_surface(const Dataset& data, const GpsModel& gps) {
  const auto n = static_cast<Eigen::Index>(data.size());
  Matrix z(n, 6);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const double t = data.t(ui);
    const double r = gps_density(gps, t, data.x(ui));
    z.row(i) << 1.0, t, t * t, r, r * r, t * r;
    y[i] = data.y(ui);
  }
  return HiranoImbensSurface{least_squares(z, y, "hirano_imbens_adrf").coef};
}

/// mu(t) = mean over units of surface(t, f(t | X_i)).
inline AdrfEstimate hirano_imbens_average(const HiranoImbensSurface& surface, const GpsModel& gps,
                                          const Dataset& units, std::span<const double> t_grid) {
  if (units.size() == 0) throw std::invalid_argument("hirano_imbens_adrf: no units to average over");
  AdrfEstimate est;
  est.t_grid.assign(t_grid.begin(), t_grid.end());
  est.mu.resize(t_grid.size());
  est.missing.assign(t_grid.size(), false);
  for (std::size_t g = 0; g < t_grid.size(); ++g) {
    double s = 0.0;
    for (std::size_t i = 0; i < units.size(); ++i) s += surface(t_grid[g], gps_density(gps, t_grid[g], units.x(i)));
    est.mu[g] = s / static_cast<double>(units.size());
  }
  return est;
}

inline AdrfEstimate hirano_imbens_adrf(const Dataset& data, const GpsModel& gps, std::span<const double> t_grid) {
  return hirano_imbens_average(fit_hirano_imbens_surface(data, gps), gps, data, t_grid);
}

// --- kernel estimators -------------------------------------------------------

namespace detail {

/// Stabilized weights f(T_i) / f(T_i | X_i).
inline std::vector<double> stabilized_unit_weights(const Dataset& data, const GpsModel& gps,
                                                   const MarginalDensity& marginal) {
  std::vector<double> w(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double den = gps_density(gps, data.t(i), data.x(i));
    if (!(den > 0.0)) throw PositivityError(data.t(i), data.x(i));
    w[i] = marginal(data.t(i)) / den;
  }
  return w;
}

inline double resolve_bandwidth(const Dataset& data, const KernelConfig& k) {
  return k.bandwidth > 0.0 ? k.bandwidth : silverman_bandwidth(data.ts());
}

inline constexpr double kMinKernelMass = 1e-12;

}  // namespace detail

inline AdrfEstimate kernel_ipw_adrf(const Dataset& data, const GpsModel& gps, const MarginalDensity& marginal,
                                    const KernelConfig& kcfg, std::span<const double> t_grid) {
  const double h = detail::resolve_bandwidth(data, kcfg);
  const auto w = detail::stabilized_unit_weights(data, gps, marginal);
  AdrfEstimate est;
  est.t_grid.assign(t_grid.begin(), t_grid.end());
  est.mu.assign(t_grid.size(), std::nan(""));
  est.missing.assign(t_grid.size(), true);
  for (std::size_t g = 0; g < t_grid.size(); ++g) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double k = w[i] * kernel_value(kcfg.kernel, (data.t(i) - t_grid[g]) / h) / h;
      num += k * data.y(i);
      den += k;
    }
    if (den > detail::kMinKernelMass) {
      est.mu[g] = num / den;
      est.missing[g] = false;
    }
  }
  return est;
}

inline AdrfEstimate local_linear_adrf(const Dataset& data, const GpsModel& gps, const MarginalDensity& marginal,
                                      const KernelConfig& kcfg, std::span<const double> t_grid) {
  const double h = detail::resolve_bandwidth(data, kcfg);
  const auto w = detail::stabilized_unit_weights(data, gps, marginal);
  AdrfEstimate est;
  est.t_grid.assign(t_grid.begin(), t_grid.end());
  est.mu.assign(t_grid.size(), std::nan(""));
  est.missing.assign(t_grid.size(), true);
  for (std::size_t g = 0; g < t_grid.size(); ++g) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, d0 = 0.0, d1 = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double u = data.t(i) - t_grid[g];
      const double k = w[i] * kernel_value(kcfg.kernel, u / h) / h;
      s0 += k;
      s1 += k * u;
      s2 += k * u * u;
      d0 += k * data.y(i);
      d1 += k * u * data.y(i);
    }
    const double det = s0 * s2 - s1 * s1;
    if (s0 > detail::kMinKernelMass && det > 1e-12 * s0 * s2) {
      est.mu[g] = (d0 * s2 - d1 * s1) / det;
      est.missing[g] = false;
    }
  }
  return est;
}

// --- bootstrap ---------------------------------------------------------------

/// Refits everything it needs (GPS included) from the data it is handed.
using AdrfEstimator = std::function<AdrfEstimate(const Dataset&, std::span<const double>)>;

/// Percentile intervals from B row resamples. Resample b draws rows with
/// child generator b, so results do not depend on the thread count. Resamples
/// whose estimator throws are dropped and counted.
inline AdrfEstimate bootstrap_ci(const AdrfEstimator& estimator, const Dataset& data, std::span<const double> t_grid,
                                 std::size_t B, double level, const Rng& rng, std::size_t threads = 1) {
  if (B < 100) throw std::invalid_argument("bootstrap_ci: need at least 100 resamples");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_ci: level must lie in (0, 1)");
  AdrfEstimate est = estimator(data, t_grid);
  const std::size_t G = t_grid.size();
  const std::size_t n = data.size();

  std::vector<std::vector<double>> draws(B);
  std::vector<char> ok(B, 0);
  parallel_for(B, threads, [&](std::size_t b) {
    Rng r = rng.child(b);
    std::vector<std::size_t> rows(n);
    for (auto& idx : rows) idx = static_cast<std::size_t>(r.below(n));
    try {
      const AdrfEstimate e = estimator(data.subset(rows), t_grid);
      draws[b] = e.mu;
      ok[b] = 1;
    } catch (const std::exception&) {
      ok[b] = 0;
    }
  });

  est.ci_lower.emplace(G, std::nan(""));
  est.ci_upper.emplace(G, std::nan(""));
  est.bootstrap_used = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 1));
  est.bootstrap_dropped = B - est.bootstrap_used;
  const double lo = 0.5 * (1.0 - level);
  const double hi = 1.0 - lo;
  std::vector<double> col;
  for (std::size_t g = 0; g < G; ++g) {
    col.clear();
    for (std::size_t b = 0; b < B; ++b)
      if (ok[b] && !std::isnan(draws[b][g])) col.push_back(draws[b][g]);
    if (col.empty()) continue;
    std::sort(col.begin(), col.end());
    (*est.ci_lower)[g] = quantile_type7(col, lo);
    (*est.ci_upper)[g] = quantile_type7(col, hi);
  }
  return est;
}

}  // namespace ipb
