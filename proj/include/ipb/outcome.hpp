#pragma once

// Outcome models: conditional means and conditional quantiles at (x, t).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ipb/basis.hpp"
#include "ipb/data.hpp"
#include "ipb/dist.hpp"
#include "ipb/linalg.hpp"

namespace ipb {

using OutcomeFn = std::function<double(std::span<const double>, double)>;

/// Normal noise of fixed variance around a known mean surface.
struct OracleQuantile {
  OutcomeFn mean;
  double variance = 1.0;
};

/// Linear quantile regressions over a shared basis, one coefficient vector per level.
struct LinearPinball {
  Basis basis;
  std::vector<std::pair<double, Vector>> fits;

  const Vector& coefficients(double level) const {
    for (const auto& [lv, coef] : fits)
      if (std::abs(lv - level) <= 1e-12) return coef;
    throw std::invalid_argument("LinearPinball: no fit for level " + std::to_string(level));
  }
};

using QuantileModel = std::variant<OracleQuantile, LinearPinball>;

struct OracleMean {
  OutcomeFn mean;
};

struct OlsMean {
  Basis basis;
  Vector coef;
};

using MeanModel = std::variant<OracleMean, OlsMean>;

class PinballConvergenceError : public std::runtime_error {
 public:
  PinballConvergenceError(const std::string& what, double best_objective, Vector best)
      : std::runtime_error(what), best_objective_(best_objective), best_(std::move(best)) {}
  double best_objective() const noexcept { return best_objective_; }
  const Vector& best_coefficients() const noexcept { return best_; }

 private:
  double best_objective_;
  Vector best_;
};

struct PinballConfig {
  double eps_start = 1e-2;
  double eps_end = 1e-6;
  std::size_t max_iterations = 200;
  double tolerance = 1e-9;
  /// Relative objective change that moves eps to its next, smaller value.
  double stage_tolerance = 1e-4;
  /// The exact vertex descent starts once eps reaches this value or after warm_iterations.
  double descent_eps = 1e-4;
  std::size_t warm_iterations = 40;
};

inline double pinball_loss(double u, double tau) noexcept { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

inline double mean_pinball_loss(const Matrix& z, const Vector& y, const Vector& beta, double tau) {
  const Vector r = y - z * beta;
  double s = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) s += pinball_loss(r[i], tau);
  return s / static_cast<double>(r.size());
}

namespace detail {

// The pinball objective is piecewise linear and convex, so an optimum sits at a
// vertex where k = columns observations are fitted exactly. Starting from the
// k smallest residuals of a nearby iterate, each step tests the subgradient
// condition Z_h' lambda = -sum_{i not in h} z_i psi(r_i), lambda in [tau-1, tau]^k,
// and if some lambda_j violates it releases observation j and walks along the
// edge to the weighted-median breakpoint, which enters the basis.
inline bool vertex_descent(const Matrix& z, const Vector& y, double tau, const Vector& r0, std::size_t max_steps,
                           Vector& out) {
  const Eigen::Index n = z.rows();
  const Eigen::Index k = z.cols();
  if (n <= k) return false;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](Eigen::Index a, Eigen::Index b) { return std::abs(r0[a]) < std::abs(r0[b]); });
  std::vector<Eigen::Index> h(order.begin(), order.begin() + k);
  std::vector<char> in_h(static_cast<std::size_t>(n), 0);
  for (auto i : h) in_h[static_cast<std::size_t>(i)] = 1;

  Matrix zh(k, k);
  Vector yh(k);
  auto load = [&] {
    for (Eigen::Index j = 0; j < k; ++j) {
      zh.row(j) = z.row(h[static_cast<std::size_t>(j)]);
      yh[j] = y[h[static_cast<std::size_t>(j)]];
    }
  };
  load();
  Eigen::FullPivLU<Matrix> lu(zh);
  if (!lu.isInvertible()) return false;
  Vector beta = lu.solve(yh);

  struct Break {
    double s;
    double a;
    Eigen::Index i;
  };
  std::vector<Break> breaks;
  constexpr double slack = 1e-10;
  for (std::size_t step = 0; step < max_steps; ++step) {
    const Vector res = y - z * beta;
    Vector g = Vector::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i)
      if (!in_h[static_cast<std::size_t>(i)]) g += z.row(i).transpose() * (tau - (res[i] < 0.0 ? 1.0 : 0.0));
    const Vector lambda = lu.transpose().solve(Vector(-g));

    Eigen::Index leave = -1;
    double worst = slack;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double v = std::max(lambda[j] - tau, (tau - 1.0) - lambda[j]);
      if (v > worst) {
        worst = v;
        leave = j;
      }
    }
    if (leave < 0) {
      out = beta;
      return true;
    }
    const double sigma = lambda[leave] > tau ? -1.0 : 1.0;
    Vector e = Vector::Zero(k);
    e[leave] = sigma;
    const Vector d = lu.solve(e);
    double slope = (sigma > 0.0 ? 1.0 - tau : tau) + sigma * lambda[leave];

    breaks.clear();
    const Vector zd = z * d;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (in_h[static_cast<std::size_t>(i)]) continue;
      const double a = zd[i];
      if (a == 0.0) continue;
      if ((res[i] >= 0.0 && a > 0.0) || (res[i] < 0.0 && a < 0.0)) breaks.push_back({res[i] / a, a, i});
    }
    std::sort(breaks.begin(), breaks.end(), [](const Break& p, const Break& q) { return p.s < q.s; });
    Eigen::Index enter = -1;
    double step_len = 0.0;
    for (const auto& br : breaks) {
      slope += std::abs(br.a);
      if (slope >= 0.0) {
        enter = br.i;
        step_len = br.s;
        break;
      }
    }
    if (enter < 0) return false;
    beta += step_len * d;
    in_h[static_cast<std::size_t>(h[static_cast<std::size_t>(leave)])] = 0;
    h[static_cast<std::size_t>(leave)] = enter;
    in_h[static_cast<std::size_t>(enter)] = 1;
    load();
    lu.compute(zh);
    if (!lu.isInvertible()) return false;
    beta = lu.solve(yh);
  }
  return false;
}

}  // namespace detail

/// Linear quantile regression. A majorize-minimize reweighted least squares
/// stage, each step solving (Z'DZ) b = Z'Dy + (tau - 1/2) Z'1 with
/// D = diag(1 / (2 max(|r_i|, eps))) and eps shrinking from eps_start toward
/// eps_end, brings the fit near the optimum; an exact vertex descent then
/// finishes it. If the descent cannot run, the smoothed iteration continues to
/// its own tolerance.
inline Vector fit_linear_pinball(const Matrix& z, const Vector& y, double tau, const PinballConfig& cfg = {}) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("fit_linear_pinball: level must lie in (0, 1)");
  if (z.rows() != y.size()) throw std::invalid_argument("fit_linear_pinball: design and response sizes differ");

  Vector beta = least_squares(z, y, "fit_linear_pinball").coef;
  double obj = mean_pinball_loss(z, y, beta, tau);
  Vector best = beta;
  double best_obj = obj;

  const Eigen::Index n = z.rows();
  const Eigen::Index k = z.cols();
  const Vector zsum = z.colwise().sum().transpose();
  const std::size_t descent_steps = 20 * static_cast<std::size_t>(n) + 100;
  double eps = cfg.eps_start;
  bool tried_descent = false;
  Vector d(n);
  Vector vertex;
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    const Vector r = y - z * beta;
    if (!tried_descent && (eps <= cfg.descent_eps || it + 1 >= cfg.warm_iterations)) {
      tried_descent = true;
      if (detail::vertex_descent(z, y, tau, r, descent_steps, vertex)) {
        const double vobj = mean_pinball_loss(z, y, vertex, tau);
        if (vobj <= best_obj + 1e-12 * std::max(best_obj, 1.0)) return vertex;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) d[i] = 0.5 / std::max(std::abs(r[i]), eps);
    const Matrix zd = z.transpose() * d.asDiagonal();
    const Matrix gram = zd * z;
    const Vector rhs = zd * y + (tau - 0.5) * zsum;
    Eigen::LDLT<Matrix> ldlt(gram);
    Vector next = ldlt.solve(rhs);
    if (ldlt.info() != Eigen::Success || !next.allFinite()) next = gram.colPivHouseholderQr().solve(rhs);
    if (!next.allFinite() || next.size() != k) break;
    beta = std::move(next);
    const double prev = obj;
    obj = mean_pinball_loss(z, y, beta, tau);
    if (obj < best_obj) {
      best_obj = obj;
      best = beta;
    }
    const double change = std::abs(prev - obj) / std::max(std::abs(prev), 1e-300);
    if (eps <= cfg.eps_end) {
      if (change <= cfg.tolerance) return best;
    } else if (change <= cfg.stage_tolerance) {
      eps = std::max(eps * 0.1, cfg.eps_end);
    }
  }
  throw PinballConvergenceError("fit_linear_pinball: no convergence within " + std::to_string(cfg.max_iterations) +
                                    " iterations (best mean pinball loss " + std::to_string(best_obj) + ")",
                                best_obj, best);
}

inline Vector gather_y(const Dataset& data, std::span<const std::size_t> rows) {
  Vector y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) y[static_cast<Eigen::Index>(i)] = data.y(rows[i]);
  return y;
}

inline Vector fit_linear_pinball(const Dataset& data, std::span<const std::size_t> rows, double level,
                                 const Basis& basis, const PinballConfig& cfg = {}) {
  return fit_linear_pinball(basis.design(data, rows), gather_y(data, rows), level, cfg);
}

inline LinearPinball fit_linear_pinball_model(const Dataset& data, std::span<const std::size_t> rows,
                                              std::span<const double> levels, const Basis& basis,
                                              const PinballConfig& cfg = {}) {
  const Matrix z = basis.design(data, rows);
  const Vector y = gather_y(data, rows);
  LinearPinball model{basis, {}};
  for (double level : levels) model.fits.emplace_back(level, fit_linear_pinball(z, y, level, cfg));
  return model;
}

inline OlsMean fit_ols_mean(const Dataset& data, std::span<const std::size_t> rows, const Basis& basis) {
  return OlsMean{basis, least_squares(basis.design(data, rows), gather_y(data, rows), "fit_ols_mean").coef};
}

inline double predict_quantile(const QuantileModel& model, std::span<const double> x, double t, double level) {
  if (const auto* m = std::get_if<OracleQuantile>(&model))
    return m->mean(x, t) + normal_quantile(level, NormalParams{0.0, m->variance});
  const auto& m = std::get<LinearPinball>(model);
  return m.basis.dot(m.coefficients(level), x, t);
}

inline double predict_mean(const MeanModel& model, std::span<const double> x, double t) {
  if (const auto* m = std::get_if<OracleMean>(&model)) return m->mean(x, t);
  const auto& m = std::get<OlsMean>(model);
  return m.basis.dot(m.coef, x, t);
}

/// Lower and upper quantile predictions, swapped if they cross.
inline std::pair<double, double> predict_quantile_pair(const QuantileModel& model, std::span<const double> x,
                                                       double t, double lo, double hi) {
  const double a = predict_quantile(model, x, t, lo);
  const double b = predict_quantile(model, x, t, hi);
  return {std::min(a, b), std::max(a, b)};
}

}  // namespace ipb
