#pragma once

// Generalized propensity score models: fitted conditional densities f(t | x).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ipb/basis.hpp"
#include "ipb/data.hpp"
#include "ipb/dist.hpp"
#include "ipb/linalg.hpp"
#include "ipb/rng.hpp"

namespace ipb {

inline constexpr double kVarianceFloor = 1e-8;

using CovariateFn = std::function<double(std::span<const double>)>;

/// Known Normal conditional: T | x ~ N(mean(x), variance).
struct OracleGaussian {
  CovariateFn mean;
  double variance = 1.0;
};

/// Known truncated Normal conditional with covariate-dependent mean and variance.
struct OracleTruncatedGaussian {
  CovariateFn mean;
  CovariateFn variance;
  double lower = 0.0;
  double upper = 1.0;
  double variance_floor = kVarianceFloor;
};

/// T | x ~ N(z(x)'beta, s2) with z the basis row (intercept first).
struct OlsGaussian {
  Basis basis;
  Vector beta;
  double s2 = 1.0;
};

struct RegressionComponent {
  double weight = 1.0;
  Vector beta;
  double variance = 1.0;
};

/// Mixture of Normal regressions sharing one basis.
struct GaussianMixture {
  Basis basis;
  std::vector<RegressionComponent> components;
};

using GpsModel = std::variant<OracleGaussian, OracleTruncatedGaussian, OlsGaussian, GaussianMixture>;

struct FitReport {
  double log_likelihood = 0.0;
  std::size_t n_params = 0;
  double bic = 0.0;
  std::size_t n_components = 1;
  std::size_t n_obs = 0;
  std::size_t iterations = 0;
  bool converged = true;
  std::size_t collapsed_starts = 0;
  /// Log-likelihood after every EM iteration of the selected start.
  std::vector<double> trace;
};

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double log_normal(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (d * d / variance + std::log(2.0 * std::numbers::pi * variance));
}

inline Vector gather_t(const Dataset& data, std::span<const std::size_t> rows) {
  Vector t(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) t[static_cast<Eigen::Index>(i)] = data.t(rows[i]);
  return t;
}

}  // namespace detail

/// OLS of T on the basis over x. s2 = RSS / (n - columns), floored at 1e-8.
inline OlsGaussian fit_ols_gaussian(const Dataset& data, std::span<const std::size_t> rows, const Basis& basis) {
  if (basis.uses_treatment()) throw std::invalid_argument("fit_ols_gaussian: GPS basis may not reference t");
  const Matrix z = basis.design(data, rows);
  const Vector t = detail::gather_t(data, rows);
  if (z.rows() <= z.cols()) throw RankDeficientError("fit_ols_gaussian: need more rows than basis columns");
  auto fit = least_squares(z, t, "fit_ols_gaussian");
  const double s2 = fit.rss / static_cast<double>(z.rows() - z.cols());
  return OlsGaussian{basis, std::move(fit.coef), std::max(s2, kVarianceFloor)};
}

inline double gps_mean(const OlsGaussian& m, std::span<const double> x) { return m.basis.dot(m.beta, x, 0.0); }

struct MixtureConfig {
  std::size_t max_components = 2;
  std::size_t random_restarts = 5;
  std::size_t max_iterations = 500;
  double tolerance = 1e-8;
  std::uint64_t seed = 0;
};

namespace detail {

struct EmState {
  std::vector<RegressionComponent> comps;
  double loglik = -std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
  bool collapsed = false;
  std::vector<double> trace;
};

// Responsibilities (n x k) from current parameters; returns the log-likelihood.
inline double e_step(const Matrix& z, const Vector& t, const std::vector<RegressionComponent>& comps, Matrix& resp) {
  const Eigen::Index n = z.rows();
  const auto k = static_cast<Eigen::Index>(comps.size());
  resp.resize(n, k);
  double ll = 0.0;
  std::vector<double> lp(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < k; ++c) {
      const auto& comp = comps[static_cast<std::size_t>(c)];
      const double mean = z.row(i).dot(comp.beta);
      lp[static_cast<std::size_t>(c)] = std::log(comp.weight) + log_normal(t[i], mean, comp.variance);
      mx = std::max(mx, lp[static_cast<std::size_t>(c)]);
    }
    double s = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) s += std::exp(lp[static_cast<std::size_t>(c)] - mx);
    const double lse = mx + std::log(s);
    ll += lse;
    for (Eigen::Index c = 0; c < k; ++c) resp(i, c) = std::exp(lp[static_cast<std::size_t>(c)] - lse);
  }
  return ll;
}

// Weighted least squares per component. Returns false when a component degenerates.
inline bool m_step(const Matrix& z, const Vector& t, const Matrix& resp, std::vector<RegressionComponent>& comps) {
  const auto n = static_cast<double>(z.rows());
  for (Eigen::Index c = 0; c < resp.cols(); ++c) {
    const Vector w = resp.col(c);
    const double mass = w.sum();
    if (!(mass > static_cast<double>(z.cols()))) return false;
    Matrix zw = z.transpose() * w.asDiagonal();
    Matrix gram = zw * z;
    Eigen::LDLT<Matrix> ldlt(gram);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
    Vector beta = ldlt.solve(zw * t);
    if (!beta.allFinite()) return false;
    const Vector r = t - z * beta;
    const double var = r.cwiseAbs2().dot(w) / mass;
    auto& comp = comps[static_cast<std::size_t>(c)];
    comp.beta = std::move(beta);
    comp.weight = mass / n;
    if (!(var > kVarianceFloor)) {
      comp.variance = kVarianceFloor;
      return false;
    }
    comp.variance = var;
  }
  return true;
}

inline EmState run_em(const Matrix& z, const Vector& t, Matrix resp, const MixtureConfig& cfg) {
  EmState st;
  st.comps.resize(static_cast<std::size_t>(resp.cols()));
  if (!m_step(z, t, resp, st.comps)) {
    st.collapsed = true;
    return st;
  }
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    const double ll = e_step(z, t, st.comps, resp);
    st.trace.push_back(ll);
    st.iterations = it + 1;
    const double prev = st.loglik;
    st.loglik = ll;
    if (std::isfinite(prev) && std::abs(ll - prev) <= cfg.tolerance * std::abs(prev)) {
      st.converged = true;
      break;
    }
    if (!m_step(z, t, resp, st.comps)) {
      st.collapsed = true;
      return st;
    }
  }
  // Parameters now correspond to the final E-step likelihood unless the loop ran out.
  if (!st.converged) st.loglik = e_step(z, t, st.comps, resp);
  return st;
}

inline Matrix init_quantile_split(const Matrix& z, const Vector& t, std::size_t k) {
  const auto n = z.rows();
  Matrix resp = Matrix::Zero(n, static_cast<Eigen::Index>(k));
  if (k == 1) {
    resp.setOnes();
    return resp;
  }
  const Vector r = least_squares(z, t, "fit_gaussian_mixture").residuals;
  std::vector<double> sorted(r.data(), r.data() + r.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cuts;
  for (std::size_t c = 1; c < k; ++c)
    cuts.push_back(sorted[std::min(sorted.size() - 1, c * sorted.size() / k)]);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t c = 0;
    while (c < cuts.size() && r[i] >= cuts[c]) ++c;
    resp(i, static_cast<Eigen::Index>(c)) = 1.0;
  }
  return resp;
}

inline Matrix init_random(Eigen::Index n, std::size_t k, Rng& rng) {
  Matrix resp(n, static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < resp.cols(); ++c) {
      resp(i, c) = rng.uniform_open();
      s += resp(i, c);
    }
    resp.row(i) /= s;
  }
  return resp;
}

}  // namespace detail

/// EM fit of k = 1..max_components mixtures of Normal regressions; the k with the
/// smallest BIC is returned. The one-component model is the OLS fit (its reported
/// density uses the same degrees-of-freedom variance as fit_ols_gaussian; BIC uses
/// the maximum-likelihood variance).
inline std::pair<GaussianMixture, FitReport> fit_gaussian_mixture(const Dataset& data,
                                                                  std::span<const std::size_t> rows,
                                                                  const Basis& basis, const MixtureConfig& cfg = {}) {
  if (basis.uses_treatment()) throw std::invalid_argument("fit_gaussian_mixture: GPS basis may not reference t");
  if (cfg.max_components < 1) throw std::invalid_argument("fit_gaussian_mixture: max_components must be >= 1");
  const std::size_t p = basis.size();
  if (rows.size() <= 10 * (p + 2) * cfg.max_components)
    throw std::invalid_argument("fit_gaussian_mixture: need more than 10*(p+2)*max_components training rows");

  const Matrix z = basis.design(data, rows);
  const Vector t = detail::gather_t(data, rows);
  const auto n = static_cast<double>(rows.size());
  const std::size_t cols = basis.columns();

  GaussianMixture best_model{basis, {}};
  FitReport best;
  best.bic = std::numeric_limits<double>::infinity();

  for (std::size_t k = 1; k <= cfg.max_components; ++k) {
    FitReport rep;
    rep.n_components = k;
    rep.n_obs = rows.size();
    rep.n_params = k * cols + k + (k - 1);
    std::vector<RegressionComponent> comps;

    if (k == 1) {
      auto fit = least_squares(z, t, "fit_gaussian_mixture");
      const double mle_var = std::max(fit.rss / n, kVarianceFloor);
      double ll = 0.0;
      for (Eigen::Index i = 0; i < z.rows(); ++i) ll += detail::log_normal(t[i], t[i] - fit.residuals[i], mle_var);
      rep.log_likelihood = ll;
      rep.iterations = 1;
      rep.trace = {ll};
      const double s2 = std::max(fit.rss / static_cast<double>(z.rows() - z.cols()), kVarianceFloor);
      comps.push_back(RegressionComponent{1.0, std::move(fit.coef), s2});
    } else {
      detail::EmState chosen;
      bool have = false;
      std::size_t collapsed = 0;
      Rng root(cfg.seed);
      for (std::size_t start = 0; start <= cfg.random_restarts; ++start) {
        Matrix resp;
        if (start == 0) {
          resp = detail::init_quantile_split(z, t, k);
        } else {
          Rng rng = root.child(k * 1000 + start);
          resp = detail::init_random(z.rows(), k, rng);
        }
        auto st = detail::run_em(z, t, std::move(resp), cfg);
        if (st.collapsed) {
          ++collapsed;
          continue;
        }
        if (!have || st.loglik > chosen.loglik) {
          chosen = std::move(st);
          have = true;
        }
      }
      if (!have)
        throw FitError("fit_gaussian_mixture: every start collapsed for k=" + std::to_string(k) + " (" +
                       std::to_string(collapsed) + " starts)");
      rep.log_likelihood = chosen.loglik;
      rep.iterations = chosen.iterations;
      rep.converged = chosen.converged;
      rep.collapsed_starts = collapsed;
      rep.trace = std::move(chosen.trace);
      comps = std::move(chosen.comps);
    }
    rep.bic = static_cast<double>(rep.n_params) * std::log(n) - 2.0 * rep.log_likelihood;
    if (rep.bic < best.bic) {
      best = std::move(rep);
      best_model.components = std::move(comps);
    }
  }
  return {std::move(best_model), std::move(best)};
}

// --- evaluation --------------------------------------------------------------

inline double gps_density(const GpsModel& model, double t, std::span<const double> x) {
  detail::require_finite(t, "gps_density");
  return std::visit(
      [&](const auto& m) -> double {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, OracleGaussian>) {
          return normal_pdf(t, NormalParams{m.mean(x), m.variance});
        } else if constexpr (std::is_same_v<M, OracleTruncatedGaussian>) {
          const double v = std::max(m.variance(x), m.variance_floor);
          return detail::truncated_normal_pdf(t, TruncatedNormalParams{m.mean(x), v, m.lower, m.upper}, kTailMass);
        } else if constexpr (std::is_same_v<M, OlsGaussian>) {
          return normal_pdf(t, NormalParams{m.basis.dot(m.beta, x, 0.0), m.s2});
        } else {
          double total = 0.0;
          for (const auto& c : m.components)
            total += c.weight * normal_pdf(t, NormalParams{m.basis.dot(c.beta, x, 0.0), c.variance});
          return total;
        }
      },
      model);
}

/// Residual variance of a single-Gaussian GPS (the s2 used by decile-midpoint assignment).
inline double gps_variance(const GpsModel& model) {
  if (const auto* m = std::get_if<OlsGaussian>(&model)) return m->s2;
  if (const auto* m = std::get_if<OracleGaussian>(&model)) return m->variance;
  if (const auto* m = std::get_if<GaussianMixture>(&model); m && m->components.size() == 1)
    return m->components.front().variance;
  throw std::invalid_argument("gps_variance: model has no single residual variance");
}

}  // namespace ipb
