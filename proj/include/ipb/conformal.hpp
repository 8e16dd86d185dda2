#pragma once

// Split conformal prediction with likelihood-ratio weights.
//
// The weighted threshold is the (1 - alpha) quantile of
//     sum_i p_i delta(V_i) + p_new delta(+inf),
//     p_i = W_i / (sum_j W_j + w_new),  p_new = w_new / (sum_j W_j + w_new).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipb/assignment.hpp"
#include "ipb/data.hpp"
#include "ipb/outcome.hpp"
#include "ipb/parallel.hpp"
#include "ipb/propensity.hpp"

namespace ipb {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sided { Two, Upper, Lower };

enum class ScoreKind { AbsoluteResidual, Cqr, OneSidedUpper, OneSidedLower };

inline const char* to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::AbsoluteResidual: return "absolute";
    case ScoreKind::Cqr: return "cqr";
    case ScoreKind::OneSidedUpper: return "upper";
    case ScoreKind::OneSidedLower: return "lower";
  }
  return "?";
}

struct Interval {
  double lower = -kInf;
  double upper = kInf;
  Sided sided = Sided::Two;

  bool contains(double y) const noexcept { return lower <= y && y <= upper; }
  double length() const noexcept { return upper - lower; }
  bool finite() const noexcept { return std::isfinite(lower) && std::isfinite(upper); }
};

struct WeightedScores {
  std::vector<double> scores;
  std::vector<double> weights;
};

struct ConformalConfig {
  double alpha = 0.1;
  ScoreKind score_kind = ScoreKind::Cqr;
  WeightConfig weighting;
  /// When false the threshold is forced to zero (the raw model interval).
  bool adjust = true;
};

namespace detail {

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
}

}  // namespace detail

/// Sorted, tie-merged calibration scores with prefix sums of max-normalized
/// weights. Built once, queried for any test weight.
class WeightedQuantileTable {
 public:
  WeightedQuantileTable() = default;

  WeightedQuantileTable(std::span<const double> scores, std::span<const double> weights) {
    if (scores.size() != weights.size())
      throw std::invalid_argument("weighted quantile: scores and weights differ in length");
    double wmax = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (std::isnan(scores[i])) throw std::invalid_argument("weighted quantile: NaN score");
      if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
        throw std::invalid_argument("weighted quantile: weights must be finite and non-negative");
      wmax = std::max(wmax, weights[i]);
    }
    if (!(wmax > 0.0)) throw std::invalid_argument("weighted quantile: all calibration weights are zero");
    scale_ = 1.0 / wmax;

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double cum = 0.0;
    for (std::size_t idx : order) {
      const double w = weights[idx] * scale_;
      if (w == 0.0) continue;
      cum += w;
      if (!values_.empty() && values_.back() == scores[idx]) {
        cumulative_.back() = cum;
      } else {
        values_.push_back(scores[idx]);
        cumulative_.push_back(cum);
      }
    }
    total_ = cum;
  }

  /// Smallest V with cumulative mass >= (1 - alpha)(S + w_new), or +inf.
  double quantile(double w_new, double alpha) const {
    detail::check_alpha(alpha);
    if (!(w_new >= 0.0) || std::isnan(w_new)) throw std::invalid_argument("weighted quantile: w_new must be >= 0");
    if (std::isinf(w_new)) return kInf;
    const double target = (1.0 - alpha) * (total_ + w_new * scale_);
    const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), target);
    if (it == cumulative_.end()) return kInf;
    return values_[static_cast<std::size_t>(it - cumulative_.begin())];
  }

  std::size_t distinct() const noexcept { return values_.size(); }
  /// Total calibration mass after normalization by the largest weight.
  double total() const noexcept { return total_; }
  double scale() const noexcept { return scale_; }

 private:
  std::vector<double> values_;
  std::vector<double> cumulative_;
  double total_ = 0.0;
  double scale_ = 1.0;
};

inline double weighted_conformal_quantile(const WeightedScores& ws, double w_new, double alpha) {
  return WeightedQuantileTable(ws.scores, ws.weights).quantile(w_new, alpha);
}

/// Unweighted split-conformal threshold: the ceil((1 - alpha)(n + 1))-th smallest
/// score, or +inf when that rank exceeds n.
inline double split_conformal_threshold(std::span<const double> scores, double alpha) {
  detail::check_alpha(alpha);
  const double rank = std::ceil((1.0 - alpha) * (static_cast<double>(scores.size()) + 1.0));
  if (rank > static_cast<double>(scores.size()) || scores.empty()) return kInf;
  std::vector<double> s(scores.begin(), scores.end());
  const auto k = static_cast<std::size_t>(rank) - 1;
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
  return s[k];
}

// --- scores -----------------------------------------------------------------

/// An outcome model paired with a non-conformity score and the interval it implies.
class ScoreFunction {
 public:
  static ScoreFunction absolute(MeanModel model) {
    ScoreFunction f;
    f.kind_ = ScoreKind::AbsoluteResidual;
    f.mean_ = std::move(model);
    return f;
  }

  /// Quantile-based score. Levels: alpha/2 and 1 - alpha/2 for CQR, 1 - alpha for
  /// upper, alpha for lower.
  static ScoreFunction quantile(QuantileModel model, ScoreKind kind, double alpha) {
    detail::check_alpha(alpha);
    if (kind == ScoreKind::AbsoluteResidual)
      throw std::invalid_argument("ScoreFunction::quantile: absolute score needs a mean model");
    ScoreFunction f;
    f.kind_ = kind;
    f.quantile_ = std::move(model);
    f.levels_ = levels_for(kind, alpha);
    return f;
  }

  static std::vector<double> levels_for(ScoreKind kind, double alpha) {
    switch (kind) {
      case ScoreKind::Cqr: return {alpha / 2.0, 1.0 - alpha / 2.0};
      case ScoreKind::OneSidedUpper: return {1.0 - alpha};
      case ScoreKind::OneSidedLower: return {alpha};
      case ScoreKind::AbsoluteResidual: return {};
    }
    return {};
  }

  ScoreKind kind() const noexcept { return kind_; }

  /// Unconformalized interval (threshold zero).
  Interval base(std::span<const double> x, double t) const {
    switch (kind_) {
      case ScoreKind::AbsoluteResidual: {
        const double m = predict_mean(mean_, x, t);
        return {m, m, Sided::Two};
      }
      case ScoreKind::Cqr: {
        const auto [lo, hi] = predict_quantile_pair(quantile_, x, t, levels_[0], levels_[1]);
        return {lo, hi, Sided::Two};
      }
      case ScoreKind::OneSidedUpper: return {-kInf, predict_quantile(quantile_, x, t, levels_[0]), Sided::Upper};
      case ScoreKind::OneSidedLower: return {predict_quantile(quantile_, x, t, levels_[0]), kInf, Sided::Lower};
    }
    return {};
  }

  double score(std::span<const double> x, double t, double y) const {
    const Interval b = base(x, t);
    switch (kind_) {
      case ScoreKind::AbsoluteResidual: return std::abs(y - b.lower);
      case ScoreKind::Cqr: return std::max(b.lower - y, y - b.upper);
      case ScoreKind::OneSidedUpper: return y - b.upper;
      case ScoreKind::OneSidedLower: return b.lower - y;
    }
    return 0.0;
  }

  /// Base interval widened by eta on each finite side. A negative eta larger
  /// than half the width leaves an empty set, represented by a zero-length
  /// interval at the midpoint.
  Interval widen(const Interval& b, double eta) const {
    Interval out = b;
    if (std::isinf(eta) && eta > 0) {
      out.lower = -kInf;
      out.upper = kInf;
      return out;
    }
    if (b.sided != Sided::Upper) out.lower = b.lower - eta;
    if (b.sided != Sided::Lower) out.upper = b.upper + eta;
    if (out.lower > out.upper) {
      const double mid = 0.5 * (b.lower + b.upper);
      out.lower = mid;
      out.upper = mid;
    }
    return out;
  }

  Interval interval(std::span<const double> x, double t, double eta) const { return widen(base(x, t), eta); }

 private:
  ScoreKind kind_ = ScoreKind::AbsoluteResidual;
  MeanModel mean_ = OracleMean{};
  QuantileModel quantile_ = OracleQuantile{};
  std::vector<double> levels_;
};

inline std::vector<double> calibration_scores(const Dataset& data, std::span<const std::size_t> cal,
                                              const ScoreFunction& f) {
  std::vector<double> v(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) v[i] = f.score(data.x(cal[i]), data.t(cal[i]), data.y(cal[i]));
  return v;
}

// --- unweighted split conformal ----------------------------------------------

/// Split conformal with absolute residuals and the (1 + 1/n) rank correction.
/// Too small a calibration set gives the whole line.
inline Interval split_conformal_interval(const Dataset& data, const SplitIndices& split, const MeanModel& model,
                                         double alpha, std::span<const double> x_new, double t_new = 0.0) {
  const auto f = ScoreFunction::absolute(model);
  const double eta = split_conformal_threshold(calibration_scores(data, split.cal, f), alpha);
  return f.interval(x_new, t_new, eta);
}

// --- weighted calibration ---------------------------------------------------

/// Calibration scores plus cached GPS denominators f(T_i | X_i) + offset, so
/// that weights for any assignment density cost one pass.
class WeightedCalibration {
 public:
  WeightedCalibration(const Dataset& data, std::span<const std::size_t> cal, ScoreFunction score, GpsModel gps,
                      WeightConfig wcfg)
      : score_(std::move(score)), gps_(std::move(gps)), wcfg_(wcfg) {
    if (cal.empty()) throw std::invalid_argument("WeightedCalibration: empty calibration set");
    if (!(wcfg_.offset >= 0.0 && std::isfinite(wcfg_.offset)))
      throw std::invalid_argument("WeightConfig: offset must be finite and non-negative");
    scores_ = calibration_scores(data, cal, score_);
    t_.resize(cal.size());
    den_.resize(cal.size());
    for (std::size_t i = 0; i < cal.size(); ++i) {
      const auto x = data.x(cal[i]);
      t_[i] = data.t(cal[i]);
      den_[i] = gps_density(gps_, t_[i], x) + wcfg_.offset;
      if (!(den_[i] > 0.0)) throw PositivityError(t_[i], x);
    }
  }

  const ScoreFunction& score_function() const noexcept { return score_; }
  const GpsModel& gps() const noexcept { return gps_; }
  const std::vector<double>& scores() const noexcept { return scores_; }

  std::vector<double> weights(const AssignmentDist& h) const {
    std::vector<double> w(t_.size());
    for (std::size_t i = 0; i < t_.size(); ++i) {
      w[i] = assignment_density(h, t_[i]) / den_[i];
      if (!std::isfinite(w[i])) throw std::domain_error("calibration weight overflow at t=" + std::to_string(t_[i]));
    }
    return w;
  }

  WeightedQuantileTable table(const AssignmentDist& h) const { return WeightedQuantileTable(scores_, weights(h)); }

  double test_weight(const AssignmentDist& h, std::span<const double> x, double t) const {
    return stabilized_weight(h, gps_, wcfg_, t, x);
  }

  /// Interval at (x, t) given a table already built for h.
  Interval interval(const WeightedQuantileTable& tab, const AssignmentDist& h, const ConformalConfig& cfg,
                    std::span<const double> x, double t) const {
    if (!cfg.adjust) return score_.interval(x, t, 0.0);
    const double eta = tab.quantile(test_weight(h, x, t), cfg.alpha);
    return score_.interval(x, t, eta);
  }

  Interval interval(const AssignmentDist& h, const ConformalConfig& cfg, std::span<const double> x, double t) const {
    if (!cfg.adjust) return score_.interval(x, t, 0.0);
    return interval(table(h), h, cfg, x, t);
  }

 private:
  ScoreFunction score_;
  GpsModel gps_;
  WeightConfig wcfg_;
  std::vector<double> scores_;
  std::vector<double> t_;
  std::vector<double> den_;
};

/// Weighted conformal point regression: absolute residuals around a mean model.
inline Interval weighted_point_interval(const Dataset& data, const SplitIndices& split, const MeanModel& model,
                                        const GpsModel& gps, const AssignmentDist& h, const ConformalConfig& cfg,
                                        std::span<const double> x_new, double t_new) {
  detail::check_alpha(cfg.alpha);
  WeightedCalibration calib(data, split.cal, ScoreFunction::absolute(model), gps, cfg.weighting);
  return calib.interval(h, cfg, x_new, t_new);
}

/// Weighted conformalized quantile regression (two-sided or one-sided per cfg.score_kind).
inline Interval weighted_cqr_interval(const Dataset& data, const SplitIndices& split, const QuantileModel& model,
                                      const GpsModel& gps, const AssignmentDist& h, const ConformalConfig& cfg,
                                      std::span<const double> x_new, double t_new) {
  WeightedCalibration calib(data, split.cal, ScoreFunction::quantile(model, cfg.score_kind, cfg.alpha), gps,
                            cfg.weighting);
  return calib.interval(h, cfg, x_new, t_new);
}

// --- bands over a treatment grid ---------------------------------------------

struct PredictionBand {
  std::vector<double> t_grid;
  std::vector<Interval> intervals;
  std::vector<double> x;
};

struct BandPoint {
  std::vector<double> x;
  double t = 0.0;
};

using AssignmentFactory = std::function<AssignmentDist(double)>;

/// N evenly spaced points from t_min to t_max inclusive.
inline std::vector<double> linear_grid(double t_min, double t_max, std::size_t n) {
  if (n < 2) throw std::invalid_argument("grid: need at least 2 points");
  if (!(t_min < t_max)) throw std::invalid_argument("grid: need t_min < t_max");
  std::vector<double> g(n);
  const double step = (t_max - t_min) / static_cast<double>(n - 1);
  for (std::size_t k = 0; k < n; ++k) g[k] = t_min + step * static_cast<double>(k);
  g.back() = t_max;
  return g;
}

/// One interval per (x, t) point, with h rebuilt from the factory at each t.
inline std::vector<Interval> band_at_points(const WeightedCalibration& calib, const AssignmentFactory& h_factory,
                                            const ConformalConfig& cfg, std::span<const BandPoint> points,
                                            std::size_t threads = 1) {
  detail::check_alpha(cfg.alpha);
  std::vector<Interval> out(points.size());
  parallel_for(points.size(), threads, [&](std::size_t k) {
    const AssignmentDist h = h_factory(points[k].t);
    out[k] = calib.interval(h, cfg, points[k].x, points[k].t);
  });
  return out;
}

inline PredictionBand prediction_band(const WeightedCalibration& calib, const AssignmentFactory& h_factory,
                                      const ConformalConfig& cfg, std::span<const double> x_new, double t_min,
                                      double t_max, std::size_t n, std::size_t threads = 1) {
  PredictionBand band;
  band.t_grid = linear_grid(t_min, t_max, n);
  band.x.assign(x_new.begin(), x_new.end());
  std::vector<BandPoint> pts;
  pts.reserve(n);
  for (double t : band.t_grid) pts.push_back(BandPoint{band.x, t});
  band.intervals = band_at_points(calib, h_factory, cfg, pts, threads);
  return band;
}

inline PredictionBand prediction_band(const Dataset& data, const SplitIndices& split, const ScoreFunction& score,
                                      const GpsModel& gps, const AssignmentFactory& h_factory,
                                      const ConformalConfig& cfg, std::span<const double> x_new, double t_min,
                                      double t_max, std::size_t n, std::size_t threads = 1) {
  WeightedCalibration calib(data, split.cal, score, gps, cfg.weighting);
  return prediction_band(calib, h_factory, cfg, x_new, t_min, t_max, n, threads);
}

}  // namespace ipb
