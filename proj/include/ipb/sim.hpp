#pragma once

// Data-generating processes and the Monte-Carlo coverage harness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <type_traits>
#include <vector>

#include "ipb/assignment.hpp"
#include "ipb/basis.hpp"
#include "ipb/conformal.hpp"
#include "ipb/data.hpp"
#include "ipb/dist.hpp"
#include "ipb/outcome.hpp"
#include "ipb/parallel.hpp"
#include "ipb/propensity.hpp"
#include "ipb/rng.hpp"
#include "ipb/stats.hpp"

namespace ipb {

/// Observational law P_X x P_{T|X} x P_{Y|X,T} with Normal outcome noise.
struct Dgp {
  std::size_t p = 1;
  std::function<void(Rng&, std::span<double>)> sample_x;
  std::function<double(std::span<const double>, Rng&)> sample_t;
  OutcomeFn mean;
  double noise_variance = 1.0;
  /// The true conditional density of T given X.
  GpsModel true_gps;
};

enum class ScenarioId { S1, S2, TruncHomo, TruncHetero, UnifCompare };

enum class Setup {
  OracleOracle,
  LearnedOutcomeOracleWeights,
  OracleOutcomeEstimatedWeights,
  LearnedLearned,
  Unadjusted,
};

inline constexpr std::string_view scenario_name(ScenarioId id) {
  switch (id) {
    case ScenarioId::S1: return "s1";
    case ScenarioId::S2: return "s2";
    case ScenarioId::TruncHomo: return "trunc-homo";
    case ScenarioId::TruncHetero: return "trunc-hetero";
    case ScenarioId::UnifCompare: return "unif-compare";
  }
  return "?";
}

inline constexpr std::string_view setup_name(Setup s) {
  switch (s) {
    case Setup::OracleOracle: return "oracle-oracle";
    case Setup::LearnedOutcomeOracleWeights: return "learned-outcome-oracle-weights";
    case Setup::OracleOutcomeEstimatedWeights: return "oracle-outcome-estimated-weights";
    case Setup::LearnedLearned: return "learned-learned";
    case Setup::Unadjusted: return "unadjusted";
  }
  return "?";
}

inline ScenarioId parse_scenario(std::string_view s) {
  for (auto id : {ScenarioId::S1, ScenarioId::S2, ScenarioId::TruncHomo, ScenarioId::TruncHetero,
                  ScenarioId::UnifCompare})
    if (s == scenario_name(id)) return id;
  throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

inline Setup parse_setup(std::string_view s) {
  for (auto st : {Setup::OracleOracle, Setup::LearnedOutcomeOracleWeights, Setup::OracleOutcomeEstimatedWeights,
                  Setup::LearnedLearned, Setup::Unadjusted})
    if (s == setup_name(st)) return st;
  throw std::invalid_argument("unknown setup '" + std::string(s) + "'");
}

struct Scenario {
  ScenarioId id = ScenarioId::S1;
  Setup setup = Setup::OracleOracle;
  std::size_t n = 1000;
  std::size_t n_test = 10;
  double alpha = 0.1;
  /// Test-time treatment law Q_T; also the weight numerator.
  AssignmentDist shift = NormalAssignment{{1.0, 0.5}};
  double offset = 0.0;
  double train_fraction = 0.5;

  Dgp dgp;
  /// "Oracle weights": OLS Gaussian GPS on this basis, or the true density when empty.
  std::string oracle_gps_basis;
  /// "Estimated weights": Gaussian mixture GPS on this basis.
  std::string mixture_gps_basis;
  /// Learned outcome model: linear quantile regression on this basis.
  std::string outcome_basis;
};

namespace scenarios {

inline Dgp s1_s2_dgp(bool second) {
  Dgp d;
  d.p = 3;
  d.sample_x = [](Rng& r, std::span<double> x) {
    x[0] = r.normal(1.0, 1.0);
    x[1] = r.normal(1.0, 1.0);
    x[2] = r.normal(4.0, 1.0);
  };
  auto tmean = [](std::span<const double> x) { return x[0] - x[1] * x[1] + 0.5 * x[2]; };
  d.sample_t = [tmean](std::span<const double> x, Rng& r) { return r.normal(tmean(x), 20.0); };
  if (!second) {
    d.mean = [](std::span<const double> x, double t) {
      const double x1 = x[0], x2 = x[1];
      return x1 + x2 + t + x1 * x1 + x2 * x2 + t * t + x1 * t + x2 * t + x1 * x2;
    };
  } else {
    d.mean = [](std::span<const double> x, double t) { return x[0] + 2.0 * x[1] + t + 5.0 * x[0] * x[0]; };
  }
  d.noise_variance = 9.0;
  d.true_gps = OracleGaussian{tmean, 20.0};
  return d;
}

inline Dgp truncated_dgp(bool hetero) {
  Dgp d;
  d.p = 1;
  d.sample_x = [](Rng& r, std::span<double> x) { x[0] = r.normal(); };
  auto tmean = [](std::span<const double> x) { return x[0] * x[0] + 1.0; };
  CovariateFn tvar;
  if (hetero)
    tvar = [](std::span<const double> x) { return x[0] * x[0]; };
  else
    tvar = [](std::span<const double>) { return 1.0; };
  OracleTruncatedGaussian gps{tmean, tvar, 0.5, 5.0};
  d.sample_t = [gps](std::span<const double> x, Rng& r) {
    const double v = std::max(gps.variance(x), gps.variance_floor);
    return detail::truncated_normal_sample(TruncatedNormalParams{gps.mean(x), v, gps.lower, gps.upper}, r, kTailMass);
  };
  d.mean = [](std::span<const double> x, double t) { return 3.0 * x[0] + t + x[0] * t; };
  d.noise_variance = 9.0;
  d.true_gps = gps;
  return d;
}

}  // namespace scenarios

/// Defaults for each named scenario.
inline Scenario make_scenario(ScenarioId id, Setup setup = Setup::OracleOracle) {
  Scenario s;
  s.id = id;
  s.setup = setup;
  switch (id) {
    case ScenarioId::S1:
    case ScenarioId::S2:
    case ScenarioId::UnifCompare:
      s.dgp = scenarios::s1_s2_dgp(id != ScenarioId::S1);
      s.oracle_gps_basis = "x1,x2^2,x3";
      s.mixture_gps_basis = "x";
      s.outcome_basis = "linear";
      if (id == ScenarioId::UnifCompare) {
        s.n_test = 200;
        s.shift = NormalAssignment{{1.0, 4.0}};
      }
      break;
    case ScenarioId::TruncHomo:
    case ScenarioId::TruncHetero:
      s.dgp = scenarios::truncated_dgp(id == ScenarioId::TruncHetero);
      s.n = 10000;
      s.alpha = 0.05;
      s.shift = TruncatedNormalAssignment{{2.0, 0.8, 1.0, 5.0}};
      s.offset = 0.001;
      s.oracle_gps_basis.clear();
      s.mixture_gps_basis = "x1^2";
      s.outcome_basis = "x1,t,x1*t";
      break;
  }
  return s;
}

struct TestPoint {
  std::vector<double> x;
  double t = 0.0;
  double y = 0.0;
};

struct GeneratedData {
  Dataset observed;
  std::vector<TestPoint> test;
};

inline GeneratedData generate(const Dgp& dgp, std::size_t n, std::size_t n_test, const AssignmentDist& shift,
                              Rng& rng) {
  DatasetBuilder b(dgp.p);
  b.reserve(n);
  std::vector<double> x(dgp.p);
  const double sd = std::sqrt(dgp.noise_variance);
  for (std::size_t i = 0; i < n; ++i) {
    dgp.sample_x(rng, x);
    const double t = dgp.sample_t(x, rng);
    const double y = dgp.mean(x, t) + sd * rng.normal();
    b.add(y, t, x);
  }
  GeneratedData out{std::move(b).build(), {}};
  out.test.resize(n_test);
  for (auto& tp : out.test) {
    tp.x.resize(dgp.p);
    dgp.sample_x(rng, tp.x);
    tp.t = assignment_sample(shift, rng);
    tp.y = dgp.mean(tp.x, tp.t) + sd * rng.normal();
  }
  return out;
}

inline GeneratedData generate(const Scenario& s, Rng& rng) { return generate(s.dgp, s.n, s.n_test, s.shift, rng); }

struct ReplicationOutcome {
  double coverage = 0.0;
  /// Mean over finite intervals; NaN when every interval was infinite.
  double length = 0.0;
  std::size_t infinite = 0;
  std::size_t points = 0;
  std::vector<double> lengths;  // finite lengths only
};

struct SimResult {
  std::string scenario;
  std::string setup;
  double alpha = 0.0;
  std::size_t replications = 0;
  double coverage_mean = 0.0;
  double coverage_se = 0.0;
  double length_mean = 0.0;
  double length_se = 0.0;
  /// Fraction of test intervals with infinite length (counted as covering).
  double infinite_fraction = 0.0;
  /// Replications contributing to the length statistics.
  std::size_t length_replications = 0;
  std::vector<ReplicationOutcome> per_replication;
};

/// Mean and standard error (sd / sqrt(m)) of the non-NaN entries.
inline std::pair<double, double> mean_and_se(std::span<const double> v) {
  double s = 0.0;
  std::size_t m = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      s += x;
      ++m;
    }
  if (m == 0) return {std::nan(""), std::nan("")};
  const double mean = s / static_cast<double>(m);
  if (m == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v)
    if (!std::isnan(x)) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(m - 1)) / std::sqrt(static_cast<double>(m))};
}

inline SimResult aggregate(std::string scenario, std::string setup, double alpha,
                           std::vector<ReplicationOutcome> reps) {
  SimResult r;
  r.scenario = std::move(scenario);
  r.setup = std::move(setup);
  r.alpha = alpha;
  r.replications = reps.size();
  std::vector<double> cov;
  std::vector<double> len;
  std::size_t inf = 0;
  std::size_t pts = 0;
  for (const auto& o : reps) {
    cov.push_back(o.coverage);
    len.push_back(o.length);
    inf += o.infinite;
    pts += o.points;
    if (!std::isnan(o.length)) ++r.length_replications;
  }
  std::tie(r.coverage_mean, r.coverage_se) = mean_and_se(cov);
  std::tie(r.length_mean, r.length_se) = mean_and_se(len);
  r.infinite_fraction = pts ? static_cast<double>(inf) / static_cast<double>(pts) : 0.0;
  r.per_replication = std::move(reps);
  return r;
}

inline ReplicationOutcome evaluate(const WeightedCalibration& calib, const AssignmentDist& h,
                                   const ConformalConfig& cfg, std::span<const TestPoint> test) {
  ReplicationOutcome o;
  o.points = test.size();
  const WeightedQuantileTable table = cfg.adjust ? calib.table(h) : WeightedQuantileTable{};
  std::size_t covered = 0;
  double len_sum = 0.0;
  for (const auto& tp : test) {
    const Interval iv = calib.interval(table, h, cfg, tp.x, tp.t);
    if (iv.contains(tp.y)) ++covered;
    const double len = iv.length();
    if (std::isfinite(len)) {
      len_sum += len;
      o.lengths.push_back(len);
    } else {
      ++o.infinite;
    }
  }
  o.coverage = test.empty() ? 0.0 : static_cast<double>(covered) / static_cast<double>(test.size());
  o.length = o.lengths.empty() ? std::nan("") : len_sum / static_cast<double>(o.lengths.size());
  return o;
}

/// Fits the GPS a setup calls for on the training rows.
inline GpsModel fit_setup_gps(const Scenario& s, bool estimated, const Dataset& data,
                              std::span<const std::size_t> train, std::uint64_t em_seed) {
  if (estimated) {
    MixtureConfig mc;
    mc.seed = em_seed;
    return fit_gaussian_mixture(data, train, Basis::parse(s.mixture_gps_basis, data.p()), mc).first;
  }
  if (s.oracle_gps_basis.empty()) return s.dgp.true_gps;
  return fit_ols_gaussian(data, train, Basis::parse(s.oracle_gps_basis, data.p()));
}

inline ReplicationOutcome run_replication(const Scenario& s, Rng& rng) {
  GeneratedData g = generate(s, rng);
  const SplitIndices sp = split(g.observed, s.train_fraction, rng);
  const std::uint64_t em_seed = rng();

  const bool learned_outcome = s.setup == Setup::LearnedOutcomeOracleWeights || s.setup == Setup::LearnedLearned ||
                               s.setup == Setup::Unadjusted;
  const bool estimated_weights =
      s.setup == Setup::OracleOutcomeEstimatedWeights || s.setup == Setup::LearnedLearned;

  ConformalConfig cfg;
  cfg.alpha = s.alpha;
  cfg.score_kind = ScoreKind::Cqr;
  cfg.weighting.offset = s.offset;
  cfg.adjust = s.setup != Setup::Unadjusted;

  QuantileModel qm;
  if (learned_outcome) {
    const auto levels = ScoreFunction::levels_for(cfg.score_kind, cfg.alpha);
    qm = fit_linear_pinball_model(g.observed, sp.train, levels, Basis::parse(s.outcome_basis, g.observed.p()));
  } else {
    qm = OracleQuantile{s.dgp.mean, s.dgp.noise_variance};
  }
  GpsModel gps = fit_setup_gps(s, estimated_weights, g.observed, sp.train, em_seed);
  WeightedCalibration calib(g.observed, sp.cal, ScoreFunction::quantile(std::move(qm), cfg.score_kind, cfg.alpha),
                            std::move(gps), cfg.weighting);
  return evaluate(calib, s.shift, cfg, g.test);
}

class ReplicationError : public std::runtime_error {
 public:
  ReplicationError(std::size_t index, const std::string& what)
      : std::runtime_error("replication " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Runs `replications` independent replications. Replication r uses rng.child(r),
/// so the result is identical for every thread count.
template <typename Body>
std::vector<std::invoke_result_t<Body, std::size_t, Rng&>> run_replications(std::size_t replications, const Rng& rng,
                                                                            std::size_t threads, Body&& body) {
  std::vector<std::invoke_result_t<Body, std::size_t, Rng&>> out(replications);
  parallel_for(replications, threads, [&](std::size_t r) {
    Rng child = rng.child(r);
    try {
      out[r] = body(r, child);
    } catch (const std::exception& e) {
      throw ReplicationError(r, e.what());
    }
  });
  return out;
}

inline SimResult run_study(const Scenario& s, std::size_t replications, const Rng& rng, std::size_t threads = 1) {
  if (replications < 10) throw std::invalid_argument("run_study: need at least 10 replications");
  if (s.n < 20) throw std::invalid_argument("run_study: need n >= 20");
  auto reps = run_replications(replications, rng, threads,
                               [&](std::size_t, Rng& r) { return run_replication(s, r); });
  return aggregate(std::string(scenario_name(s.id)), std::string(setup_name(s.setup)), s.alpha, std::move(reps));
}

// --- uniform-numerator comparison -------------------------------------------

struct LengthSummary {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double sd = 0.0;
  std::size_t count = 0;
};

inline LengthSummary summarize_lengths(const SimResult& r) {
  std::vector<double> all;
  for (const auto& o : r.per_replication) all.insert(all.end(), o.lengths.begin(), o.lengths.end());
  LengthSummary s;
  s.count = all.size();
  if (all.empty()) return s;
  std::sort(all.begin(), all.end());
  s.min = all.front();
  s.max = all.back();
  s.q1 = quantile_type7(all, 0.25);
  s.median = quantile_type7(all, 0.5);
  s.q3 = quantile_type7(all, 0.75);
  s.sd = sample_sd(all);
  return s;
}

struct UniformComparison {
  SimResult ipb;
  SimResult uniform;
  LengthSummary ipb_lengths;
  LengthSummary uniform_lengths;
};

/// Uniform numerator over the observed treatment range, or h itself when h is uniform.
inline AssignmentDist uniform_counterpart(const AssignmentDist& h, const Dataset& data) {
  if (std::holds_alternative<UniformAssignment>(h)) return h;
  const auto ts = data.ts();
  const auto [lo, hi] = std::minmax_element(ts.begin(), ts.end());
  return UniformAssignment{*lo, *hi};
}

/// Weighted point regression (absolute residuals around the true mean) under two
/// numerators on identical data: the shift Q_T itself and a uniform density.
inline UniformComparison compare_uniform(const Scenario& s, std::size_t replications, const Rng& rng,
                                         std::size_t threads = 1) {
  if (replications < 10) throw std::invalid_argument("compare_uniform: need at least 10 replications");
  struct Pair {
    ReplicationOutcome ipb;
    ReplicationOutcome uniform;
  };
  auto reps = run_replications(replications, rng, threads, [&](std::size_t, Rng& r) {
    GeneratedData g = generate(s, r);
    const SplitIndices sp = split(g.observed, s.train_fraction, r);
    GpsModel gps = fit_setup_gps(s, false, g.observed, sp.train, 0);
    ConformalConfig cfg;
    cfg.alpha = s.alpha;
    cfg.score_kind = ScoreKind::AbsoluteResidual;
    cfg.weighting.offset = s.offset;
    WeightedCalibration calib(g.observed, sp.cal, ScoreFunction::absolute(OracleMean{s.dgp.mean}), std::move(gps),
                              cfg.weighting);
    Pair p;
    p.ipb = evaluate(calib, s.shift, cfg, g.test);
    p.uniform = evaluate(calib, uniform_counterpart(s.shift, g.observed), cfg, g.test);
    return p;
  });
  std::vector<ReplicationOutcome> a;
  std::vector<ReplicationOutcome> b;
  for (auto& p : reps) {
    a.push_back(std::move(p.ipb));
    b.push_back(std::move(p.uniform));
  }
  UniformComparison out;
  const std::string name(scenario_name(s.id));
  out.ipb = aggregate(name, "ipb", s.alpha, std::move(a));
  out.uniform = aggregate(name, "uniform", s.alpha, std::move(b));
  out.ipb_lengths = summarize_lengths(out.ipb);
  out.uniform_lengths = summarize_lengths(out.uniform);
  return out;
}

// --- output -----------------------------------------------------------------

inline void write_sim_csv_header(std::ostream& os) {
  os << "scenario,setup,alpha,reps,coverage,coverage_se,length,length_se\n";
}

inline void write_sim_csv_row(std::ostream& os, const SimResult& r) {
  os << r.scenario << ',' << r.setup << ',' << format_double(r.alpha) << ',' << r.replications << ','
     << format_double(r.coverage_mean) << ',' << format_double(r.coverage_se) << ',' << format_double(r.length_mean)
     << ',' << format_double(r.length_se) << '\n';
}

}  // namespace ipb
