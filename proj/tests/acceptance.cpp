// Acceptance suite: one PASS/FAIL line per criterion.
//
// Exit status is 0 when every criterion ran to completion, whatever its verdict,
// and 1 if a criterion could not be evaluated. Pass --strict to make any FAIL
// verdict produce exit status 3 as well.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ipb/ipb.hpp"
#include "oracles.hpp"

using namespace ipb;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 12345;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << std::fixed << v;
  return os.str();
}

bool within(double v, double centre, double tol) { return std::abs(v - centre) <= tol; }

std::vector<std::size_t> iota_rows(std::size_t from, std::size_t to) {
  std::vector<std::size_t> r(to - from);
  std::iota(r.begin(), r.end(), from);
  return r;
}

std::size_t threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// --- 1 and 2 ----------------------------------------------------------------

struct OracleRows {
  SimResult s1;
  SimResult s2;
};

const OracleRows& oracle_rows() {
  static const OracleRows rows = [] {
    OracleRows r;
    r.s1 = run_study(make_scenario(ScenarioId::S1, Setup::OracleOracle), 200, Rng(kSeed), threads());
    r.s2 = run_study(make_scenario(ScenarioId::S2, Setup::OracleOracle), 200, Rng(kSeed), threads());
    return r;
  }();
  return rows;
}

std::string describe(const SimResult& r) {
  return r.scenario + " cov=" + fmt(r.coverage_mean) + " (se " + fmt(r.coverage_se) + ") len=" + fmt(r.length_mean) +
         " (se " + fmt(r.length_se) + ") inf=" + fmt(r.infinite_fraction);
}

Verdict criterion1() {
  const auto& r = oracle_rows();
  bool ok = true;
  for (const SimResult* s : {&r.s1, &r.s2})
    ok = ok && within(s->coverage_mean, 0.901, 0.02) && within(s->length_mean, 9.902, 0.30);
  return {ok, describe(r.s1) + "; " + describe(r.s2) + "; target cov 0.901+-0.02, len 9.902+-0.30"};
}

Verdict criterion2() {
  const auto& r = oracle_rows();
  const double w = 2.0 * 3.0 * normal_quantile(0.95, {0.0, 1.0});
  bool ok = true;
  for (const SimResult* s : {&r.s1, &r.s2}) ok = ok && s->length_mean >= w && s->length_mean <= 1.02 * w;
  return {ok, "width " + fmt(w) + ", allowed [" + fmt(w) + ", " + fmt(1.02 * w) + "]; s1 " + fmt(r.s1.length_mean) +
                  ", s2 " + fmt(r.s2.length_mean)};
}

// --- 3 ----------------------------------------------------------------------

Verdict criterion3() {
  bool ok = true;
  std::string d;
  for (auto id : {ScenarioId::TruncHomo, ScenarioId::TruncHetero}) {
    const SimResult r = run_study(make_scenario(id, Setup::LearnedOutcomeOracleWeights), 100, Rng(kSeed), threads());
    ok = ok && within(r.coverage_mean, 0.950, 0.012) && within(r.length_mean, 11.79, 0.8);
    d += describe(r) + "; ";
  }
  return {ok, d + "target cov 0.950+-0.012, len 11.79+-0.8"};
}

// --- 4 ----------------------------------------------------------------------

Verdict criterion4() {
  const Scenario s = make_scenario(ScenarioId::UnifCompare);
  const Rng root(kSeed);
  int wider = 0;
  constexpr int kStudies = 10;
  UniformComparison first;
  std::string ses;
  for (int k = 0; k < kStudies; ++k) {
    UniformComparison c = compare_uniform(s, 100, root.child(static_cast<std::uint64_t>(k)), threads());
    if (c.uniform.length_se > c.ipb.length_se) ++wider;
    ses += " " + fmt(c.ipb.length_se, 3) + "/" + fmt(c.uniform.length_se, 3);
    if (k == 0) first = std::move(c);
  }
  const bool cov_ok =
      within(first.ipb.coverage_mean, 0.887, 0.015) && within(first.uniform.coverage_mean, 0.892, 0.015);
  const bool se_ok = wider >= 8;
  return {cov_ok && se_ok, "ipb cov=" + fmt(first.ipb.coverage_mean) + " len=" + fmt(first.ipb.length_mean) +
                               ", uniform cov=" + fmt(first.uniform.coverage_mean) +
                               " len=" + fmt(first.uniform.length_mean) + "; length SE ipb/uniform:" + ses + "; uniform larger in " +
                               std::to_string(wider) + "/" + std::to_string(kStudies)};
}

// --- 5 ----------------------------------------------------------------------

Verdict criterion5() {
  bool ok = true;
  std::string d;
  for (auto id : {ScenarioId::S1, ScenarioId::S2}) {
    const SimResult r = run_study(make_scenario(id, Setup::Unadjusted), 200, Rng(kSeed), threads());
    const double gap = (0.9 - r.coverage_mean) / r.coverage_se;
    ok = ok && gap >= 5.0;
    d += r.scenario + " cov=" + fmt(r.coverage_mean) + " (se " + fmt(r.coverage_se) + ", " + fmt(gap, 2) +
         " SE below); ";
  }
  return {ok, d + "need >= 5 SE below 0.9"};
}

// --- 6 ----------------------------------------------------------------------

Verdict criterion6() {
  Rng rng(kSeed);
  int mismatches = 0;
  constexpr int kInstances = 10000;
  for (int k = 0; k < kInstances; ++k) {
    const std::size_t n = 1 + rng.below(25);
    std::vector<double> v(n), w(n);
    const bool ties = k % 4 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = ties ? static_cast<double>(rng.below(6)) : rng.normal() * 3.0;
      w[i] = -std::log(rng.uniform_open()) + 1e-6;
    }
    const double w_new = -std::log(rng.uniform_open()) + 1e-6;
    const double alpha = rng.uniform(0.005, 0.995);
    if (weighted_conformal_quantile({v, w}, w_new, alpha) != oracle::weighted_quantile(v, w, w_new, alpha)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(kInstances - mismatches) + "/" + std::to_string(kInstances) + " exact matches"};
}

// --- 7 ----------------------------------------------------------------------

// Random linear-Gaussian treatment model, nonlinear outcome, normal shift; the
// weights use the true conditional density and the outcome model is a fixed
// wrong quantile pair.
struct CoverageConfig {
  double a1, a2, t_var, h_mean, h_var, noise_sd, alpha;
};

ReplicationOutcome coverage_replication(const CoverageConfig& c, Rng& rng) {
  Dgp dgp;
  dgp.p = 2;
  dgp.sample_x = [](Rng& r, std::span<double> x) {
    x[0] = r.normal();
    x[1] = r.uniform(-1.0, 1.0);
  };
  auto tmean = [c](std::span<const double> x) { return c.a1 * x[0] + c.a2 * x[1]; };
  dgp.sample_t = [tmean, c](std::span<const double> x, Rng& r) { return r.normal(tmean(x), c.t_var); };
  dgp.mean = [](std::span<const double> x, double t) { return std::sin(2.0 * x[0]) + t * x[1] + 0.3 * t * t; };
  dgp.noise_variance = c.noise_sd * c.noise_sd;
  const AssignmentDist h = NormalAssignment{{c.h_mean, c.h_var}};
  GeneratedData g = generate(dgp, 400, 50, h, rng);
  const SplitIndices sp = split(g.observed, 0.5, rng);
  Vector lo = Vector::Zero(4), hi = Vector::Zero(4);
  lo << -1.0, 0.5, 0.0, 0.2;
  hi << 1.0, 0.5, 0.0, 0.2;
  const QuantileModel qm =
      LinearPinball{Basis::main_effects(2), {{c.alpha / 2, lo}, {1.0 - c.alpha / 2, hi}}};
  ConformalConfig cfg;
  cfg.alpha = c.alpha;
  WeightedCalibration calib(g.observed, sp.cal, ScoreFunction::quantile(qm, ScoreKind::Cqr, c.alpha),
                            OracleGaussian{tmean, c.t_var}, cfg.weighting);
  return evaluate(calib, h, cfg, g.test);
}

Verdict criterion7() {
  Rng pick(kSeed);
  bool ok = true;
  std::string d;
  for (int k = 0; k < 5; ++k) {
    CoverageConfig c;
    c.a1 = pick.uniform(-1.5, 1.5);
    c.a2 = pick.uniform(-1.0, 1.0);
    c.t_var = pick.uniform(1.0, 3.0);
    c.h_mean = pick.uniform(-1.0, 1.0);
    c.h_var = pick.uniform(0.3, 1.0) * c.t_var;
    c.noise_sd = pick.uniform(0.5, 2.0);
    c.alpha = k % 2 == 0 ? 0.1 : 0.2;
    auto reps = run_replications(200, pick.child(static_cast<std::uint64_t>(k)), threads(),
                                 [&](std::size_t, Rng& r) { return coverage_replication(c, r); });
    const SimResult r = aggregate("cfg" + std::to_string(k), "exact-weights", c.alpha, std::move(reps));
    const double floor = 1.0 - c.alpha - 3.0 * r.coverage_se;
    ok = ok && r.coverage_mean >= floor;
    d += "cfg" + std::to_string(k) + " cov=" + fmt(r.coverage_mean) + " >= " + fmt(floor) + "; ";
  }
  return {ok, d};
}

// --- 8 ----------------------------------------------------------------------

Verdict criterion8() {
  Rng rng(kSeed);
  int cqr_mismatch = 0, cqr_total = 0;
  for (int rep = 0; rep < 20; ++rep) {
    DatasetBuilder b(1);
    for (int i = 0; i < 200; ++i) {
      const double x = rng.normal();
      const double t = rng.normal(x, 1.0);
      b.add(x + t + rng.normal() * (1 + std::abs(x)), t, std::span<const double>(&x, 1));
    }
    const Dataset d = std::move(b).build();
    const SplitIndices sp = split(d, 0.5, rng);
    const double alpha = rng.uniform(0.05, 0.3);
    const QuantileModel qm = fit_linear_pinball_model(d, sp.train, ScoreFunction::levels_for(ScoreKind::Cqr, alpha),
                                                      Basis::main_effects(1));
    const ScoreFunction f = ScoreFunction::quantile(qm, ScoreKind::Cqr, alpha);
    const double eta = split_conformal_threshold(calibration_scores(d, sp.cal, f), alpha);
    ConformalConfig cfg;
    cfg.alpha = alpha;
    const GpsModel flat = OracleGaussian{[](std::span<const double>) { return 0.5; }, 2.0};
    const WeightedCalibration calib(d, sp.cal, f, flat, cfg.weighting);
    const AssignmentDist h = NormalAssignment{{0.5, 2.0}};
    for (int k = 0; k < 10; ++k) {
      const std::vector<double> x{rng.normal()};
      const double t = rng.normal();
      const Interval a = calib.interval(h, cfg, x, t);
      const Interval e = f.interval(x, t, eta);
      ++cqr_total;
      if (a.lower != e.lower || a.upper != e.upper) ++cqr_mismatch;
    }
  }

  double worst = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    Scenario s = make_scenario(ScenarioId::S1);
    Rng r = Rng(kSeed).child(static_cast<std::uint64_t>(100 + rep));
    const GeneratedData g = generate(s, r);
    const auto rows = iota_rows(0, g.observed.size());
    const Basis basis = Basis::parse(s.oracle_gps_basis, 3);
    MixtureConfig mc;
    mc.max_components = 1;
    mc.seed = r();
    const GpsModel mix = fit_gaussian_mixture(g.observed, rows, basis, mc).first;
    const GpsModel ols = fit_ols_gaussian(g.observed, rows, basis);
    for (int k = 0; k < 200; ++k) {
      std::vector<double> x(3);
      s.dgp.sample_x(r, x);
      const double t = r.normal(1.0, 6.0);
      worst = std::max(worst, std::abs(gps_density(mix, t, x) - gps_density(ols, t, x)));
    }
  }
  return {cqr_mismatch == 0 && worst <= 1e-6, std::to_string(cqr_total - cqr_mismatch) + "/" +
                                                   std::to_string(cqr_total) +
                                                   " CQR intervals identical; max k=1 mixture vs OLS density gap " +
                                                   [&] {
                                                     std::ostringstream os;
                                                     os << std::scientific << std::setprecision(2) << worst;
                                                     return os.str();
                                                   }()};
}

// --- 9 ----------------------------------------------------------------------

// X ~ N(0,1), T | X ~ N(X, 1), Y = g(T) + noise.
Dataset quadratic_data(std::size_t n, Rng& rng, double noise_sd) {
  DatasetBuilder b(1);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    const double t = rng.normal(x, 1.0);
    b.add(1.0 - 0.5 * t + 0.75 * t * t + noise_sd * rng.normal(), t, std::span<const double>(&x, 1));
  }
  return std::move(b).build();
}

double quadratic_truth(double t) { return 1.0 - 0.5 * t + 0.75 * t * t; }

AdrfEstimate hi_with_refit(const Dataset& d, std::span<const double> grid) {
  const GpsModel gps = fit_ols_gaussian(d, iota_rows(0, d.size()), Basis::covariates(1));
  return hirano_imbens_adrf(d, gps, grid);
}

Verdict criterion9() {
  Rng rng(kSeed);
  const GpsModel true_gps = OracleGaussian{[](std::span<const double> x) { return x[0]; }, 1.0};

  double ll_err = 0.0;
  {
    DatasetBuilder b(1);
    for (int i = 0; i < 500; ++i) {
      const double x = rng.normal();
      const double t = rng.normal(x, 1.0);
      b.add(-2.0 + 1.7 * t, t, std::span<const double>(&x, 1));
    }
    const Dataset d = std::move(b).build();
    const std::vector<double> grid = linear_grid(-2.0, 2.0, 9);
    for (Kernel k : {Kernel::Gaussian, Kernel::Epanechnikov}) {
      const auto e = local_linear_adrf(d, true_gps, moment_matched_normal(d.ts()), KernelConfig{0.6, k}, grid);
      for (std::size_t g = 0; g < grid.size(); ++g) ll_err = std::max(ll_err, std::abs(e.mu[g] - (-2.0 + 1.7 * grid[g])));
    }
  }

  const std::vector<double> hi_grid{-1.5, -0.5, 0.5, 1.5};
  double worst_z = 0.0;
  std::string zs;
  {
    const Dataset d = quadratic_data(2000, rng, 1.0);
    const AdrfEstimate est = hi_with_refit(d, hi_grid);
    // Standard error from 400 row resamples.
    std::vector<std::vector<double>> draws(hi_grid.size());
    const Rng br = rng.child(2);
    for (std::size_t b = 0; b < 400; ++b) {
      Rng r = br.child(b);
      std::vector<std::size_t> rows(d.size());
      for (auto& i : rows) i = static_cast<std::size_t>(r.below(d.size()));
      const auto e = hi_with_refit(d.subset(rows), hi_grid);
      for (std::size_t g = 0; g < hi_grid.size(); ++g) draws[g].push_back(e.mu[g]);
    }
    for (std::size_t g = 0; g < hi_grid.size(); ++g) {
      const double se = sample_sd(draws[g]);
      const double z = (est.mu[g] - quadratic_truth(hi_grid[g])) / se;
      worst_z = std::max(worst_z, std::abs(z));
      zs += " " + fmt(z, 2) + "(se " + fmt(se, 3) + ")";
    }
  }

  constexpr int kMeta = 200;
  constexpr double kLevel = 0.9;
  const std::vector<double> t0{0.5};
  std::vector<char> hit(kMeta, 0);
  const Rng meta(kSeed + 9);
  parallel_for(kMeta, threads(), [&](std::size_t m) {
    Rng r = meta.child(m);
    const Dataset d = quadratic_data(150, r, 1.0);
    const auto e = bootstrap_ci(hi_with_refit, d, t0, 200, kLevel, r.child(0));
    hit[m] = (*e.ci_lower)[0] <= quadratic_truth(t0[0]) && quadratic_truth(t0[0]) <= (*e.ci_upper)[0];
  });
  const double coverage = static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / kMeta;

  const bool ok = ll_err <= 1e-9 && worst_z <= 3.0 && std::abs(coverage - kLevel) <= 0.05;
  std::ostringstream os;
  os << "local-linear max error " << std::scientific << std::setprecision(2) << ll_err << "; HI max |z| "
     << std::fixed << std::setprecision(3) << worst_z << " [z:" << zs << "]; bootstrap 90% CI coverage " << coverage << " over " << kMeta
     << " meta-replications";
  return {ok, os.str()};
}

// --- 10 ---------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(IPB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict criterion10() {
  const fs::path dir = fs::temp_directory_path() / ("ipb_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  {
    Rng rng(kSeed);
    DatasetBuilder b(3);
    std::vector<double> x(3);
    const Dgp dgp = make_scenario(ScenarioId::S1).dgp;
    for (int i = 0; i < 400; ++i) {
      dgp.sample_x(rng, x);
      const double t = dgp.sample_t(x, rng);
      b.add(dgp.mean(x, t) + 3.0 * rng.normal(), t, x);
    }
    std::ofstream out(dir / "data.csv");
    write_csv(out, std::move(b).build());
  }
  const std::string data = (dir / "data.csv").string();
  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate", "simulate --scenario s1 --setup learned-learned --reps 10 --n 300"},
      {"unif", "simulate --scenario unif-compare --reps 10 --n 300"},
      {"band", "band --data " + data + " --row 1 --row 7 --grid -10:10:21 --gps mixture --gps-basis x1,x2^2,x3"},
      {"band-decile", "band --data " + data + " --row 2 --grid -5:5:5 --assign decile:0.5 --sided upper"},
      {"adrf", "adrf --data " + data + " --method local-linear --grid -10:10:11 --bootstrap 100"},
  };
  std::vector<std::string> problems;
  for (const auto& [name, args] : commands) {
    std::vector<std::string> contents;
    for (const auto& [tag, extra] : std::vector<std::pair<std::string, std::string>>{
             {"a", " --threads 1"}, {"b", " --threads 1"}, {"c", " --threads 4"}}) {
      const fs::path sub = dir / (name + "_" + tag);
      fs::create_directories(sub);
      const int rc = run_cli(args + extra + " --seed 777 --out " + (sub / "out.csv").string());
      if (rc != 0) problems.push_back(name + " exit " + std::to_string(rc));
      std::string all;
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(sub)) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) all += f.filename().string() + "\n" + slurp(f);
      if (files.empty()) problems.push_back(name + " wrote nothing");
      contents.push_back(all);
    }
    if (contents[0] != contents[1]) problems.push_back(name + " differs between runs");
    if (contents[0] != contents[2]) problems.push_back(name + " differs across thread counts");
  }
  fs::remove_all(dir);
  std::string d = std::to_string(commands.size()) + " commands x (2 runs + 4 threads)";
  for (const auto& p : problems) d += "; " + p;
  return {problems.empty(), d};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--strict") == 0) strict = true;

  const std::vector<std::function<Verdict()>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                       criterion6, criterion7, criterion8, criterion9, criterion10};
  int failed = 0;
  int errored = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    bool error = false;
    try {
      v = criteria[i]();
    } catch (const std::exception& e) {
      error = true;
      v.detail = std::string("error: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (error) ++errored;
    else if (!v.pass) ++failed;
    std::cout << "criterion " << std::setw(2) << i + 1 << ": " << (error ? "ERROR" : v.pass ? "PASS" : "FAIL") << "  "
              << v.detail << "  [" << fmt(secs, 1) << "s]" << std::endl;
  }
  std::cout << criteria.size() - failed - errored << " passed, " << failed << " failed, " << errored << " errored"
            << std::endl;
  if (errored) return 1;
  return strict && failed ? 3 : 0;
}
