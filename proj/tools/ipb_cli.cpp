// ipb: simulation studies, individualized prediction bands and dose-response
// curves from the command line.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ipb/ipb.hpp"

namespace {

/// Bad flag values discovered after parsing; reported like parse errors (exit 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 12345;
  std::string out;
  std::size_t threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed (u64)");
  cmd->add_option("--out", c.out, "Output CSV path");
  cmd->add_option("--threads", c.threads, "Worker threads; results do not depend on this")->check(CLI::PositiveNumber);
}

std::string sig6(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

double number(const std::string& s, const std::string& what) {
  double v = 0.0;
  if (!ipb::parse_double(s, v) || !std::isfinite(v)) throw UsageError(what + ": not a finite number: '" + s + "'");
  return v;
}

std::vector<double> number_list(const std::string& s, const std::string& what) {
  std::vector<double> v;
  for (const auto& part : split_on(s, ',')) v.push_back(number(part, what));
  if (v.empty()) throw UsageError(what + ": empty list");
  return v;
}

std::vector<double> parse_grid(const std::string& grid, const std::string& grid_list) {
  if (!grid.empty() && !grid_list.empty()) throw UsageError("give either --grid or --grid-list, not both");
  if (!grid_list.empty()) return number_list(grid_list, "--grid-list");
  if (grid.empty()) throw UsageError("a treatment grid is required (--grid min:max:N or --grid-list)");
  const auto parts = split_on(grid, ':');
  if (parts.size() != 3) throw UsageError("--grid expects min:max:N");
  const double lo = number(parts[0], "--grid min");
  const double hi = number(parts[1], "--grid max");
  const double n = number(parts[2], "--grid N");
  if (n < 2 || n != std::floor(n)) throw UsageError("--grid N must be an integer >= 2");
  if (!(lo < hi)) throw UsageError("--grid needs min < max");
  return ipb::linear_grid(lo, hi, static_cast<std::size_t>(n));
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << std::setprecision(17);
  return f;
}

ipb::GpsModel fit_gps(const std::string& kind, const std::string& basis_spec, const ipb::Dataset& data,
                      std::span<const std::size_t> rows, std::uint64_t seed, bool verbose = true) {
  const auto basis = ipb::Basis::parse(basis_spec, data.p());
  if (basis.uses_treatment()) throw UsageError("--gps-basis may not reference t");
  if (kind == "ols") return ipb::fit_ols_gaussian(data, rows, basis);
  if (kind == "mixture") {
    ipb::MixtureConfig mc;
    mc.seed = seed;
    auto [model, report] = ipb::fit_gaussian_mixture(data, rows, basis, mc);
    if (verbose)
      std::cerr << "mixture GPS: " << report.n_components << " component(s), BIC " << sig6(report.bic) << '\n';
    return model;
  }
  throw UsageError("--gps must be ols or mixture");
}

// --- simulate ----------------------------------------------------------------

struct SimulateArgs {
  Common common;
  std::string scenario;
  std::string setup = "oracle-oracle";
  std::size_t reps = 200;
  bool full = false;
  std::optional<double> alpha;
  std::optional<double> assign_variance;
  std::optional<std::size_t> n;
};

void print_table(const std::vector<ipb::SimResult>& rows) {
  std::cout << std::left << std::setw(14) << "scenario" << std::setw(34) << "setup" << std::right << std::setw(8)
            << "alpha" << std::setw(7) << "reps" << std::setw(11) << "coverage" << std::setw(11) << "(se)"
            << std::setw(11) << "length" << std::setw(11) << "(se)" << std::setw(11) << "inf.frac" << '\n';
  for (const auto& r : rows)
    std::cout << std::left << std::setw(14) << r.scenario << std::setw(34) << r.setup << std::right << std::setw(8)
              << sig6(r.alpha) << std::setw(7) << r.replications << std::setw(11) << sig6(r.coverage_mean)
              << std::setw(11) << sig6(r.coverage_se) << std::setw(11) << sig6(r.length_mean) << std::setw(11)
              << sig6(r.length_se) << std::setw(11) << sig6(r.infinite_fraction) << '\n';
}

int run_simulate(const SimulateArgs& a) {
  ipb::ScenarioId id;
  ipb::Setup setup;
  try {
    id = ipb::parse_scenario(a.scenario);
    setup = ipb::parse_setup(a.setup);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  ipb::Scenario s = ipb::make_scenario(id, setup);
  if (a.alpha) {
    if (!(*a.alpha > 0.0 && *a.alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
    s.alpha = *a.alpha;
  }
  if (a.n) {
    if (*a.n < 20) throw UsageError("--n must be at least 20");
    s.n = *a.n;
  }
  if (a.assign_variance) {
    if (!(*a.assign_variance > 0.0)) throw UsageError("--assign-variance must be positive");
    std::visit(
        [&](auto& d) {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, ipb::NormalAssignment> || std::is_same_v<D, ipb::TruncatedNormalAssignment>)
            d.params.variance = *a.assign_variance;
          else
            throw UsageError("--assign-variance does not apply to this scenario");
        },
        s.shift);
  }
  const std::size_t reps = a.full ? 1000 : a.reps;
  if (reps < 10) throw UsageError("--reps must be at least 10");

  const ipb::Rng rng(a.common.seed);
  std::vector<ipb::SimResult> rows;
  if (id == ipb::ScenarioId::UnifCompare) {
    auto cmp = ipb::compare_uniform(s, reps, rng, a.common.threads);
    rows.push_back(std::move(cmp.ipb));
    rows.push_back(std::move(cmp.uniform));
    print_table(rows);
    std::cout << '\n' << std::left << std::setw(20) << "length distribution" << std::right << std::setw(11) << "median"
              << std::setw(11) << "q1" << std::setw(11) << "q3" << std::setw(11) << "sd" << '\n';
    for (const auto& [name, L] : {std::pair{"ipb", cmp.ipb_lengths}, std::pair{"uniform", cmp.uniform_lengths}})
      std::cout << std::left << std::setw(20) << name << std::right << std::setw(11) << sig6(L.median) << std::setw(11)
                << sig6(L.q1) << std::setw(11) << sig6(L.q3) << std::setw(11) << sig6(L.sd) << '\n';
  } else {
    rows.push_back(ipb::run_study(s, reps, rng, a.common.threads));
    print_table(rows);
  }
  if (!a.common.out.empty()) {
    auto f = open_out(a.common.out);
    ipb::write_sim_csv_header(f);
    for (const auto& r : rows) ipb::write_sim_csv_row(f, r);
  }
  return 0;
}

// --- band --------------------------------------------------------------------

struct BandArgs {
  Common common;
  std::string data;
  std::vector<std::size_t> rows;
  std::vector<std::string> xs;
  std::string grid;
  std::string grid_list;
  std::string assign = "normal-centered";
  std::string sided = "two";
  std::string score;
  std::string gps = "ols";
  std::string gps_basis = "x";
  std::string basis = "linear";
  double offset = 0.0;
  double alpha = 0.1;
  double train_fraction = 0.5;
};

/// Builds the per-grid-point assignment density from a spec such as
/// `normal:1:0.5`, `normal-centered[:var]`, `truncnorm:m:v:lo:hi`,
/// `uniform:lo:hi` or `decile[:k[:s2]]`.
ipb::AssignmentFactory make_assignment(const std::string& spec, const ipb::Dataset& data, const ipb::GpsModel& gps) {
  const auto parts = split_on(spec, ':');
  const std::string& kind = parts[0];
  auto arg = [&](std::size_t i, const char* what) { return number(parts.at(i), std::string("--assign ") + what); };
  auto gps_s2 = [&]() {
    try {
      return ipb::gps_variance(gps);
    } catch (const std::invalid_argument&) {
      throw UsageError("--assign " + kind + " needs a variance; the fitted GPS has more than one component");
    }
  };
  if (kind == "normal") {
    if (parts.size() != 3) throw UsageError("--assign normal:MEAN:VAR");
    const ipb::AssignmentDist h = ipb::NormalAssignment{{arg(1, "mean"), arg(2, "variance")}};
    ipb::detail::validate(h);
    return [h](double) { return h; };
  }
  if (kind == "normal-centered") {
    if (parts.size() > 2) throw UsageError("--assign normal-centered[:VAR]");
    const double v = parts.size() == 2 ? arg(1, "variance") : gps_s2();
    if (!(v > 0.0)) throw UsageError("--assign normal-centered: variance must be positive");
    return [v](double t) { return ipb::AssignmentDist{ipb::NormalAssignment{{t, v}}}; };
  }
  if (kind == "truncnorm") {
    if (parts.size() != 5) throw UsageError("--assign truncnorm:MEAN:VAR:LO:HI");
    const ipb::AssignmentDist h =
        ipb::TruncatedNormalAssignment{{arg(1, "mean"), arg(2, "variance"), arg(3, "lower"), arg(4, "upper")}};
    ipb::detail::validate(h);
    return [h](double) { return h; };
  }
  if (kind == "uniform") {
    if (parts.size() != 3) throw UsageError("--assign uniform:LO:HI");
    const ipb::AssignmentDist h = ipb::UniformAssignment{arg(1, "lower"), arg(2, "upper")};
    try {
      ipb::detail::validate(h);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return [h](double) { return h; };
  }
  if (kind == "decile") {
    if (parts.size() > 3) throw UsageError("--assign decile[:K[:S2]]");
    ipb::DecileMidpoint base;
    base.k = parts.size() >= 2 ? arg(1, "k") : 1.0;
    base.s2 = parts.size() == 3 ? arg(2, "s2") : gps_s2();
    base.boundaries = ipb::decile_boundaries(data.ts());
    if (!(base.k > 0.0 && base.k <= 1.0)) throw UsageError("--assign decile: k must lie in (0, 1]");
    return [base](double t) {
      ipb::DecileMidpoint h = base;
      h.t_star = t;
      return ipb::AssignmentDist{h};
    };
  }
  throw UsageError("--assign: unknown distribution '" + kind + "'");
}

std::string indexed_path(const std::string& out, std::size_t k, std::size_t total) {
  if (total == 1) return out;
  std::filesystem::path p(out);
  const std::string stem = p.stem().string() + "_" + std::to_string(k + 1);
  return (p.parent_path() / (stem + p.extension().string())).string();
}

int run_band(const BandArgs& a) {
  if (a.rows.empty() && a.xs.empty()) throw UsageError("name at least one individual with --row or --x");
  if (a.common.out.empty()) throw UsageError("--out is required");
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
  if (!(a.offset >= 0.0)) throw UsageError("--offset must be non-negative");
  if (!(a.train_fraction > 0.0 && a.train_fraction < 1.0)) throw UsageError("--train-fraction must lie in (0, 1)");
  const std::vector<double> grid = parse_grid(a.grid, a.grid_list);

  ipb::ScoreKind kind;
  std::string score = a.score;
  if (score.empty()) score = a.sided == "two" ? "cqr" : a.sided;
  if (score == "cqr")
    kind = ipb::ScoreKind::Cqr;
  else if (score == "absolute")
    kind = ipb::ScoreKind::AbsoluteResidual;
  else if (score == "upper")
    kind = ipb::ScoreKind::OneSidedUpper;
  else if (score == "lower")
    kind = ipb::ScoreKind::OneSidedLower;
  else
    throw UsageError("--score must be cqr, absolute, upper or lower");
  const bool two_sided_score = kind == ipb::ScoreKind::Cqr || kind == ipb::ScoreKind::AbsoluteResidual;
  if ((a.sided == "two") != two_sided_score || (a.sided != "two" && score != a.sided))
    throw UsageError("--sided " + a.sided + " is incompatible with --score " + score);

  const ipb::Dataset data = ipb::read_csv(a.data);
  std::vector<std::vector<double>> people;
  for (std::size_t r : a.rows) {
    if (r < 1 || r > data.size()) throw UsageError("--row " + std::to_string(r) + " is outside 1.." + std::to_string(data.size()));
    const auto x = data.x(r - 1);
    people.emplace_back(x.begin(), x.end());
  }
  for (const auto& spec : a.xs) {
    auto x = number_list(spec, "--x");
    if (x.size() != data.p())
      throw UsageError("--x has " + std::to_string(x.size()) + " values but the data has " + std::to_string(data.p()) +
                       " covariates");
    people.push_back(std::move(x));
  }

  ipb::Rng rng(a.common.seed);
  const ipb::SplitIndices sp = ipb::split(data, a.train_fraction, rng);
  const std::uint64_t em_seed = rng();
  const ipb::Basis basis = ipb::Basis::parse(a.basis, data.p());
  ipb::ConformalConfig cfg;
  cfg.alpha = a.alpha;
  cfg.score_kind = kind;
  cfg.weighting.offset = a.offset;

  ipb::ScoreFunction f = kind == ipb::ScoreKind::AbsoluteResidual
                             ? ipb::ScoreFunction::absolute(ipb::fit_ols_mean(data, sp.train, basis))
                             : ipb::ScoreFunction::quantile(
                                   ipb::fit_linear_pinball_model(data, sp.train,
                                                                 ipb::ScoreFunction::levels_for(kind, a.alpha), basis),
                                   kind, a.alpha);
  ipb::GpsModel gps = fit_gps(a.gps, a.gps_basis, data, sp.train, em_seed);
  const ipb::AssignmentFactory factory = make_assignment(a.assign, data, gps);
  const ipb::WeightedCalibration calib(data, sp.cal, std::move(f), std::move(gps), cfg.weighting);

  for (std::size_t k = 0; k < people.size(); ++k) {
    std::vector<ipb::BandPoint> pts;
    for (double t : grid) pts.push_back({people[k], t});
    const auto ivs = ipb::band_at_points(calib, factory, cfg, pts, a.common.threads);
    const std::string path = indexed_path(a.common.out, k, people.size());
    auto out = open_out(path);
    out << "t,lower,upper\n";
    for (std::size_t g = 0; g < grid.size(); ++g)
      out << ipb::format_double(grid[g]) << ',' << ipb::format_double(ivs[g].lower) << ','
          << ipb::format_double(ivs[g].upper) << '\n';
    std::cout << "individual " << k + 1 << ": " << grid.size() << " intervals -> " << path << '\n';
  }
  return 0;
}

// --- adrf --------------------------------------------------------------------

struct AdrfArgs {
  Common common;
  std::string data;
  std::string method = "hi";
  std::string grid;
  std::string grid_list;
  std::size_t bootstrap = 0;
  double level = 0.95;
  double bandwidth = 0.0;
  std::string kernel = "gaussian";
  std::string gps = "ols";
  std::string gps_basis = "x";
};

int run_adrf(const AdrfArgs& a) {
  if (a.common.out.empty()) throw UsageError("--out is required");
  if (a.method != "hi" && a.method != "kernel-ipw" && a.method != "local-linear")
    throw UsageError("--method must be hi, kernel-ipw or local-linear");
  if (a.bootstrap != 0 && a.bootstrap < 100) throw UsageError("--bootstrap needs at least 100 resamples");
  if (!(a.level > 0.0 && a.level < 1.0)) throw UsageError("--level must lie in (0, 1)");
  if (a.bandwidth < 0.0) throw UsageError("--bandwidth must be positive (or 0 for the rule of thumb)");
  ipb::KernelConfig kc;
  kc.bandwidth = a.bandwidth;
  if (a.kernel == "gaussian")
    kc.kernel = ipb::Kernel::Gaussian;
  else if (a.kernel == "epanechnikov")
    kc.kernel = ipb::Kernel::Epanechnikov;
  else
    throw UsageError("--kernel must be gaussian or epanechnikov");
  if (a.gps != "ols" && a.gps != "mixture") throw UsageError("--gps must be ols or mixture");
  const std::vector<double> grid = parse_grid(a.grid, a.grid_list);
  const ipb::Dataset data = ipb::read_csv(a.data);
  (void)ipb::Basis::parse(a.gps_basis, data.p());

  const std::string method = a.method;
  const std::string gps_kind = a.gps;
  const std::string gps_basis = a.gps_basis;
  const std::uint64_t seed = a.common.seed;
  const ipb::AdrfEstimator estimator = [=](const ipb::Dataset& d, std::span<const double> g) {
    std::vector<std::size_t> all(d.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const ipb::GpsModel gps = fit_gps(gps_kind, gps_basis, d, all, seed, false);
    if (method == "hi") return ipb::hirano_imbens_adrf(d, gps, g);
    const auto marginal = ipb::moment_matched_normal(d.ts());
    if (method == "kernel-ipw") return ipb::kernel_ipw_adrf(d, gps, marginal, kc, g);
    return ipb::local_linear_adrf(d, gps, marginal, kc, g);
  };

  ipb::AdrfEstimate est = a.bootstrap > 0
                              ? ipb::bootstrap_ci(estimator, data, grid, a.bootstrap, a.level, ipb::Rng(a.common.seed),
                                                  a.common.threads)
                              : estimator(data, grid);
  auto cell = [](double v) { return std::isnan(v) ? std::string() : ipb::format_double(v); };
  auto out = open_out(a.common.out);
  out << "t,mu,ci_lo,ci_hi\n";
  for (std::size_t g = 0; g < grid.size(); ++g) {
    out << ipb::format_double(grid[g]) << ',' << cell(est.mu[g]) << ',';
    if (est.ci_lower) out << cell((*est.ci_lower)[g]);
    out << ',';
    if (est.ci_upper) out << cell((*est.ci_upper)[g]);
    out << '\n';
  }
  if (est.missing_count() > 0)
    std::cerr << "warning: " << est.missing_count() << " grid point(s) without an estimate (empty cells)\n";
  if (est.bootstrap_dropped > 0)
    std::cerr << "warning: " << est.bootstrap_dropped << " bootstrap resample(s) failed and were dropped\n";
  std::cout << grid.size() << " grid points -> " << a.common.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Individualized prediction bands for continuous treatments"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a coverage/length simulation study");
  add_common(simulate, sim.common);
  simulate->add_option("--scenario", sim.scenario, "s1, s2, trunc-homo, trunc-hetero or unif-compare")->required();
  simulate->add_option("--setup", sim.setup,
                       "oracle-oracle, learned-outcome-oracle-weights, oracle-outcome-estimated-weights, "
                       "learned-learned or unadjusted");
  simulate->add_option("--reps", sim.reps, "Replications (default 200)");
  simulate->add_flag("--full", sim.full, "Use 1000 replications");
  simulate->add_option("--alpha", sim.alpha, "Miscoverage level (scenario default otherwise)");
  simulate->add_option("--assign-variance", sim.assign_variance, "Override the variance of the test-treatment law");
  simulate->add_option("--n", sim.n, "Observations per replication");

  BandArgs band;
  auto* bandcmd = app.add_subcommand("band", "Prediction bands over a treatment grid for chosen individuals");
  add_common(bandcmd, band.common);
  bandcmd->add_option("--data", band.data, "CSV with header y,t,x1,...,xp")->required()->check(CLI::ExistingFile);
  bandcmd->add_option("--row", band.rows, "1-based data row whose covariates define an individual (repeatable)");
  bandcmd->add_option("--x", band.xs, "Comma-separated covariate vector (repeatable)");
  bandcmd->add_option("--grid", band.grid, "min:max:N, N points inclusive");
  bandcmd->add_option("--grid-list", band.grid_list, "Comma-separated treatment values");
  bandcmd->add_option("--assign", band.assign,
                      "normal:M:V | normal-centered[:V] | truncnorm:M:V:LO:HI | uniform:LO:HI | decile[:K[:S2]]");
  bandcmd->add_option("--sided", band.sided, "two, upper or lower");
  bandcmd->add_option("--score", band.score, "cqr, absolute, upper or lower (default follows --sided)");
  bandcmd->add_option("--gps", band.gps, "ols or mixture");
  bandcmd->add_option("--gps-basis", band.gps_basis, "GPS regression terms, e.g. x or x1,x2^2");
  bandcmd->add_option("--basis", band.basis, "Outcome regression terms, e.g. linear or x1,t,x1*t");
  bandcmd->add_option("--offset", band.offset, "Added to the GPS in the weight denominator");
  bandcmd->add_option("--alpha", band.alpha, "Miscoverage level");
  bandcmd->add_option("--train-fraction", band.train_fraction, "Share of rows used for fitting");

  AdrfArgs adrf;
  auto* adrfcmd = app.add_subcommand("adrf", "Average dose-response curve with optional bootstrap intervals");
  add_common(adrfcmd, adrf.common);
  adrfcmd->add_option("--data", adrf.data, "CSV with header y,t,x1,...,xp")->required()->check(CLI::ExistingFile);
  adrfcmd->add_option("--method", adrf.method, "hi, kernel-ipw or local-linear");
  adrfcmd->add_option("--grid", adrf.grid, "min:max:N, N points inclusive");
  adrfcmd->add_option("--grid-list", adrf.grid_list, "Comma-separated treatment values");
  adrfcmd->add_option("--bootstrap", adrf.bootstrap, "Bootstrap resamples (>= 100; 0 disables)");
  adrfcmd->add_option("--level", adrf.level, "Confidence level of the bootstrap interval");
  adrfcmd->add_option("--bandwidth", adrf.bandwidth, "Kernel bandwidth (0 selects 1.06 sd n^-1/5)");
  adrfcmd->add_option("--kernel", adrf.kernel, "gaussian or epanechnikov");
  adrfcmd->add_option("--gps", adrf.gps, "ols or mixture");
  adrfcmd->add_option("--gps-basis", adrf.gps_basis, "GPS regression terms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim);
    if (bandcmd->parsed()) return run_band(band);
    return run_adrf(adrf);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  } catch (const ipb::PositivityError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
