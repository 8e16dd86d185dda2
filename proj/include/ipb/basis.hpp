#pragma once

// Regression bases over (x, t). A basis is a list of monomial terms such as
// `x1`, `x2^2`, `t`, `x1*t`; the design matrix always prepends an intercept.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ipb/data.hpp"
#include "ipb/linalg.hpp"

namespace ipb {

/// One factor of a monomial: variable index (0..p-1 for x, kTreatment for t) raised to a power.
struct Factor {
  static constexpr int kTreatment = -1;
  int variable = 0;
  int power = 1;
};

struct Term {
  std::vector<Factor> factors;

  double eval(std::span<const double> x, double t) const {
    double v = 1.0;
    for (const auto& f : factors) {
      const double base = f.variable == Factor::kTreatment ? t : x[static_cast<std::size_t>(f.variable)];
      for (int k = 0; k < f.power; ++k) v *= base;
    }
    return v;
  }

  bool uses_treatment() const {
    for (const auto& f : factors)
      if (f.variable == Factor::kTreatment) return true;
    return false;
  }

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < factors.size(); ++i) {
      if (i) s += '*';
      s += factors[i].variable == Factor::kTreatment ? "t" : "x" + std::to_string(factors[i].variable + 1);
      if (factors[i].power != 1) s += "^" + std::to_string(factors[i].power);
    }
    return s;
  }
};

class Basis {
 public:
  Basis() = default;
  explicit Basis(std::vector<Term> terms) : terms_(std::move(terms)) {}

  /// Parses a comma-separated term list, e.g. "x1,x2^2,x3,t,x1*t".
  /// The keywords `x` (all covariates) and `linear` (all covariates plus t) expand given p.
  static Basis parse(std::string_view spec, std::size_t p) {
    std::vector<Term> terms;
    std::size_t start = 0;
    while (start <= spec.size()) {
      std::size_t end = spec.find(',', start);
      if (end == std::string_view::npos) end = spec.size();
      std::string_view item = trim(spec.substr(start, end - start));
      if (item.empty()) throw std::invalid_argument("basis: empty term in '" + std::string(spec) + "'");
      if (item == "linear" || item == "x") {
        for (std::size_t j = 0; j < p; ++j) terms.push_back(Term{{Factor{static_cast<int>(j), 1}}});
        if (item == "linear") terms.push_back(Term{{Factor{Factor::kTreatment, 1}}});
      } else {
        terms.push_back(parse_term(item, p));
      }
      start = end + 1;
    }
    return Basis(std::move(terms));
  }

  /// x1..xp (for treatment models).
  static Basis covariates(std::size_t p) { return parse("x", p); }
  /// x1..xp, t.
  static Basis main_effects(std::size_t p) { return parse("linear", p); }

  std::size_t size() const noexcept { return terms_.size(); }
  /// Columns in the design matrix, intercept included.
  std::size_t columns() const noexcept { return terms_.size() + 1; }
  const std::vector<Term>& terms() const noexcept { return terms_; }

  bool uses_treatment() const {
    for (const auto& term : terms_)
      if (term.uses_treatment()) return true;
    return false;
  }

  /// Highest covariate index referenced plus one.
  std::size_t required_covariates() const {
    std::size_t need = 0;
    for (const auto& term : terms_)
      for (const auto& f : term.factors)
        if (f.variable != Factor::kTreatment) need = std::max(need, static_cast<std::size_t>(f.variable) + 1);
    return need;
  }

  void check_dimension(std::size_t p) const {
    if (required_covariates() > p)
      throw std::invalid_argument("basis references x" + std::to_string(required_covariates()) + " but data has " +
                                  std::to_string(p) + " covariates");
  }

  /// Intercept followed by every term.
  void row(std::span<const double> x, double t, std::span<double> out) const {
    out[0] = 1.0;
    for (std::size_t k = 0; k < terms_.size(); ++k) out[k + 1] = terms_[k].eval(x, t);
  }

  double dot(const Vector& coef, std::span<const double> x, double t) const {
    double v = coef[0];
    for (std::size_t k = 0; k < terms_.size(); ++k) v += coef[static_cast<Eigen::Index>(k + 1)] * terms_[k].eval(x, t);
    return v;
  }

  Matrix design(const Dataset& data, std::span<const std::size_t> rows) const {
    check_dimension(data.p());
    Matrix z(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns()));
    std::vector<double> buf(columns());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      row(data.x(rows[i]), data.t(rows[i]), buf);
      for (std::size_t k = 0; k < buf.size(); ++k) z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = buf[k];
    }
    return z;
  }

  std::string to_string() const {
    std::string s = "1";
    for (const auto& term : terms_) s += "," + term.to_string();
    return s;
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

  static int parse_int(std::string_view s, std::string_view context) {
    int v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 1)
      throw std::invalid_argument("basis: bad integer in '" + std::string(context) + "'");
    return v;
  }

  static Term parse_term(std::string_view item, std::size_t p) {
    Term term;
    std::size_t start = 0;
    while (start <= item.size()) {
      std::size_t end = item.find('*', start);
      if (end == std::string_view::npos) end = item.size();
      std::string_view factor = trim(item.substr(start, end - start));
      int power = 1;
      if (auto caret = factor.find('^'); caret != std::string_view::npos) {
        power = parse_int(trim(factor.substr(caret + 1)), item);
        factor = trim(factor.substr(0, caret));
      }
      Factor f;
      f.power = power;
      if (factor == "t") {
        f.variable = Factor::kTreatment;
      } else if (factor.size() >= 2 && factor[0] == 'x') {
        const int j = parse_int(factor.substr(1), item);
        if (static_cast<std::size_t>(j) > p)
          throw std::invalid_argument("basis: '" + std::string(item) + "' references x" + std::to_string(j) +
                                      " but only " + std::to_string(p) + " covariates exist");
        f.variable = j - 1;
      } else {
        throw std::invalid_argument("basis: unknown factor '" + std::string(factor) + "' (expected t or xJ)");
      }
      term.factors.push_back(f);
      start = end + 1;
    }
    return term;
  }

  std::vector<Term> terms_;
};

}  // namespace ipb
