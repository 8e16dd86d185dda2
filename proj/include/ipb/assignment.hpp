#pragma once

// Intervention densities h(t) and stabilized weights h(t) / (f(t|x) + offset).

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ipb/dist.hpp"
#include "ipb/propensity.hpp"
#include "ipb/stats.hpp"

namespace ipb {

struct NormalAssignment {
  NormalParams params;
};

struct TruncatedNormalAssignment {
  TruncatedNormalParams params;
};

struct UniformAssignment {
  double lower = 0.0;
  double upper = 1.0;
};

/// Normal centred on the midpoint of the decile holding t_star; observations
/// outside that decile are down-weighted by k.
struct DecileMidpoint {
  std::array<double, 11> boundaries{};
  double s2 = 1.0;
  double k = 1.0;
  double t_star = 0.0;
};

using AssignmentDist = std::variant<NormalAssignment, TruncatedNormalAssignment, UniformAssignment, DecileMidpoint>;

/// Decile index 0..9 of t. Values below the minimum fall in decile 0, values at
/// or above the maximum in decile 9.
inline std::size_t decile_of(const std::array<double, 11>& b, double t) {
  const auto it = std::upper_bound(b.begin() + 1, b.end() - 1, t);
  return static_cast<std::size_t>(it - (b.begin() + 1));
}

inline double decile_midpoint(const std::array<double, 11>& b, std::size_t j) { return 0.5 * (b[j] + b[j + 1]); }

inline double decile_center(const DecileMidpoint& h) { return decile_midpoint(h.boundaries, decile_of(h.boundaries, h.t_star)); }

inline std::array<double, 11> decile_boundaries(std::span<const double> treatments) {
  std::vector<double> s(treatments.begin(), treatments.end());
  for (double v : s)
    if (!std::isfinite(v)) throw std::invalid_argument("decile_boundaries: non-finite treatment");
  std::sort(s.begin(), s.end());
  std::size_t n_distinct = s.empty() ? 0 : 1;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] != s[i - 1]) ++n_distinct;
  if (n_distinct < 10) throw std::invalid_argument("decile_boundaries: need at least 10 distinct treatment values");
  std::array<double, 11> b{};
  for (std::size_t j = 0; j <= 10; ++j) b[j] = quantile_type7(s, static_cast<double>(j) / 10.0);
  b[0] = s.front();
  b[10] = s.back();
  for (std::size_t j = 1; j <= 10; ++j)
    if (!(b[j] > b[j - 1])) throw std::invalid_argument("decile_boundaries: tied decile boundaries (too many repeated values)");
  return b;
}

namespace detail {

inline void validate(const AssignmentDist& h) {
  std::visit(
      [](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, NormalAssignment>) {
          validate(d.params);
        } else if constexpr (std::is_same_v<D, TruncatedNormalAssignment>) {
          validate(d.params);
        } else if constexpr (std::is_same_v<D, UniformAssignment>) {
          if (!(std::isfinite(d.lower) && std::isfinite(d.upper) && d.lower < d.upper))
            throw std::invalid_argument("UniformAssignment: need finite lower < upper");
        } else {
          for (std::size_t j = 1; j < d.boundaries.size(); ++j)
            if (!(d.boundaries[j] > d.boundaries[j - 1]))
              throw std::invalid_argument("DecileMidpoint: boundaries must be strictly increasing");
          if (!(d.k > 0.0 && d.k <= 1.0)) throw std::invalid_argument("DecileMidpoint: k must lie in (0, 1]");
          if (!(d.s2 > 0.0 && std::isfinite(d.s2))) throw std::invalid_argument("DecileMidpoint: s2 must be positive");
          require_finite(d.t_star, "DecileMidpoint");
        }
      },
      h);
}

}  // namespace detail

inline double assignment_density(const AssignmentDist& h, double t) {
  detail::require_finite(t, "assignment_density");
  return std::visit(
      [&](const auto& d) -> double {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, NormalAssignment>) {
          return normal_pdf(t, d.params);
        } else if constexpr (std::is_same_v<D, TruncatedNormalAssignment>) {
          return truncated_normal_pdf(t, d.params);
        } else if constexpr (std::is_same_v<D, UniformAssignment>) {
          detail::validate(h);
          return (t < d.lower || t > d.upper) ? 0.0 : 1.0 / (d.upper - d.lower);
        } else {
          detail::validate(h);
          const std::size_t target = decile_of(d.boundaries, d.t_star);
          const double base = normal_pdf(t, NormalParams{decile_midpoint(d.boundaries, target), d.s2});
          return decile_of(d.boundaries, t) == target ? base : d.k * base;
        }
      },
      h);
}

/// Draw from h (used for simulated test treatments).
inline double assignment_sample(const AssignmentDist& h, Rng& rng) {
  return std::visit(
      [&](const auto& d) -> double {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, NormalAssignment>) {
          detail::validate(d.params);
          return rng.normal(d.params.mean, d.params.variance);
        } else if constexpr (std::is_same_v<D, TruncatedNormalAssignment>) {
          return truncated_normal_sample(d.params, rng);
        } else if constexpr (std::is_same_v<D, UniformAssignment>) {
          return rng.uniform(d.lower, d.upper);
        } else {
          throw std::invalid_argument("assignment_sample: decile-midpoint assignment is not a sampling distribution");
        }
      },
      h);
}

struct WeightConfig {
  double offset = 0.0;
};

class PositivityError : public std::runtime_error {
 public:
  PositivityError(double t, std::span<const double> x)
      : std::runtime_error(describe(t, x)), t_(t), x_(x.begin(), x.end()) {}
  double t() const noexcept { return t_; }
  const std::vector<double>& x() const noexcept { return x_; }

 private:
  static std::string describe(double t, std::span<const double> x) {
    std::ostringstream os;
    os.precision(6);
    os << "positivity violation: estimated GPS density is zero at t=" << t << ", x=(";
    for (std::size_t j = 0; j < x.size(); ++j) os << (j ? ", " : "") << x[j];
    os << ")";
    return os.str();
  }
  double t_;
  std::vector<double> x_;
};

inline double stabilized_weight(const AssignmentDist& h, const GpsModel& gps, const WeightConfig& cfg, double t,
                                std::span<const double> x) {
  if (!(cfg.offset >= 0.0 && std::isfinite(cfg.offset)))
    throw std::invalid_argument("WeightConfig: offset must be finite and non-negative");
  const double num = assignment_density(h, t);
  const double den = gps_density(gps, t, x) + cfg.offset;
  if (!(den > 0.0)) throw PositivityError(t, x);
  const double w = num / den;
  if (!std::isfinite(w)) throw PositivityError(t, x);
  return w;
}

}  // namespace ipb
