#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ipb/assignment.hpp"
#include "oracles.hpp"

using namespace ipb;

namespace {

double phi(double x, double m, double v) { return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2 * std::numbers::pi * v); }

std::array<double, 11> one_to_hundred_boundaries() {
  std::vector<double> t(100);
  for (int i = 0; i < 100; ++i) t[i] = i + 1.0;
  return decile_boundaries(t);
}

}  // namespace

TEST(Deciles, OneToHundred) {
  const auto b = one_to_hundred_boundaries();
  EXPECT_EQ(b[0], 1.0);
  EXPECT_NEAR(b[1], 10.9, 1e-12);
  EXPECT_NEAR(b[5], 50.5, 1e-12);
  EXPECT_NEAR(b[9], 90.1, 1e-12);
  EXPECT_EQ(b[10], 100.0);
  EXPECT_NEAR(decile_midpoint(b, 0), 5.95, 1e-12);
  EXPECT_EQ(decile_of(b, 1.0), 0u);
  EXPECT_EQ(decile_of(b, 10.9), 1u);
  EXPECT_EQ(decile_of(b, 100.0), 9u);
  EXPECT_EQ(decile_of(b, -5.0), 0u);
  EXPECT_EQ(decile_of(b, 500.0), 9u);
}

TEST(Deciles, NeedTenDistinctValues) {
  std::vector<double> t{1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9};
  EXPECT_THROW(decile_boundaries(t), std::invalid_argument);
  std::vector<double> heavy(100, 1.0);
  for (int i = 0; i < 10; ++i) heavy[i] = i + 2.0;
  EXPECT_THROW(decile_boundaries(heavy), std::invalid_argument);
}

TEST(DecileMidpoint, KOneIsPlainNormal) {
  DecileMidpoint h{one_to_hundred_boundaries(), 4.0, 1.0, 33.0};
  const double d = decile_center(h);
  EXPECT_NEAR(d, 0.5 * (h.boundaries[3] + h.boundaries[4]), 1e-12);
  for (double t : {2.0, 30.0, 35.0, 80.0}) EXPECT_DOUBLE_EQ(assignment_density(h, t), phi(t, d, 4.0));
}

TEST(DecileMidpoint, OtherDecilesScaledByK) {
  const auto b = one_to_hundred_boundaries();
  DecileMidpoint full{b, 25.0, 1.0, 33.0};
  DecileMidpoint half{b, 25.0, 0.5, 33.0};
  EXPECT_DOUBLE_EQ(assignment_density(half, 35.0), assignment_density(full, 35.0));
  EXPECT_DOUBLE_EQ(assignment_density(half, 45.0), 0.5 * assignment_density(full, 45.0));
  EXPECT_DOUBLE_EQ(assignment_density(half, 12.0), 0.5 * assignment_density(full, 12.0));
}

TEST(DecileMidpoint, MidpointMapsToItself) {
  const auto b = one_to_hundred_boundaries();
  const double mid = decile_midpoint(b, 6);
  EXPECT_DOUBLE_EQ(decile_center(DecileMidpoint{b, 1.0, 1.0, mid}), mid);
}

TEST(DecileMidpoint, Validation) {
  auto b = one_to_hundred_boundaries();
  EXPECT_THROW(assignment_density(DecileMidpoint{b, 1.0, 0.0, 5.0}, 3.0), std::invalid_argument);
  EXPECT_THROW(assignment_density(DecileMidpoint{b, 1.0, 1.5, 5.0}, 3.0), std::invalid_argument);
  b[4] = b[3];
  EXPECT_THROW(assignment_density(DecileMidpoint{b, 1.0, 1.0, 5.0}, 3.0), std::invalid_argument);
  Rng rng(1);
  EXPECT_THROW(assignment_sample(DecileMidpoint{one_to_hundred_boundaries(), 1.0, 1.0, 5.0}, rng),
               std::invalid_argument);
}

TEST(Uniform, Density) {
  const AssignmentDist h = UniformAssignment{2.0, 6.0};
  EXPECT_EQ(assignment_density(h, 3.0), 0.25);
  EXPECT_EQ(assignment_density(h, 1.9), 0.0);
  EXPECT_EQ(assignment_density(h, 6.1), 0.0);
  EXPECT_THROW(assignment_density(h, NAN), std::invalid_argument);
}

TEST(StabilizedWeight, IdenticalDensitiesGiveOne) {
  const AssignmentDist h = NormalAssignment{{1.0, 0.5}};
  const GpsModel gps = OracleGaussian{[](std::span<const double>) { return 1.0; }, 0.5};
  const std::vector<double> x{0.0};
  EXPECT_DOUBLE_EQ(stabilized_weight(h, gps, {}, 1.0, x), 1.0);
  EXPECT_DOUBLE_EQ(stabilized_weight(h, gps, {}, -0.7, x), 1.0);
}

TEST(StabilizedWeight, TruncatedScenarioHandEvaluation) {
  const AssignmentDist h = TruncatedNormalAssignment{{2.0, 0.8, 1.0, 5.0}};
  const GpsModel gps = OracleTruncatedGaussian{[](std::span<const double> x) { return x[0] * x[0] + 1.0; },
                                               [](std::span<const double>) { return 1.0; }, 0.5, 5.0};
  const std::vector<double> x{1.0};
  const double num = phi(2.0, 2.0, 0.8) / oracle::simpson([](double t) { return phi(t, 2.0, 0.8); }, 1.0, 5.0);
  const double den = phi(2.0, 2.0, 1.0) / oracle::simpson([](double t) { return phi(t, 2.0, 1.0); }, 0.5, 5.0);
  EXPECT_NEAR(stabilized_weight(h, gps, WeightConfig{0.001}, 2.0, x), num / (den + 0.001), 1e-10);
  EXPECT_EQ(stabilized_weight(h, gps, WeightConfig{0.001}, 0.7, x), 0.0);
}

TEST(StabilizedWeight, PositivityViolationCarriesPoint) {
  const AssignmentDist h = NormalAssignment{{0.0, 1.0}};
  const GpsModel gps = OracleTruncatedGaussian{[](std::span<const double>) { return 1.0; },
                                               [](std::span<const double>) { return 1.0; }, 0.0, 2.0};
  const std::vector<double> x{3.5};
  try {
    stabilized_weight(h, gps, {}, -1.0, x);
    FAIL() << "expected a positivity error";
  } catch (const PositivityError& e) {
    EXPECT_EQ(e.t(), -1.0);
    EXPECT_EQ(e.x(), x);
  }
  EXPECT_GT(stabilized_weight(h, gps, WeightConfig{0.01}, -1.0, x), 0.0);
  EXPECT_THROW(stabilized_weight(h, gps, WeightConfig{-1.0}, 1.0, x), std::invalid_argument);
}

TEST(StabilizedWeight, NonNegative) {
  Rng rng(3);
  const AssignmentDist h = TruncatedNormalAssignment{{2.0, 0.8, 1.0, 5.0}};
  const GpsModel gps = OracleGaussian{[](std::span<const double> x) { return x[0]; }, 2.0};
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> x{rng.normal()};
    const double t = rng.uniform(-2, 7);
    const double w = stabilized_weight(h, gps, {}, t, x);
    EXPECT_GE(w, 0.0);
    EXPECT_EQ(w == 0.0, t < 1.0 || t > 5.0);
  }
}
