#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "steerkit/rng.hpp"
#include "steerkit/stats.hpp"

using namespace steerkit;

namespace {

struct WelchCase {
  std::vector<double> a, b;
  double t, dof, p;
};

// t, dof and p computed at 50 digits by tests/oracles/gen_welch.py
const std::vector<WelchCase> kCases = {
#include "../oracles/welch_cases.inc"
};

}  // namespace

TEST(Welch, MatchesHighPrecisionOracle) {
  ASSERT_EQ(kCases.size(), 20u);
  for (std::size_t i = 0; i < kCases.size(); ++i) {
    const auto& c = kCases[i];
    const WelchResult r = welch_t_test(c.a, c.b);
    EXPECT_NEAR(r.t, c.t, 1e-8) << "case " << i;
    EXPECT_NEAR(r.dof, c.dof, 1e-8 * c.dof) << "case " << i;
    EXPECT_NEAR(r.p, c.p, 1e-6) << "case " << i;
  }
}

TEST(Welch, IdenticalSamplesGiveZeroAndOne) {
  const std::vector<double> a{1.0, 2.0, 3.5, -1.0};
  const WelchResult r = welch_t_test(a, a);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.p, 1.0);
}

TEST(Welch, DegenerateInputsThrow) {
  const std::vector<double> one{1.0}, two{1.0, 2.0}, flat{3.0, 3.0};
  EXPECT_THROW(welch_t_test(one, two), ContractViolation);
  EXPECT_THROW(welch_t_test(flat, std::vector<double>{4.0, 4.0}), ContractViolation);
}

TEST(Stats, IncompleteBetaReferenceValues) {
  EXPECT_NEAR(incomplete_beta(2.0, 2.0, 0.5), 0.5, 1e-15);
  // I_x(1, b) = 1 - (1 - x)^b
  EXPECT_NEAR(incomplete_beta(1.0, 3.0, 0.2), 1.0 - std::pow(0.8, 3.0), 1e-14);
  EXPECT_EQ(incomplete_beta(2.0, 3.0, 0.0), 0.0);
  EXPECT_EQ(incomplete_beta(2.0, 3.0, 1.0), 1.0);
  // Student t with 1 dof is Cauchy: P(|T| >= 1) = 0.5
  EXPECT_NEAR(student_t_two_sided(1.0, 1.0), 0.5, 1e-14);
}

TEST(Stats, MeanAndUnbiasedVariance) {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  EXPECT_EQ(sample_mean(v), 5.0);
  EXPECT_NEAR(sample_variance(v), 32.0 / 7.0, 1e-15);
}

TEST(Stats, ShiftReportRanksShiftedDimensionFirst) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 60, d = 12, shifted = (seed * 5) % d;
    std::vector<double> u(n * d), s(n * d);
    for (auto& x : u) x = rng.normal();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) s[i * d + j] = rng.normal() + (j == shifted ? 3.0 : 0.0);
    const auto rep = dimensionwise_shift_report(Tensor::from({n, d}, u), Tensor::from({n, d}, s), 5);
    ASSERT_EQ(rep.size(), 5u);
    EXPECT_EQ(rep[0].dim, shifted);
    EXPECT_GT(rep[0].t, 0.0);
    EXPECT_LT(rep[0].p, 1e-10);
  }
}

TEST(Stats, ShiftReportConstantColumns) {
  const auto rep = dimensionwise_shift_report(Tensor::filled({4, 2}, 1.0), Tensor::filled({4, 2}, 1.0), 2);
  for (const auto& r : rep) {
    EXPECT_EQ(r.t, 0.0);
    EXPECT_EQ(r.p, 1.0);
  }
  EXPECT_EQ(rep[0].dim, 0u);
}
