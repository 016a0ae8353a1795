#pragma once

#include <span>
#include <vector>

#include "steerkit/tensor.hpp"

namespace steerkit {

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);
// Two-sided tail P(|T| >= |t|) of Student's t with `dof` degrees of freedom.
double student_t_two_sided(double t, double dof);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
};

// Needs at least two samples on each side and a nonzero standard error;
// otherwise throws ContractViolation.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct DimensionShift {
  std::size_t dim = 0;
  double t = 0.0;
  double p = 1.0;
};

// Welch test per column (steered minus unsteered), sorted by |t| descending,
// ties by column index, truncated to k. Columns that are constant and equal
// in both groups report t = 0, p = 1.
std::vector<DimensionShift> dimensionwise_shift_report(const Tensor& unsteered,
                                                       const Tensor& steered, std::size_t k);

double sample_mean(std::span<const double> v);
double sample_variance(std::span<const double> v);

}  // namespace steerkit
