#include "steerkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace steerkit {

namespace {

// Continued fraction for I_x(a, b) (modified Lentz).
double beta_cf(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 100000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ContractViolation("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ContractViolation("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double lbt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                     b * std::log1p(-x);
  const double front = std::exp(lbt);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double dof) {
  if (!(dof > 0.0)) throw ContractViolation("student_t: dof must be positive");
  if (std::isinf(t)) return 0.0;
  if (t == 0.0) return 1.0;
  return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

double sample_mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ContractViolation("welch_t_test: need >= 2 samples per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = sample_variance(a) / na, vb = sample_variance(b) / nb;
  const double se2 = va + vb;
  if (!(se2 > 0.0)) throw ContractViolation("welch_t_test: zero variance in both samples");
  WelchResult r;
  r.t = (sample_mean(a) - sample_mean(b)) / std::sqrt(se2);
  r.dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  r.p = student_t_two_sided(r.t, r.dof);
  return r;
}

std::vector<DimensionShift> dimensionwise_shift_report(const Tensor& unsteered,
                                                       const Tensor& steered, std::size_t k) {
  if (unsteered.rank() != 2 || steered.rank() != 2 || unsteered.cols() != steered.cols())
    throw DimensionError("shift report: embedding widths differ");
  if (unsteered.rows() < 2 || steered.rows() < 2)
    throw ContractViolation("shift report: need >= 2 embeddings per group");
  const std::size_t e = steered.cols();
  std::vector<DimensionShift> out;
  std::vector<double> a(steered.rows()), b(unsteered.rows());
  for (std::size_t c = 0; c < e; ++c) {
    for (std::size_t r = 0; r < a.size(); ++r) a[r] = steered.at(r, c);
    for (std::size_t r = 0; r < b.size(); ++r) b[r] = unsteered.at(r, c);
    DimensionShift s{c, 0.0, 1.0};
    if (sample_variance(a) + sample_variance(b) > 0.0) {
      const auto w = welch_t_test(a, b);
      s.t = w.t;
      s.p = w.p;
    } else if (sample_mean(a) != sample_mean(b)) {
      s.t = sample_mean(a) > sample_mean(b) ? std::numeric_limits<double>::infinity()
                                            : -std::numeric_limits<double>::infinity();
      s.p = 0.0;
    }
    out.push_back(s);
  }
  std::stable_sort(out.begin(), out.end(), [](const DimensionShift& x, const DimensionShift& y) {
    return std::fabs(x.t) > std::fabs(y.t);
  });
  if (out.size() > k) out.resize(k);
  return out;
}

}  // namespace steerkit
