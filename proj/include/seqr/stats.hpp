#pragma once

// Statistics used by the experiment analyses: Pearson correlation, binomial
// standard errors with propagation through averaging stages, logit-space
// regression with a Wald t-test, and the special functions those need.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace seqr::stats {

struct stats_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Special functions.

/// Regularized incomplete beta I_x(a,b), continued fraction (Lentz).
inline double incbeta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw stats_error("incbeta: a,b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;

  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);

  // Use the symmetry transform so the continued fraction converges fast.
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incbeta(b, a, 1.0 - x);

  const double tiny = 1e-300;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;

  for (int m = 1; m <= 300; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    f *= d * c;

    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::fabs(delta - 1.0) < 1e-15) break;
  }
  return std::exp(ln_front) * f / a;
}

/// P(T > t) for Student's t with df degrees of freedom (one-sided).
inline double student_t_sf(double t, double df) {
  if (df <= 0.0) throw stats_error("student_t_sf: df must be positive");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double x = df / (df + t * t);
  const double p = 0.5 * incbeta(0.5 * df, 0.5, x);
  return t >= 0.0 ? p : 1.0 - p;
}

/// P(Z > z) for the standard normal.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

/// Exact one-sided binomial tail P(X >= k) for X ~ Binomial(n, p).
inline double binomial_sf_at_least(int k, int n, double p) {
  if (n < 0 || k < 0 || k > n) throw stats_error("binomial_sf_at_least: bad arguments");
  if (k == 0) return 1.0;
  return incbeta(static_cast<double>(k), static_cast<double>(n - k + 1), p);
}

// ---------------------------------------------------------------------------
// Correlation.

/// Sample Pearson correlation. Zero variance in either input is reported
/// through `undefined` (when given) and yields 0 rather than an error, since
/// dead units are routine in analysis sweeps.
inline double pearson(std::span<const double> xs, std::span<const double> ys,
                      bool* undefined = nullptr) {
  if (xs.size() != ys.size()) throw stats_error("pearson: length mismatch");
  const std::size_t n = xs.size();
  if (n < 2) throw stats_error("pearson: need at least 2 points");
  if (undefined) *undefined = false;

  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);

  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    if (undefined) *undefined = true;
    return 0.0;
  }
  double r = sxy / std::sqrt(sxx * syy);
  if (r > 1.0) r = 1.0;
  if (r < -1.0) r = -1.0;
  return r;
}

/// Population covariance (divides by n).
inline double covariance(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw stats_error("covariance: length mismatch");
  const std::size_t n = xs.size();
  if (n == 0) throw stats_error("covariance: empty input");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (xs[i] - mx) * (ys[i] - my);
  return s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Binomial accuracy estimates and error propagation.

constexpr double kZ95 = 1.96;

struct ConditionResult {
  std::int64_t successes = 0;
  std::int64_t n = 0;
  double p = 0.0;
  double se = 0.0;
  double ci95 = 0.0;
};

inline ConditionResult binomial_ci(std::int64_t successes, std::int64_t n) {
  if (n < 1) throw stats_error("binomial_ci: n must be >= 1");
  if (successes < 0 || successes > n) throw stats_error("binomial_ci: successes out of range");
  ConditionResult r;
  r.successes = successes;
  r.n = n;
  r.p = static_cast<double>(successes) / static_cast<double>(n);
  r.se = std::sqrt(r.p * (1.0 - r.p) / static_cast<double>(n));
  r.ci95 = kZ95 * r.se;
  return r;
}

/// A mean with a propagated standard error; the output of an averaging stage.
struct Aggregate {
  double mean = 0.0;
  double se = 0.0;
  double ci95 = 0.0;
};

namespace detail {
inline Aggregate aggregate_impl(std::span<const double> means, std::span<const double> ses) {
  const std::size_t k = means.size();
  if (k == 0) throw stats_error("aggregate_propagate: empty input");
  double m = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    m += means[i];
    s2 += ses[i] * ses[i];
  }
  Aggregate a;
  a.mean = m / static_cast<double>(k);
  a.se = std::sqrt(s2) / static_cast<double>(k);
  a.ci95 = kZ95 * a.se;
  return a;
}
}  // namespace detail

/// Mean of the success rates with errors propagated: se = sqrt(sum se_i^2)/K.
inline Aggregate aggregate_propagate(std::span<const ConditionResult> results) {
  std::vector<double> ms(results.size()), ss(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    ms[i] = results[i].p;
    ss[i] = results[i].se;
  }
  return detail::aggregate_impl(ms, ss);
}

/// Second averaging stage (e.g. per-feature aggregates into a global one).
inline Aggregate aggregate_propagate(std::span<const Aggregate> results) {
  std::vector<double> ms(results.size()), ss(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    ms[i] = results[i].mean;
    ss[i] = results[i].se;
  }
  return detail::aggregate_impl(ms, ss);
}

// ---------------------------------------------------------------------------
// Logit regression with a Wald t-test on the slope.

struct LogitRegression {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double t = 0.0;
  double p_value = 0.0;  // two-sided Wald t-test, df = n-2
  double r2 = 0.0;
  int clamped = 0;  // accuracies at 0 or 1 adjusted to 1/(2n), 1 - 1/(2n)
};

/// OLS of logit(y) on x. `trials[i]` is the sample size behind accuracy y_i,
/// used only for the small-sample clamp of exact 0/1 accuracies.
inline LogitRegression logit_regression_wald(std::span<const double> xs,
                                             std::span<const double> ys,
                                             std::span<const std::int64_t> trials = {}) {
  const std::size_t n = xs.size();
  if (ys.size() != n) throw stats_error("logit_regression_wald: length mismatch");
  if (n < 3) throw stats_error("logit_regression_wald: need at least 3 points");
  if (!trials.empty() && trials.size() != n)
    throw stats_error("logit_regression_wald: trials length mismatch");

  LogitRegression out;
  std::vector<double> ls(n);
  for (std::size_t i = 0; i < n; ++i) {
    double y = ys[i];
    if (y <= 0.0 || y >= 1.0) {
      if (y < 0.0 || y > 1.0) throw stats_error("logit_regression_wald: accuracy outside [0,1]");
      if (trials.empty()) throw stats_error("logit_regression_wald: accuracy of 0 or 1 needs a trial count to clamp");
      const double eps = 1.0 / (2.0 * static_cast<double>(trials[i]));
      y = (y <= 0.0) ? eps : 1.0 - eps;
      ++out.clamped;
    }
    ls[i] = std::log(y / (1.0 - y));
  }

  double mx = 0.0, ml = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    ml += ls[i];
  }
  mx /= static_cast<double>(n);
  ml /= static_cast<double>(n);

  double sxx = 0.0, sxl = 0.0, sll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dl = ls[i] - ml;
    sxx += dx * dx;
    sxl += dx * dl;
    sll += dl * dl;
  }
  if (sxx == 0.0) throw stats_error("logit_regression_wald: slope undefined (constant x)");

  out.slope = sxl / sxx;
  out.intercept = ml - out.slope * mx;

  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double resid = ls[i] - (out.intercept + out.slope * xs[i]);
    ssr += resid * resid;
  }
  out.r2 = (sll == 0.0) ? 1.0 : 1.0 - ssr / sll;

  const double df = static_cast<double>(n) - 2.0;
  const double sigma2 = ssr / df;
  out.slope_se = std::sqrt(sigma2 / sxx);
  if (out.slope_se == 0.0) {
    out.t = out.slope == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    out.p_value = out.slope == 0.0 ? 1.0 : 0.0;
  } else {
    out.t = out.slope / out.slope_se;
    out.p_value = 2.0 * student_t_sf(std::fabs(out.t), df);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Small test helpers used by the acceptance experiments.

/// One-sided paired t-test that mean(a - b) > 0. Returns the p-value.
inline double paired_t_test_greater(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw stats_error("paired_t_test: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw stats_error("paired_t_test: need at least 2 pairs");
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m += a[i] - b[i];
  m /= static_cast<double>(n);
  double s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (a[i] - b[i]) - m;
    s2 += d * d;
  }
  s2 /= static_cast<double>(n - 1);
  if (s2 == 0.0) return m > 0.0 ? 0.0 : 1.0;
  const double t = m / std::sqrt(s2 / static_cast<double>(n));
  return student_t_sf(t, static_cast<double>(n - 1));
}

/// One-sided two-proportion z-test that p1 > p2 (pooled variance).
inline double two_proportion_z_greater(std::int64_t s1, std::int64_t n1,
                                       std::int64_t s2, std::int64_t n2) {
  if (n1 < 1 || n2 < 1) throw stats_error("two_proportion_z: empty sample");
  const double p1 = static_cast<double>(s1) / static_cast<double>(n1);
  const double p2 = static_cast<double>(s2) / static_cast<double>(n2);
  const double pp = static_cast<double>(s1 + s2) / static_cast<double>(n1 + n2);
  const double se = std::sqrt(pp * (1.0 - pp) * (1.0 / n1 + 1.0 / n2));
  if (se == 0.0) return p1 > p2 ? 0.0 : 1.0;
  return normal_sf((p1 - p2) / se);
}

}  // namespace seqr::stats
