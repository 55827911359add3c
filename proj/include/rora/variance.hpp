#pragma once

// Monte Carlo checks of the one-step increment statistics. Entries of A and
// both inputs are i.i.d. N(0, 1); w_i is computed with two_step_increment and
// compared against closed forms.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "rora/adapters.hpp"
#include "rora/grad.hpp"
#include "rora/linalg.hpp"
#include "rora/parallel.hpp"

namespace rora {

// eta^2 delta^2 gamma^4 r^2 p_in: the rank-squared variance law.
inline double closed_form_variance(double eta, double delta, double gamma, double r, double p_in) {
  return eta * eta * delta * delta * std::pow(gamma, 4) * r * r * p_in;
}

// Exact second moment of w_i under i.i.d. unit normals. The k == k' terms
// contribute r (p_in^2 + 2 p_in); the cross terms contribute r (r - 1) p_in.
inline double exact_increment_variance(double eta, double delta, double gamma, double r,
                                       double p_in) {
  return eta * eta * delta * delta * std::pow(gamma, 4) * r * p_in * (p_in + r + 1.0);
}

// sqrt(p_out p_in) * eta * gamma^2 * r * delta_m, i.e. c * gamma^2 * r.
inline double closed_form_norm(double eta, double delta_m, double gamma, double r, double p_in,
                               double p_out) {
  return std::sqrt(p_out * p_in) * eta * gamma * gamma * r * delta_m;
}

// Streaming central moments up to order four; partitions merge exactly in a
// fixed order so results do not depend on how samples were split.
class Moments {
 public:
  void push(double x) {
    const double n1 = static_cast<double>(n_);
    ++n_;
    const double n = static_cast<double>(n_);
    const double d = x - mean_;
    const double dn = d / n;
    const double dn2 = dn * dn;
    const double t1 = d * dn * n1;
    mean_ += dn;
    m4_ += t1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * m2_ - 4.0 * dn * m3_;
    m3_ += t1 * dn * (n - 2.0) - 3.0 * dn * m2_;
    m2_ += t1;
  }

  void merge(const Moments& o) {
    if (o.n_ == 0) return;
    if (n_ == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(o.n_);
    const double n = na + nb;
    const double d = o.mean_ - mean_;
    const double d2 = d * d;
    const double m2 = m2_ + o.m2_ + d2 * na * nb / n;
    const double m3 = m3_ + o.m3_ + d2 * d * na * nb * (na - nb) / (n * n) +
                      3.0 * d * (na * o.m2_ - nb * m2_) / n;
    const double m4 = m4_ + o.m4_ + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n) +
                      6.0 * d2 * (na * na * o.m2_ + nb * nb * m2_) / (n * n) +
                      4.0 * d * (na * o.m3_ - nb * m3_) / n;
    mean_ += d * nb / n;
    m2_ = m2;
    m3_ = m3;
    m4_ = m4;
    n_ += o.n_;
  }

  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  // Unbiased (n - 1) sample variance.
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double fourth_central() const { return n_ > 0 ? m4_ / static_cast<double>(n_) : 0.0; }

  // 95% half-width on the sample variance, normal approximation using the
  // fourth central moment: Var[s^2] ~ (mu4 - (n-3)/(n-1) s^4) / n.
  double variance_ci95() const {
    if (n_ < 4) return 0.0;
    const double n = static_cast<double>(n_);
    const double s2 = variance();
    const double v = (fourth_central() - (n - 3.0) / (n - 1.0) * s2 * s2) / n;
    return 1.959963984540054 * std::sqrt(std::max(0.0, v));
  }

  double mean_stderr() const {
    return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  double m3_ = 0.0;
  double m4_ = 0.0;
};

inline constexpr std::size_t kMinVarianceSamples = 1000;
// Samples per Monte Carlo partition. Each partition draws from its own
// stream derived from (seed, partition index).
inline constexpr std::size_t kPartitionSize = 4096;

struct VarianceExperiment {
  std::size_t r = 1;
  std::size_t p_in = 1;
  std::size_t p_out = 1;
  double eta = 0.1;
  double delta = 1.0;
  ScalingPolicy policy = ScalingPolicy::unit();
  double alpha = kDefaultAlpha;
  std::size_t n_samples = 200000;
  RngSeed seed{0};
  std::size_t output_index = 0;

  double gamma() const { return scaling_factor(policy, alpha, r); }

  void validate() const {
    if (r == 0 || p_in == 0 || p_out == 0) throw ArgumentError("variance experiment: r, p_in, p_out must be >= 1");
    if (!(eta > 0.0)) throw ArgumentError("variance experiment: eta must be > 0");
    if (!(delta >= 0.0) || !std::isfinite(delta)) throw ArgumentError("variance experiment: delta must be finite and >= 0");
    if (n_samples < kMinVarianceSamples) {
      throw ArgumentError("variance experiment: n_samples " + std::to_string(n_samples) +
                          " below floor " + std::to_string(kMinVarianceSamples));
    }
    if (output_index >= p_out) throw ArgumentError("variance experiment: output_index out of range");
  }
};

struct VarianceReport {
  std::size_t n_samples = 0;
  double gamma = 0.0;
  double empirical_mean = 0.0;
  double empirical_var = 0.0;
  double closed_form_var = 0.0;
  double rel_error = 0.0;
  double ci95_halfwidth = 0.0;
  double exact_var = 0.0;
  double exact_rel_error = 0.0;

  // |mean| <= 4 standard errors.
  bool mean_consistent_with_zero() const {
    return std::abs(empirical_mean) <=
           4.0 * std::sqrt(empirical_var / static_cast<double>(n_samples));
  }

  bool operator==(const VarianceReport&) const = default;
};

namespace detail {

template <class SampleFn>
Moments partitioned_moments(std::size_t n_samples, RngSeed seed, std::size_t workers,
                            SampleFn&& sample) {
  const std::size_t parts = (n_samples + kPartitionSize - 1) / kPartitionSize;
  std::vector<Moments> partial(parts);
  parallel_for(parts, workers, [&](std::size_t p) {
    Rng rng(derive_seed(seed, p));
    const std::size_t begin = p * kPartitionSize;
    const std::size_t end = std::min(n_samples, begin + kPartitionSize);
    Moments m;
    for (std::size_t s = begin; s < end; ++s) m.push(sample(rng));
    partial[p] = m;
  });
  Moments total;
  for (const auto& m : partial) total.merge(m);
  return total;
}

inline double relative_error(double value, double reference) {
  if (reference == 0.0) return value == 0.0 ? 0.0 : std::abs(value);
  return std::abs(value - reference) / std::abs(reference);
}

}  // namespace detail

inline VarianceReport monte_carlo_increment_stats(const VarianceExperiment& exp,
                                                  std::size_t workers = 1) {
  exp.validate();
  const double gamma = exp.gamma();
  const Vector delta(exp.p_out, exp.delta);
  const Moments m = detail::partitioned_moments(exp.n_samples, exp.seed, workers, [&](Rng& rng) {
    const Matrix A = gaussian_matrix(exp.r, exp.p_in, 0.0, 1.0, rng);
    const Vector x_prev = gaussian_vector(exp.p_in, 0.0, 1.0, rng);
    const Vector x_next = gaussian_vector(exp.p_in, 0.0, 1.0, rng);
    return two_step_increment(A, x_prev, x_next, exp.eta, delta, gamma)[exp.output_index];
  });

  VarianceReport rep;
  rep.n_samples = m.count();
  rep.gamma = gamma;
  rep.empirical_mean = m.mean();
  rep.empirical_var = m.variance();
  rep.ci95_halfwidth = m.variance_ci95();
  const auto r = static_cast<double>(exp.r);
  const auto p_in = static_cast<double>(exp.p_in);
  rep.closed_form_var = closed_form_variance(exp.eta, exp.delta, gamma, r, p_in);
  rep.rel_error = detail::relative_error(rep.empirical_var, rep.closed_form_var);
  rep.exact_var = exact_increment_variance(exp.eta, exp.delta, gamma, r, p_in);
  rep.exact_rel_error = detail::relative_error(rep.empirical_var, rep.exact_var);
  return rep;
}

struct SlopeFit {
  std::vector<double> ranks;
  std::vector<double> mean_norms;
  double slope = 0.0;
  double intercept = 0.0;
  // RMS of the log-space residuals.
  double residual = 0.0;
};

// Least squares fit of log(y) = intercept + slope * log(x).
inline SlopeFit fit_loglog(std::vector<double> xs, std::vector<double> ys) {
  if (xs.size() != ys.size()) throw DimensionError("fit_loglog: length mismatch");
  if (xs.size() < 2) throw ArgumentError("fit_loglog: need at least two points");
  const std::size_t n = xs.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw ArgumentError("fit_loglog: values must be > 0");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (sxx == 0.0) throw ArgumentError("fit_loglog: x values must not all be equal");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = ly[i] - (fit.intercept + fit.slope * lx[i]);
    ss += e * e;
  }
  fit.residual = std::sqrt(ss / static_cast<double>(n));
  fit.ranks = std::move(xs);
  fit.mean_norms = std::move(ys);
  return fit;
}

struct NormSweep {
  ScalingPolicy policy = ScalingPolicy::lora();
  double alpha = kDefaultAlpha;
  std::vector<std::size_t> ranks{4, 8, 16, 32, 64};
  std::size_t p_in = 1;
  std::size_t p_out = 4;
  double eta = 0.1;
  double delta = 1.0;
  std::size_t n_samples = 20000;
  RngSeed seed{0};
};

struct NormSweepPoint {
  std::size_t r = 0;
  double gamma = 0.0;
  double mean_norm = 0.0;
  double mean_norm_stderr = 0.0;
  double closed_form_norm = 0.0;
};

struct NormSweepResult {
  std::vector<NormSweepPoint> points;
  SlopeFit fit;
};

// Estimates E[||w||_2] per rank and fits the log-log slope against r.
inline NormSweepResult rank_norm_sweep(const NormSweep& spec, std::size_t workers = 1) {
  if (spec.ranks.size() < 3) throw ArgumentError("rank_norm_sweep: need at least 3 ranks");
  for (std::size_t i = 1; i < spec.ranks.size(); ++i) {
    if (spec.ranks[i] <= spec.ranks[i - 1]) {
      throw ArgumentError("rank_norm_sweep: ranks must be strictly increasing");
    }
  }
  if (spec.ranks.front() == 0) throw ArgumentError("rank_norm_sweep: ranks must be >= 1");
  if (spec.n_samples < kMinVarianceSamples) {
    throw ArgumentError("rank_norm_sweep: n_samples below floor " +
                        std::to_string(kMinVarianceSamples));
  }
  if (spec.p_in == 0 || spec.p_out == 0) throw ArgumentError("rank_norm_sweep: widths must be >= 1");

  NormSweepResult out;
  const Vector delta(spec.p_out, spec.delta);
  std::vector<double> xs, ys;
  for (std::size_t r : spec.ranks) {
    const double gamma = scaling_factor(spec.policy, spec.alpha, r);
    const Moments m = detail::partitioned_moments(
        spec.n_samples, derive_seed(spec.seed, r), workers, [&](Rng& rng) {
          const Matrix A = gaussian_matrix(r, spec.p_in, 0.0, 1.0, rng);
          const Vector x_prev = gaussian_vector(spec.p_in, 0.0, 1.0, rng);
          const Vector x_next = gaussian_vector(spec.p_in, 0.0, 1.0, rng);
          return l2_norm(two_step_increment(A, x_prev, x_next, spec.eta, delta, gamma));
        });
    NormSweepPoint pt;
    pt.r = r;
    pt.gamma = gamma;
    pt.mean_norm = m.mean();
    pt.mean_norm_stderr = m.mean_stderr();
    pt.closed_form_norm = closed_form_norm(spec.eta, std::abs(spec.delta), gamma,
                                           static_cast<double>(r), static_cast<double>(spec.p_in),
                                           static_cast<double>(spec.p_out));
    out.points.push_back(pt);
    xs.push_back(static_cast<double>(r));
    ys.push_back(pt.mean_norm);
  }
  out.fit = fit_loglog(std::move(xs), std::move(ys));
  return out;
}

}  // namespace rora
