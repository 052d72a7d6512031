#pragma once

// Loss-distribution fitting and quantile thresholds.
//
// Three candidate families describe the scorer's loss values: lognormal and
// normal (closed-form maximum likelihood) and logistic (method of moments).
// The best family is the one with the smallest Kolmogorov-Smirnov distance
// to the sample, and a threshold is a quantile of that fitted family.

#include <adnad/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace adnad {

enum class Family { LogNormal, Normal, Logistic };

inline constexpr std::array<Family, 3> kAllFamilies = {
    Family::LogNormal, Family::Normal, Family::Logistic};

inline std::string_view family_name(Family f) {
  switch (f) {
    case Family::LogNormal: return "lognormal";
    case Family::Normal: return "normal";
    case Family::Logistic: return "logistic";
  }
  return "unknown";
}

inline std::optional<Family> parse_family(std::string_view s) {
  for (Family f : kAllFamilies)
    if (family_name(f) == s) return f;
  return std::nullopt;
}

/// A fitted loss distribution.
///
/// `location` is the mean (of ln x for lognormal), `scale` is sigma for the
/// normal families and gamma for logistic. `gof` is the KS statistic of the
/// sample the fit was selected on; zero until computed.
struct DistributionFit {
  Family family = Family::Normal;
  double location = 0.0;
  double scale = 1.0;
  double gof = 0.0;

  bool operator==(const DistributionFit&) const = default;
};

/// Current decision boundaries. `t2` and `fit_abnormal` are absent until the
/// engine has seen enough abnormal losses.
struct ThresholdPair {
  double t1 = 0.0;
  std::optional<double> t2;
  double p1 = 0.98;
  double p2 = 0.10;
  DistributionFit fit_normal;
  std::optional<DistributionFit> fit_abnormal;
};

inline constexpr double kDegenerateVariance = 1e-12;

// ---------------------------------------------------------------------------
// Standard normal

inline double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

// Inverse of the standard normal CDF. Acklam's rational approximation
// (relative error ~1.2e-9) polished with one Halley step against erfc, which
// brings the absolute error to a few ulps over (1e-300, 1 - 1e-16).
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    fail(Errc::InvalidPercentile, "probability must lie in (0,1), got " + std::to_string(p));

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement. In the upper tail work with the complement so the
  // residual is not swamped by 1 - p rounding.
  if (x > 0.0) {
    const double e = 0.5 * std::erfc(x / std::numbers::sqrt2) - (1.0 - p);
    const double u = -e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
  } else {
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Family CDF / density / quantile

inline double cdf(const DistributionFit& fit, double x) {
  switch (fit.family) {
    case Family::LogNormal:
      if (x <= 0.0) return 0.0;
      return std_normal_cdf((std::log(x) - fit.location) / fit.scale);
    case Family::Normal:
      return std_normal_cdf((x - fit.location) / fit.scale);
    case Family::Logistic: {
      const double z = (x - fit.location) / fit.scale;
      return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
  }
  return 0.0;
}

inline double log_pdf(const DistributionFit& fit, double x) {
  constexpr double half_log_2pi = 0.91893853320467274178;
  switch (fit.family) {
    case Family::LogNormal: {
      if (x <= 0.0) return -HUGE_VAL;
      const double lx = std::log(x);
      const double z = (lx - fit.location) / fit.scale;
      return -half_log_2pi - std::log(fit.scale) - lx - 0.5 * z * z;
    }
    case Family::Normal: {
      const double z = (x - fit.location) / fit.scale;
      return -half_log_2pi - std::log(fit.scale) - 0.5 * z * z;
    }
    case Family::Logistic: {
      const double z = std::abs(x - fit.location) / fit.scale;
      return -z - 2.0 * std::log1p(std::exp(-z)) - std::log(fit.scale);
    }
  }
  return -HUGE_VAL;
}

inline double log_likelihood(const DistributionFit& fit, std::span<const double> sample) {
  double ll = 0.0;
  for (double x : sample) ll += log_pdf(fit, x);
  return ll;
}

inline double quantile(const DistributionFit& fit, double p) {
  if (!(p > 0.0 && p < 1.0))
    fail(Errc::InvalidPercentile, "percentile must lie in (0,1), got " + std::to_string(p));
  switch (fit.family) {
    case Family::LogNormal:
      return std::exp(std_normal_quantile(p) * fit.scale + fit.location);
    case Family::Normal:
      return std_normal_quantile(p) * fit.scale + fit.location;
    case Family::Logistic:
      return fit.location + fit.scale * std::log(p / (1.0 - p));
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Estimators

namespace detail {

struct Moments {
  double mean;
  double variance;  // population (divisor n)
};

inline Moments population_moments(std::span<const double> xs) {
  const auto n = static_cast<double>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, ss / n};
}

inline Moments checked_moments(std::span<const double> xs, std::string_view who) {
  if (xs.size() < 2)
    fail(Errc::DegenerateSample, std::string(who) + " needs at least 2 values");
  for (double x : xs)
    if (!std::isfinite(x)) fail(Errc::NonFinite, std::string(who) + " got a non-finite value");
  const Moments m = population_moments(xs);
  if (m.variance < kDegenerateVariance)
    fail(Errc::DegenerateSample, std::string(who) + ": sample variance below 1e-12");
  return m;
}

}  // namespace detail

inline DistributionFit fit_normal_mle(std::span<const double> losses) {
  const auto m = detail::checked_moments(losses, "normal fit");
  return {Family::Normal, m.mean, std::sqrt(m.variance), 0.0};
}

inline DistributionFit fit_lognormal_mle(std::span<const double> losses) {
  std::vector<double> logs;
  logs.reserve(losses.size());
  for (double x : losses) {
    if (!(x > 0.0)) fail(Errc::NonPositiveSample, "lognormal fit requires strictly positive values");
    logs.push_back(std::log(x));
  }
  const auto m = detail::checked_moments(logs, "lognormal fit");
  return {Family::LogNormal, m.mean, std::sqrt(m.variance), 0.0};
}

inline DistributionFit fit_logistic_mom(std::span<const double> losses) {
  const auto m = detail::checked_moments(losses, "logistic fit");
  return {Family::Logistic, m.mean, std::sqrt(3.0 * m.variance) / std::numbers::pi, 0.0};
}

/// Two-sided one-sample Kolmogorov-Smirnov distance between the sample and
/// the fitted CDF. Order of `losses` does not matter.
inline double ks_statistic(std::span<const double> losses, const DistributionFit& fit) {
  if (losses.empty()) fail(Errc::EmptyBuffer, "KS statistic of an empty sample");
  if (fit.family == Family::LogNormal)
    for (double x : losses)
      if (!(x > 0.0)) fail(Errc::NonPositiveSample, "lognormal KS requires strictly positive values");

  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = cdf(fit, sorted[i]);
    const double upper = static_cast<double>(i + 1) / n - f;
    const double lower = f - static_cast<double>(i) / n;
    d = std::max({d, upper, lower});
  }
  return std::clamp(d, 0.0, 1.0);
}

inline DistributionFit fit_family(Family family, std::span<const double> losses) {
  switch (family) {
    case Family::LogNormal: return fit_lognormal_mle(losses);
    case Family::Normal: return fit_normal_mle(losses);
    case Family::Logistic: return fit_logistic_mom(losses);
  }
  fail(Errc::InvalidConfig, "unknown family");
}

/// Fits every applicable family and keeps the smallest KS distance. Lognormal
/// is not a candidate when any value is <= 0. Ties go to the earlier family in
/// LogNormal, Normal, Logistic order.
inline DistributionFit fit_best_distribution(std::span<const double> losses) {
  if (losses.size() < 2) fail(Errc::DegenerateSample, "best-fit needs at least 2 values");
  const bool positive = std::all_of(losses.begin(), losses.end(), [](double x) { return x > 0.0; });

  std::optional<DistributionFit> best;
  std::string last_error;
  for (Family family : kAllFamilies) {
    if (family == Family::LogNormal && !positive) continue;
    try {
      DistributionFit fit = fit_family(family, losses);
      fit.gof = ks_statistic(losses, fit);
      if (!best || fit.gof < best->gof) best = fit;
    } catch (const Error& e) {
      if (e.code() == Errc::NonFinite) throw;
      last_error = e.what();
    }
  }
  if (!best) fail(Errc::DegenerateSample, "no family could be fitted (" + last_error + ")");
  return *best;
}

struct AdaptiveThreshold {
  double threshold;
  DistributionFit fit;
};

/// Quantile of the best-fitting family at `p`. Callers that want an upper-tail
/// convention pass the complemented percentile themselves.
inline AdaptiveThreshold adaptive_threshold(std::span<const double> losses, double p) {
  if (!(p > 0.0 && p < 1.0))
    fail(Errc::InvalidPercentile, "percentile must lie in (0,1), got " + std::to_string(p));
  if (losses.empty()) fail(Errc::EmptyBuffer, "no losses buffered");
  const DistributionFit fit = fit_best_distribution(losses);
  return {quantile(fit, p), fit};
}

/// Probability-probability pairs (theoretical CDF, empirical CDF) at each
/// sorted sample point; the empirical value uses the (i - 0.5)/n plotting
/// position.
struct PpPoint {
  double value;
  double theoretical;
  double empirical;
};

inline std::vector<PpPoint> pp_points(std::span<const double> losses, const DistributionFit& fit) {
  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<PpPoint> out;
  out.reserve(sorted.size());
  const auto n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    out.push_back({sorted[i], cdf(fit, sorted[i]), (static_cast<double>(i) + 0.5) / n});
  return out;
}

}  // namespace adnad
