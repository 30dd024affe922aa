#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "hiersim/error.hpp"

namespace hiersim {

struct SixNumberSummary {
  double min = 0, q1 = 0, median = 0, mean = 0, q3 = 0, max = 0;

  double iqr() const { return q3 - q1; }
  double range() const { return max - min; }
};

// Type-7 quantile (linear interpolation between order statistics) of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw InvalidArgument("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline SixNumberSummary sample_summary(std::vector<double> samples) {
  if (samples.empty()) throw InvalidArgument("summary of an empty sample");
  std::sort(samples.begin(), samples.end());
  SixNumberSummary s;
  s.min = samples.front();
  s.max = samples.back();
  s.q1 = quantile_sorted(samples, 0.25);
  s.median = quantile_sorted(samples, 0.5);
  s.q3 = quantile_sorted(samples, 0.75);
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  return s;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct AndersonDarling {
  double statistic = 0;  // A^2
  double adjusted = 0;   // A^2 (1 + 0.75/n + 2.25/n^2)
  double p_value = 0;
  double mean = 0;
  double sd = 0;
  bool degenerate = false;  // zero variance: no test performed
};

// p-value of the adjusted statistic for normality with estimated mean and
// variance (Stephens' piecewise approximation).
inline double anderson_darling_p(double aa) {
  if (aa < 0.2) return 1.0 - std::exp(-13.436 + 101.14 * aa - 223.73 * aa * aa);
  if (aa < 0.34) return 1.0 - std::exp(-8.318 + 42.796 * aa - 59.938 * aa * aa);
  if (aa < 0.6) return std::exp(0.9177 - 4.279 * aa - 1.38 * aa * aa);
  return std::exp(1.2937 - 5.709 * aa + 0.0186 * aa * aa);
}

// Anderson-Darling test of normality; the data are standardized with their
// own sample mean and standard deviation.
inline AndersonDarling anderson_darling(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 8) throw InvalidArgument("Anderson-Darling test needs at least 8 values");
  AndersonDarling out;
  out.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double ss = 0;
  for (double v : x) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(out.sd > 0)) {
    out.degenerate = true;
    out.p_value = std::nan("");
    return out;
  }
  std::vector<double> z(x);
  for (double& v : z) v = (v - out.mean) / out.sd;
  std::sort(z.begin(), z.end());
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = std::clamp(normal_cdf(z[i]), 1e-300, 1.0);
    const double hi = std::clamp(1.0 - normal_cdf(z[n - 1 - i]), 1e-300, 1.0);
    sum += (2.0 * static_cast<double>(i) + 1.0) * (std::log(lo) + std::log(hi));
  }
  const double nd = static_cast<double>(n);
  out.statistic = -nd - sum / nd;
  out.adjusted = out.statistic * (1.0 + 0.75 / nd + 2.25 / (nd * nd));
  out.p_value = std::clamp(anderson_darling_p(out.adjusted), 0.0, 1.0);
  return out;
}

}  // namespace hiersim
