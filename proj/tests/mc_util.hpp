#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace mc {

inline double mean(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double variance(const std::vector<double>& x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Standard error of the mean of a correlated chain by non-overlapping
/// batch means (sqrt(n) batches).
inline double batch_se(const std::vector<double>& x) {
  const std::size_t n = x.size();
  const std::size_t b = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(n))));
  const std::size_t nb = n / b;
  std::vector<double> means(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < b; ++j) s += x[i * b + j];
    means[i] = s / static_cast<double>(b);
  }
  return std::sqrt(variance(means) / static_cast<double>(nb));
}

inline double iid_se(const std::vector<double>& x) { return std::sqrt(variance(x) / static_cast<double>(x.size())); }

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace mc
