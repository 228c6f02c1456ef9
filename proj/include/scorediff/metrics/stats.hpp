#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "scorediff/core/error.hpp"

namespace scorediff::metrics {

/// Undefined statistics (zero variance, too few samples) are std::nullopt,
/// never 0.
using Maybe = std::optional<double>;

inline double mean(std::span<const double> x) {
  detail::require(!x.empty(), "mean of an empty series");
  double s = 0;
  for (double v : x) s += v;
  return s / double(x.size());
}

/// Sample standard deviation (N - 1 denominator).
inline Maybe sample_std(std::span<const double> x) {
  if (x.size() < 2) return std::nullopt;
  const double m = mean(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / double(x.size() - 1));
}

inline Maybe pearson(std::span<const double> a, std::span<const double> b) {
  detail::require_shape(a.size() == b.size(), "pearson series lengths differ");
  if (a.size() < 2) return std::nullopt;
  const double ma = mean(a), mb = mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace scorediff::metrics
