#pragma once

#include <algorithm>
#include <vector>

#include "scorediff/audio/beats.hpp"
#include "scorediff/metrics/stats.hpp"

namespace scorediff::metrics {

struct CoverageConfig {
  double tolerance = 0.0625;  // seconds
  /// false: bcs = matched/|gen|, bhs = matched/|ref|; true swaps the denominators
  bool swap_denominators = false;
};

struct Coverage {
  std::size_t matched = 0;
  double bcs = 0, bhs = 0, f1 = 0;
};

inline double harmonic_mean(double a, double b) { return a + b > 0 ? 2 * a * b / (a + b) : 0.0; }

/// Size of a maximum one-to-one matching between onsets at most `tol`
/// apart. Sweeping generated onsets in order and taking the earliest free
/// reference in range is optimal for points on a line.
inline std::size_t match_onsets(std::vector<double> gen, std::vector<double> ref, double tol) {
  std::sort(gen.begin(), gen.end());
  std::sort(ref.begin(), ref.end());
  std::size_t j = 0, matched = 0;
  for (double g : gen) {
    while (j < ref.size() && ref[j] < g - tol) ++j;
    if (j < ref.size() && ref[j] <= g + tol) {
      ++matched;
      ++j;
    }
  }
  return matched;
}

inline Coverage beats_coverage(const std::vector<double>& gen, const std::vector<double>& ref, const CoverageConfig& cfg = {}) {
  detail::require(cfg.tolerance >= 0, "beat tolerance must be non-negative");
  Coverage c;
  if (gen.empty() && ref.empty()) {
    c.bcs = c.bhs = c.f1 = 1.0;
    return c;
  }
  if (gen.empty() || ref.empty()) return c;
  c.matched = match_onsets(gen, ref, cfg.tolerance);
  const double over_gen = double(c.matched) / double(gen.size());
  const double over_ref = double(c.matched) / double(ref.size());
  c.bcs = cfg.swap_denominators ? over_ref : over_gen;
  c.bhs = cfg.swap_denominators ? over_gen : over_ref;
  c.f1 = harmonic_mean(c.bcs, c.bhs);
  return c;
}

inline Coverage beats_coverage(const BeatSequence& gen, const BeatSequence& ref, const CoverageConfig& cfg = {}) {
  return beats_coverage(gen.onsets, ref.onsets, cfg);
}

struct RhythmReport {
  double bcs = 0, bhs = 0, f1 = 0;  // means over clips; f1 of the means
  Maybe csd, hsd;
  std::size_t clips = 0;
};

inline RhythmReport rhythm_stats(const std::vector<Coverage>& per_clip) {
  detail::require(!per_clip.empty(), "rhythm statistics need at least one clip");
  std::vector<double> b, h;
  for (const auto& c : per_clip) {
    b.push_back(c.bcs);
    h.push_back(c.bhs);
  }
  RhythmReport r;
  r.clips = per_clip.size();
  r.bcs = mean(b);
  r.bhs = mean(h);
  r.f1 = harmonic_mean(r.bcs, r.bhs);
  r.csd = sample_std(b);
  r.hsd = sample_std(h);
  return r;
}

}  // namespace scorediff::metrics
