#pragma once

#include <vector>

#include "scorediff/audio/controls.hpp"
#include "scorediff/metrics/stats.hpp"

namespace scorediff::metrics {

/// Fraction of frames whose pitch classes agree, over frames where both
/// sides are voiced; frame counts are truncated to the shorter sequence.
inline Maybe melody_accuracy(const MelodyControl& control, const MelodyControl& generated) {
  const std::size_t n = std::min(control.frames, generated.frames);
  std::size_t agree = 0, total = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const int a = control.pitch_at(t), b = generated.pitch_at(t);
    if (a < 0 || b < 0) continue;
    ++total;
    agree += a == b;
  }
  if (total == 0) return std::nullopt;
  return double(agree) / double(total);
}

struct DynamicsPair {
  std::vector<double> input, output;
};

struct DynamicsCorrelation {
  Maybe micro;  // mean of per-pair r over pairs with defined r
  Maybe macro;  // r over all pairs concatenated
  std::size_t pairs_used = 0;
};

inline DynamicsCorrelation dynamics_correlation(const std::vector<DynamicsPair>& pairs) {
  DynamicsCorrelation out;
  std::vector<double> all_in, all_out;
  double sum_r = 0;
  for (const auto& p : pairs) {
    detail::require_shape(p.input.size() == p.output.size(), "dynamics pair lengths differ");
    all_in.insert(all_in.end(), p.input.begin(), p.input.end());
    all_out.insert(all_out.end(), p.output.begin(), p.output.end());
    if (auto r = pearson(p.input, p.output)) {
      sum_r += *r;
      ++out.pairs_used;
    }
  }
  if (out.pairs_used == 0) return out;
  out.micro = sum_r / double(out.pairs_used);
  out.macro = pearson(all_in, all_out);
  return out;
}

/// Pairs two controls, truncating to the shorter one.
inline DynamicsPair align(const DynamicsControl& in, const DynamicsControl& out) {
  const std::size_t n = std::min(in.frames(), out.frames());
  return {{in.loudness_db.begin(), in.loudness_db.begin() + std::ptrdiff_t(n)},
          {out.loudness_db.begin(), out.loudness_db.begin() + std::ptrdiff_t(n)}};
}

struct StyleReport {
  Maybe melody_acc;
  Maybe dyn_corr_micro, dyn_corr_macro;
  std::size_t clips = 0;
};

}  // namespace scorediff::metrics
