#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "scorediff/audio/stft.hpp"

namespace scorediff {

/// Onset times in seconds, strictly ascending and inside [0, duration].
struct BeatSequence {
  std::vector<double> onsets;
  double duration = 0;
};

/// Spectral-flux onset detection with adaptive-threshold peak picking.
/// Window lengths are in seconds; `delta` is relative to the envelope maximum.
struct BeatConfig {
  StftConfig stft{512, 80, 512, true};
  double pre_max = 0.03;
  double post_max = 0.03;
  double pre_avg = 0.10;
  double post_avg = 0.07;
  double delta = 0.07;
  double wait = 0.03;
  double min_duration = 1.0;
  /// Envelopes whose peak is below this absolute level are treated as silence.
  double silence_level = 1e-6;
};

/// Half-wave rectified frame-to-frame magnitude increase, summed over bins.
inline std::vector<double> onset_envelope(const LinearSpectrogram& spec) {
  std::vector<double> env(spec.frames, 0.0);
  for (std::size_t t = 1; t < spec.frames; ++t) {
    double acc = 0;
    for (std::size_t k = 0; k < spec.bins; ++k) acc += std::max(0.0, spec.at(t, k) - spec.at(t - 1, k));
    env[t] = acc;
  }
  return env;
}

inline BeatSequence detect_beats(const AudioClip& clip, const BeatConfig& cfg = {}) {
  clip.validate();
  detail::require(clip.duration() >= cfg.min_duration, "clip too short for beat detection");
  BeatSequence out;
  out.duration = clip.duration();
  const auto spec = stft(clip, cfg.stft);
  auto env = onset_envelope(spec);
  const double peak = env.empty() ? 0.0 : *std::max_element(env.begin(), env.end());
  if (!(peak > cfg.silence_level)) return out;
  for (double& v : env) v /= peak;

  const double fps = double(clip.sample_rate) / double(cfg.stft.hop);
  const auto frames = [fps](double s) { return std::ptrdiff_t(std::lround(s * fps)); };
  const std::ptrdiff_t pre_max = frames(cfg.pre_max), post_max = frames(cfg.post_max);
  const std::ptrdiff_t pre_avg = frames(cfg.pre_avg), post_avg = frames(cfg.post_avg);
  const std::ptrdiff_t wait = frames(cfg.wait);
  const auto n = std::ptrdiff_t(env.size());
  std::ptrdiff_t last = -wait - 1;
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    const double v = env[std::size_t(t)];
    bool is_max = true;
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, t - pre_max); j <= std::min(n - 1, t + post_max); ++j)
      if (env[std::size_t(j)] > v || (j < t && env[std::size_t(j)] == v)) {
        is_max = false;
        break;
      }
    if (!is_max) continue;
    const std::ptrdiff_t a = std::max<std::ptrdiff_t>(0, t - pre_avg), b = std::min(n - 1, t + post_avg);
    double mean = 0;
    for (std::ptrdiff_t j = a; j <= b; ++j) mean += env[std::size_t(j)];
    mean /= double(b - a + 1);
    if (v < mean + cfg.delta || t - last <= wait) continue;
    const double time = std::clamp(double(t) / fps, 0.0, out.duration);
    if (!out.onsets.empty() && time <= out.onsets.back()) continue;
    out.onsets.push_back(time);
    last = t;
  }
  return out;
}

}  // namespace scorediff
