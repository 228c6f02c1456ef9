#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "scorediff/audio/stft.hpp"

namespace scorediff {

inline constexpr std::size_t kPitchClasses = 12;

/// Pitch class (C = 0 ... B = 11) of the equal-tempered note nearest `hz`.
inline int pitch_class_of(double hz, double a4_hz = 440.0) {
  const long midi = std::lround(69.0 + 12.0 * std::log2(hz / a4_hz));
  return int(((midi % 12) + 12) % 12);
}

/// Short-window chroma analysis: 260-sample Hann frames, hop 160,
/// zero-padded to a 512-point transform; bins between fmin and fmax are
/// folded onto the pitch class of their centre frequency.
struct ChromaConfig {
  StftConfig stft{260, 160, 512, true};
  double fmin = 50.0;
  double fmax = 8000.0;
  double a4_hz = 440.0;
  int sample_rate = kPipelineRate;
};

/// Per-frame power folded into 12 pitch classes, frames x 12.
struct Chromagram {
  std::size_t frames = 0;
  std::vector<double> energies;

  double& at(std::size_t t, std::size_t pc) { return energies[t * kPitchClasses + pc]; }
  double at(std::size_t t, std::size_t pc) const { return energies[t * kPitchClasses + pc]; }
};

inline Chromagram chromagram(const AudioClip& clip, const ChromaConfig& cfg = {}) {
  clip.validate();
  detail::require(clip.sample_rate == cfg.sample_rate,
                  "chromagram expects clips at the pipeline sample rate");
  detail::require(clip.samples.size() >= cfg.stft.window, "clip shorter than one chroma window");
  const auto spec = Stft(cfg.stft).analyze(clip.samples, clip.sample_rate);
  std::vector<int> pc_of_bin(spec.bins, -1);
  for (std::size_t k = 1; k < spec.bins; ++k) {
    const double f = double(k) * clip.sample_rate / double(cfg.stft.fft_size);
    if (f >= cfg.fmin && f <= cfg.fmax) pc_of_bin[k] = pitch_class_of(f, cfg.a4_hz);
  }
  Chromagram c;
  c.frames = spec.frames;
  c.energies.assign(spec.frames * kPitchClasses, 0.0);
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t k = 0; k < spec.bins; ++k)
      if (pc_of_bin[k] >= 0) c.at(t, std::size_t(pc_of_bin[k])) += std::norm(spec.values[t * spec.bins + k]);
  return c;
}

}  // namespace scorediff
