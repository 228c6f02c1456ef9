#pragma once

#include <cmath>
#include <vector>

#include "scorediff/audio/mel.hpp"
#include "scorediff/audio/stft.hpp"

namespace scorediff {

struct GriffinLimResult {
  AudioClip audio;
  /// Relative magnitude error ||(|STFT(x_i)| - S)|| / ||S|| after each iteration.
  std::vector<double> errors;
};

/// Classic Griffin-Lim phase reconstruction starting from zero phase.
/// With the least-squares inverse the magnitude error never increases.
inline GriffinLimResult griffin_lim(const LinearSpectrogram& target, int iterations) {
  detail::require(iterations >= 1, "griffin-lim needs at least one iteration");
  detail::require_shape(target.magnitudes.size() == target.frames * target.bins,
                        "malformed spectrogram");
  const Stft stft(target.config);
  ComplexSpectrogram spec;
  spec.frames = target.frames;
  spec.bins = target.bins;
  spec.config = target.config;
  spec.sample_rate = target.sample_rate;
  spec.n_samples = target.n_samples ? target.n_samples : (target.frames - 1) * target.config.hop;
  spec.values.resize(target.magnitudes.size());
  for (std::size_t i = 0; i < spec.values.size(); ++i) spec.values[i] = target.magnitudes[i];

  double norm = 0;
  for (double m : target.magnitudes) norm += m * m;
  norm = std::sqrt(norm);

  GriffinLimResult out;
  out.audio.sample_rate = target.sample_rate;
  for (int it = 0; it < iterations; ++it) {
    out.audio.samples = stft.synthesize(spec);
    auto rebuilt = stft.analyze(out.audio.samples, target.sample_rate);
    double err = 0;
    for (std::size_t i = 0; i < rebuilt.values.size(); ++i) {
      const double mag = std::abs(rebuilt.values[i]);
      const double d = mag - target.magnitudes[i];
      err += d * d;
      spec.values[i] = mag > 1e-12 ? rebuilt.values[i] * (target.magnitudes[i] / mag)
                                   : dsp::Complex(target.magnitudes[i], 0.0);
    }
    out.errors.push_back(norm > 0 ? std::sqrt(err) / norm : std::sqrt(err));
  }
  return out;
}

/// Mel inversion followed by Griffin-Lim.
inline GriffinLimResult griffin_lim(const MelSpectrogram& mel, const StftConfig& cfg, int iterations,
                                    int sample_rate = kPipelineRate) {
  const std::size_t n = mel.frames > 0 ? (mel.frames - 1) * cfg.hop : 0;
  detail::require(n > 0, "mel spectrogram too short to invert");
  return griffin_lim(mel_to_linear(mel, cfg, sample_rate, n), iterations);
}

}  // namespace scorediff
