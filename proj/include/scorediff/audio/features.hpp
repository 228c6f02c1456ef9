#pragma once

#include "scorediff/audio/chroma.hpp"
#include "scorediff/audio/controls.hpp"
#include "scorediff/audio/griffin_lim.hpp"
#include "scorediff/audio/mel.hpp"
#include "scorediff/audio/stft.hpp"

namespace scorediff {

/// Analysis settings shared by extraction, training data and evaluation.
struct FeatureConfig {
  StftConfig stft;
  MelConfig mel;
  ChromaConfig chroma;
  DynamicsConfig dynamics;
  double melody_energy_floor = 1e-4;
  int griffin_lim_iterations = 32;
};

struct ClipFeatures {
  LinearSpectrogram linear;
  MelSpectrogram mel;
  Chromagram chroma;
  MelodyControl melody;
  DynamicsControl dynamics;
};

inline ClipFeatures extract_features(const AudioClip& clip, const FeatureConfig& cfg = {}) {
  ClipFeatures f;
  f.linear = stft(clip, cfg.stft);
  f.mel = mel_spectrogram(f.linear, cfg.mel);
  f.chroma = chromagram(clip, cfg.chroma);
  f.melody = extract_melody_control(f.chroma, cfg.melody_energy_floor);
  f.dynamics = extract_dynamics_control(f.linear, cfg.dynamics);
  return f;
}

/// Audio rendering of a mel spectrogram (mel inversion + Griffin-Lim).
inline AudioClip render_mel(const MelSpectrogram& mel, const FeatureConfig& cfg = {}) {
  return griffin_lim(mel, cfg.stft, cfg.griffin_lim_iterations, cfg.chroma.sample_rate).audio;
}

}  // namespace scorediff
