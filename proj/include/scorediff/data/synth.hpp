#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "scorediff/audio/chroma.hpp"
#include "scorediff/audio/mel.hpp"
#include "scorediff/film/encoder.hpp"

namespace scorediff::data {

/// Equal-tempered notes, one per latent frequency column, with distinct
/// pitch classes. Each note sits near the centre of its column's mel band
/// so that pitch maps to a latent position.
struct NoteTable {
  std::vector<double> hz;
  std::vector<int> pitch_class;
  std::vector<std::size_t> column;
};

inline NoteTable note_table(const MelConfig& mel = {}, std::size_t ratio = 4, double lo_hz = 600.0, double hi_hz = 6000.0) {
  const double mlo = hz_to_mel(mel.fmin), mhi = hz_to_mel(mel.fmax);
  auto center_of = [&](double bin) { return mel_to_hz(mlo + (mhi - mlo) * (bin + 1.0) / double(mel.mel_bins + 1)); };
  NoteTable t;
  bool used[kPitchClasses] = {};
  for (std::size_t col = 0; col * ratio < mel.mel_bins; ++col) {
    const double c = center_of(double(col * ratio) + (double(ratio) - 1) / 2);
    if (c < lo_hz || c > hi_hz) continue;
    const double midi = 69 + 12 * std::log2(c / 440.0);
    for (int d : {0, 1, -1, 2, -2}) {
      const int note = int(std::lround(midi)) + d;
      const int pc = ((note % 12) + 12) % 12;
      if (used[pc]) continue;
      used[pc] = true;
      t.hz.push_back(440.0 * std::pow(2.0, (note - 69) / 12.0));
      t.pitch_class.push_back(pc);
      t.column.push_back(col);
      break;
    }
  }
  return t;
}

struct SynthConfig {
  std::size_t clips = 2000;
  std::size_t frames = 128;  // analysis frames per clip (hop 160 at 16 kHz)
  std::size_t hop = 160;
  std::size_t styles = 4;
  std::size_t grid = 4;      // note boundaries fall on multiples of this many frames
  int sample_rate = kPipelineRate;
  std::uint64_t seed = 42;
};

/// Per-style generation parameters.
struct StyleSpec {
  std::size_t min_len, max_len;  // note length range in grid units
  double rest_prob;
  double harmonic2, harmonic3;   // relative partial amplitudes
  int envelope;                  // 0 flat, 1 decay, 2 swell
  double brightness;             // drives the toy video frames
};

inline StyleSpec style_spec(std::size_t style) {
  static const StyleSpec specs[] = {
      {4, 8, 0.15, 0.0, 0.0, 0, 0.2},
      {2, 4, 0.25, 0.3, 0.0, 1, 0.8},
      {6, 10, 0.10, 0.0, 0.15, 2, 0.5},
      {3, 6, 0.30, 0.2, 0.1, 1, 0.35},
  };
  return specs[style % 4];
}

struct SynthClip {
  std::string id;
  std::size_t style = 0;
  AudioClip audio;
  std::vector<int> pitch;       // per frame: note index into the table or -1
  std::vector<double> level_db; // per frame target amplitude in dB full scale (or -inf)
  std::vector<film::VideoFrame> video;
  std::vector<float> attributes;  // 10 x 6 aesthetic attributes
  std::vector<float> theme;
  std::size_t emotion = 0;
};

inline std::vector<film::VideoFrame> style_video(std::size_t style, Rng& rng, std::size_t n_frames = 10) {
  const auto sp = style_spec(style);
  std::vector<film::VideoFrame> frames;
  for (std::size_t i = 0; i < n_frames; ++i) {
    film::VideoFrame f{16, 12, {}};
    for (std::size_t y = 0; y < f.height; ++y)
      for (std::size_t x = 0; x < f.width; ++x) {
        const double stripe = (style % 2 == 0) ? double(x % 4 < 2) : double(y % 3 == 0);
        f.pixels.push_back(float(std::clamp(sp.brightness + 0.2 * stripe + 0.05 * rng.normal(), 0.0, 1.0)));
      }
    frames.push_back(std::move(f));
  }
  return frames;
}

/// One clip: a monophonic melody on the note table with per-note loudness
/// and rests, rendered with a style-dependent timbre and envelope.
inline SynthClip synth_clip(std::size_t index, const SynthConfig& cfg, const NoteTable& notes) {
  Rng rng(cfg.seed * 1000003ULL + index);
  SynthClip c;
  c.id = "synth-" + std::to_string(index);
  c.style = index % cfg.styles;
  const auto sp = style_spec(c.style);
  const std::size_t n = (cfg.frames - 1) * cfg.hop;
  c.audio.sample_rate = cfg.sample_rate;
  c.audio.samples.assign(n, 0.0);
  c.pitch.assign(cfg.frames, -1);
  c.level_db.assign(cfg.frames, -INFINITY);
  std::size_t t = 0;
  double phase = 0;
  while (t < cfg.frames) {
    const std::size_t len = cfg.grid * std::size_t(rng.integer(std::int64_t(sp.min_len), std::int64_t(sp.max_len)));
    const std::size_t end = std::min(cfg.frames, t + len);
    const bool rest = rng.uniform() < sp.rest_prob;
    const int note = int(rng.integer(0, std::int64_t(notes.hz.size()) - 1));
    const double db = rng.uniform(-36.0, -6.0);
    if (!rest) {
      const double amp = std::pow(10.0, db / 20.0);
      const double f0 = notes.hz[std::size_t(note)];
      const std::size_t s0 = t * cfg.hop, s1 = std::min(n, end * cfg.hop);
      for (std::size_t s = s0; s < s1; ++s) {
        const double u = double(s - s0) / double(std::max<std::size_t>(1, s1 - s0));
        double env = 1.0;
        if (sp.envelope == 1) env = std::exp(-2.0 * u);
        if (sp.envelope == 2) env = 0.4 + 0.6 * u;
        const double ramp = std::min({1.0, double(s - s0) / 80.0, double(s1 - s) / 80.0});
        const double w = 2 * std::numbers::pi * f0 / cfg.sample_rate;
        phase += w;
        double v = std::sin(phase) + sp.harmonic2 * std::sin(2 * phase) + sp.harmonic3 * std::sin(3 * phase);
        c.audio.samples[s] = amp * env * ramp * v / (1 + sp.harmonic2 + sp.harmonic3);
      }
      for (std::size_t f = t; f < end; ++f) {
        c.pitch[f] = note;
        c.level_db[f] = db;
      }
    }
    t = end;
  }
  c.video = style_video(c.style, rng);
  c.attributes.resize(film::kAestheticFrames * film::kAestheticAttributes);
  for (std::size_t i = 0; i < c.attributes.size(); ++i)
    c.attributes[i] = float(std::clamp(0.5 + 0.15 * double(c.style) - 0.2 + 0.05 * rng.normal(), 0.0, 1.0));
  c.theme.assign(8, 0.0f);
  c.theme[c.style % 8] = 1.0f;
  c.emotion = c.style % 6;
  return c;
}

inline std::vector<SynthClip> synth_corpus(const SynthConfig& cfg) {
  const auto notes = note_table();
  std::vector<SynthClip> out;
  out.reserve(cfg.clips);
  for (std::size_t i = 0; i < cfg.clips; ++i) out.push_back(synth_clip(i, cfg, notes));
  return out;
}

}  // namespace scorediff::data
