#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "scorediff/audio/beats.hpp"
#include "scorediff/audio/chroma.hpp"
#include "scorediff/audio/controls.hpp"
#include "scorediff/audio/griffin_lim.hpp"
#include "scorediff/audio/mel.hpp"
#include "scorediff/core/rng.hpp"
#include "support/signals.hpp"

using namespace scorediff;
using namespace scorediff::testing;

TEST(Stft, ZeroClipGivesZeroMagnitudes) {
  const auto spec = stft(silence(1.0));
  for (double m : spec.magnitudes) EXPECT_EQ(m, 0.0);
  EXPECT_EQ(spec.frames, 1 + 16000 / 160);
}

TEST(Stft, SinePeaksAtNearestBinAndMatchesDirectDft) {
  const auto clip = sine(1000.0, 1.0);
  const StftConfig cfg{1024, 160, 1024, true};
  const auto spec = stft(clip, cfg);
  const std::size_t expected_bin = std::size_t(std::lround(1000.0 / (16000.0 / 1024)));
  for (std::size_t t = 4; t + 4 < spec.frames; ++t) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < spec.bins; ++k)
      if (spec.at(t, k) > spec.at(t, arg)) arg = k;
    EXPECT_EQ(arg, expected_bin) << "frame " << t;
  }
  // direct DFT of one interior frame
  const std::size_t t = 20;
  const auto w = hann_window(1024);
  std::vector<double> frame(1024);
  for (std::size_t i = 0; i < 1024; ++i) frame[i] = clip.samples[t * 160 - 512 + i] * w[i];
  const auto ref = direct_dft(frame, 1024);
  for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(spec.at(t, k), std::abs(ref[k]), 1e-8 * (1 + std::abs(ref[k])));
}

TEST(Stft, ParsevalPerFrame) {
  Rng rng(3);
  AudioClip clip;
  for (int i = 0; i < 8000; ++i) clip.samples.push_back(rng.uniform(-1, 1));
  const StftConfig cfg{400, 160, 512, true};
  const Stft tf(cfg);
  const auto spec = tf.analyze(clip.samples, clip.sample_rate);
  const auto w = hann_window(cfg.window);
  for (std::size_t t = 3; t < spec.frames - 3; ++t) {
    double time_energy = 0;
    for (std::size_t i = 0; i < cfg.window; ++i) {
      const double v = clip.samples[t * cfg.hop - cfg.window / 2 + i] * w[i];
      time_energy += v * v;
    }
    double spec_energy = 0;
    for (std::size_t k = 0; k < spec.bins; ++k) {
      const double p = std::norm(spec.values[t * spec.bins + k]);
      spec_energy += (k == 0 || k == cfg.fft_size / 2) ? p : 2 * p;
    }
    EXPECT_NEAR(spec_energy / double(cfg.fft_size), time_energy, 1e-6 * time_energy);
  }
}

TEST(Stft, FrameCountAndErrors) {
  const auto clip = sine(300, 0.5);
  EXPECT_EQ(stft(clip, {1024, 160, 1024, false}).frames, 1 + (8000 - 1024) / 160);
  EXPECT_THROW(stft(AudioClip{}, {}), ParameterError);
  EXPECT_THROW(stft(clip, {1025, 160, 1024, true}), ParameterError);
  EXPECT_THROW(stft(clip, {1024, 0, 1024, true}), ParameterError);
}

TEST(Stft, PureFunction) {
  const auto clip = sine(523.0, 0.3);
  EXPECT_EQ(stft(clip).magnitudes, stft(clip).magnitudes);
  const auto a = mel_spectrogram(stft(clip)), b = mel_spectrogram(stft(clip));
  EXPECT_EQ(a.values, b.values);
}

TEST(Mel, ZeroInputIsLogFloor) {
  const auto mel = mel_spectrogram(stft(silence(0.5)));
  for (double v : mel.values) EXPECT_EQ(v, MelConfig{}.log_floor);
  EXPECT_EQ(mel.mel_bins, 64u);
}

TEST(Mel, FilterbankRowsPositiveAndOnlyAdjacentOverlap) {
  const auto fb = mel_filterbank(64, 1024, 16000, 0, 8000);
  for (std::size_t m = 0; m < 64; ++m) {
    double s = 0;
    for (std::size_t k = 0; k < fb.fft_bins; ++k) s += fb.at(m, k);
    EXPECT_GT(s, 0.0) << m;
    for (std::size_t o = m + 2; o < 64; ++o)
      for (std::size_t k = 0; k < fb.fft_bins; ++k) ASSERT_FALSE(fb.at(m, k) > 0 && fb.at(o, k) > 0);
  }
}

TEST(Mel, WhiteNoiseEnergyTracksLinearEnergy) {
  Rng rng(11);
  AudioClip clip;
  for (int i = 0; i < 32000; ++i) {
    const double gain = 0.05 + 0.9 * std::abs(std::sin(i / 3000.0));
    clip.samples.push_back(gain * rng.uniform(-1, 1));
  }
  const auto lin = stft(clip);
  const auto mel = mel_spectrogram(lin);
  std::vector<double> le, me;
  for (std::size_t t = 0; t < lin.frames; ++t) {
    double a = 0, b = 0;
    for (std::size_t k = 0; k < lin.bins; ++k) a += lin.at(t, k) * lin.at(t, k);
    for (std::size_t m = 0; m < mel.mel_bins; ++m) b += std::exp(2 * mel.at(t, m));
    le.push_back(a);
    me.push_back(b);
  }
  EXPECT_GT(spearman_ref(le, me), 0.9);
}

TEST(Mel, InvalidRange) {
  const auto lin = stft(sine(200, 0.2));
  EXPECT_THROW(mel_spectrogram(lin, {64, 4000, 3000}), ParameterError);
  EXPECT_THROW(mel_spectrogram(lin, {64, 0, 9000}), ParameterError);
  EXPECT_THROW(mel_spectrogram(lin, {0, 0, 8000}), ParameterError);
}

namespace {

int argmax_row(const Chromagram& c, std::size_t t) {
  int arg = 0;
  for (std::size_t k = 1; k < 12; ++k)
    if (c.at(t, k) > c.at(t, std::size_t(arg))) arg = int(k);
  return arg;
}

// Oracle: direct DFT of one chroma frame folded by pitch class.
std::array<double, 12> chroma_oracle(const AudioClip& clip, std::size_t t) {
  const auto w = hann_window(260);
  std::vector<double> frame(260, 0.0);
  for (std::size_t i = 0; i < 260; ++i) {
    const auto j = std::ptrdiff_t(t * 160) - 130 + std::ptrdiff_t(i);
    if (j >= 0 && j < std::ptrdiff_t(clip.samples.size())) frame[i] = clip.samples[std::size_t(j)] * w[i];
  }
  const auto X = direct_dft(frame, 512);
  std::array<double, 12> out{};
  for (std::size_t k = 1; k < X.size(); ++k) {
    const double f = k * 16000.0 / 512;
    if (f < 50) continue;
    const double midi = 69 + 12 * std::log2(f / 440);
    out[std::size_t((std::lround(midi) % 12 + 12) % 12)] += std::norm(X[k]);
  }
  return out;
}

}  // namespace

TEST(Chroma, A440IsPitchClassNine) {
  const auto clip = sine(440, 1.0);
  const auto c = chromagram(clip);
  EXPECT_EQ(c.frames, 1 + 16000 / 160);
  for (std::size_t t = 2; t + 2 < c.frames; ++t) EXPECT_EQ(argmax_row(c, t), 9);
  const auto ref = chroma_oracle(clip, 50);
  for (std::size_t k = 0; k < 12; ++k) EXPECT_NEAR(c.at(50, k), ref[k], 1e-8 * (1 + ref[k]));
}

TEST(Chroma, SilenceAndOctaveAndGain) {
  const auto z = chromagram(silence(0.5));
  for (double e : z.energies) EXPECT_EQ(e, 0.0);
  const auto lo = chromagram(sine(220, 0.5)), hi = chromagram(sine(440, 0.5));
  auto quiet = sine(220, 0.5, 0.01);
  const auto q = chromagram(quiet);
  for (std::size_t t = 2; t + 2 < lo.frames; ++t) {
    EXPECT_EQ(argmax_row(lo, t), argmax_row(hi, t));
    EXPECT_EQ(argmax_row(lo, t), argmax_row(q, t));
  }
}

TEST(Chroma, RejectsShortClipsAndWrongRate) {
  EXPECT_THROW(chromagram(silence(0.01)), ParameterError);
  EXPECT_THROW(chromagram(sine(440, 0.5, 0.5, 22050)), ParameterError);
}

TEST(Melody, ArgmaxSilenceAndTies) {
  Chromagram c;
  c.frames = 3;
  c.energies.assign(36, 0.0);
  c.at(0, 9) = 5.0;
  c.at(2, 2) = 1.0;
  c.at(2, 7) = 1.0;
  const auto m = extract_melody_control(c, 1e-6);
  EXPECT_EQ(m.pitch_at(0), 9);
  EXPECT_EQ(m.pitch_at(1), -1);
  EXPECT_EQ(m.pitch_at(2), 2);
  for (std::size_t t = 0; t < 3; ++t) {
    float s = 0;
    for (std::size_t k = 0; k < 12; ++k) s += m.one_hot[t * 12 + k];
    EXPECT_EQ(s, t == 1 ? 0.0f : 1.0f);
  }
}

TEST(SavitzkyGolay, ReproducesLowOrderPolynomials) {
  std::vector<double> quad, lin, cst;
  for (int t = 0; t < 200; ++t) {
    quad.push_back(double(t) * t);
    lin.push_back(-80 + 0.3 * t);
    cst.push_back(4.25);
  }
  for (const auto* s : {&quad, &lin, &cst}) {
    const auto out = savitzky_golay(*s, 11, 2);
    for (std::size_t i = 0; i < s->size(); ++i) EXPECT_NEAR(out[i], (*s)[i], 1e-9) << i;
  }
}

TEST(SavitzkyGolay, ReducesNoise) {
  Rng rng(5);
  std::vector<double> clean, noisy;
  for (int t = 0; t < 400; ++t) {
    clean.push_back(std::sin(t / 20.0));
    noisy.push_back(clean.back() + rng.normal(0, 0.2));
  }
  const auto out = savitzky_golay(noisy, 11, 2);
  double before = 0, after = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    before += (noisy[i] - clean[i]) * (noisy[i] - clean[i]);
    after += (out[i] - clean[i]) * (out[i] - clean[i]);
  }
  EXPECT_LT(after, before);
}

TEST(SavitzkyGolay, Errors) {
  const std::vector<double> s(20, 1.0);
  EXPECT_THROW(savitzky_golay(s, 10, 2), ParameterError);
  EXPECT_THROW(savitzky_golay(s, 3, 3), ParameterError);
  EXPECT_THROW(savitzky_golay(std::vector<double>(5, 1.0), 11, 2), ParameterError);
}

TEST(Dynamics, SilenceConstantToneAndErrors) {
  const auto d0 = extract_dynamics_control(stft(silence(1.0)));
  for (double v : d0.loudness_db) EXPECT_NEAR(v, -80.0, 1e-9);
  const auto d1 = extract_dynamics_control(stft(sine(700, 1.0, 0.3)));
  double mean = 0, var = 0;
  const std::size_t lo = 10, hi = d1.frames() - 10;
  for (std::size_t t = lo; t < hi; ++t) mean += d1.loudness_db[t];
  mean /= double(hi - lo);
  for (std::size_t t = lo; t < hi; ++t) var += std::pow(d1.loudness_db[t] - mean, 2);
  EXPECT_LT(var / double(hi - lo), 1e-6);
  EXPECT_LE(mean, 0.0);
  EXPECT_THROW(extract_dynamics_control(stft(silence(1.0)), {10, 2, -80}), ParameterError);
  EXPECT_THROW(extract_dynamics_control(stft(silence(1.0)), {3, 3, -80}), ParameterError);
}

TEST(Dynamics, GainShiftsLoudnessExactlyBeforeClamping) {
  Rng rng(9);
  AudioClip clip;
  for (int i = 0; i < 16000; ++i) clip.samples.push_back(0.3 * rng.uniform(-1, 1) * std::sin(i / 900.0));
  AudioClip scaled = clip;
  const double g = 0.125;
  for (double& s : scaled.samples) s *= g;
  const auto a = savitzky_golay(frame_loudness_db(stft(clip)), 11, 2);
  const auto b = savitzky_golay(frame_loudness_db(stft(scaled)), 11, 2);
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_NEAR(b[t] - a[t], 20 * std::log10(g), 1e-9);
}

TEST(Beats, ClickTrainAtTwoHertz) {
  std::vector<double> times;
  for (int k = 0; k < 20; ++k) times.push_back(0.25 + 0.5 * k);
  const auto beats = detect_beats(clicks(times, 10.0));
  ASSERT_EQ(beats.onsets.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(beats.onsets[i], times[i], 0.02);
}

TEST(Beats, SilenceSingleClickAndShortClip) {
  EXPECT_TRUE(detect_beats(silence(2.0)).onsets.empty());
  const auto one = detect_beats(clicks({1.0}, 2.0));
  ASSERT_EQ(one.onsets.size(), 1u);
  EXPECT_GE(one.onsets[0], 0.98);
  EXPECT_LE(one.onsets[0], 1.02);
  EXPECT_THROW(detect_beats(silence(0.5)), ParameterError);
}

TEST(Beats, FuzzOutputsAscendingWithinBounds) {
  Rng rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    AudioClip clip;
    const double secs = rng.uniform(1.0, 3.0);
    const int kind = int(rng.integer(0, 2));
    for (std::size_t i = 0; i < std::size_t(secs * 16000); ++i) {
      double v = rng.uniform(-1, 1) * (kind == 0 ? 1.0 : std::abs(std::sin(i * rng.uniform(0.0001, 0.01))));
      if (kind == 2) v = (i % 4000 < 40) ? 0.8 : 0.0;
      clip.samples.push_back(v);
    }
    const auto b = detect_beats(clip);
    for (std::size_t i = 0; i < b.onsets.size(); ++i) {
      EXPECT_GE(b.onsets[i], 0.0);
      EXPECT_LE(b.onsets[i], clip.duration());
      if (i) EXPECT_GT(b.onsets[i], b.onsets[i - 1]);
    }
  }
}

TEST(GriffinLim, SineRoundTripAndMonotoneError) {
  const StftConfig cfg{1024, 160, 1024, true};
  AudioClip clip = sine(660, 1.0, 0.4);
  clip.samples.resize(160 * 99);
  const auto target = stft(clip, cfg);
  const auto gl = griffin_lim(target, 32);
  ASSERT_EQ(gl.errors.size(), 32u);
  for (std::size_t i = 1; i < gl.errors.size(); ++i) EXPECT_LE(gl.errors[i], gl.errors[i - 1] * (1 + 1e-9));
  const auto again = stft(gl.audio, cfg);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < again.magnitudes.size(); ++i) {
    num += std::pow(again.magnitudes[i] - target.magnitudes[i], 2);
    den += target.magnitudes[i] * target.magnitudes[i];
  }
  EXPECT_LT(std::sqrt(num / den), 0.1);
}

TEST(GriffinLim, ZeroSpectrogramGivesSilence) {
  const auto gl = griffin_lim(stft(silence(0.5)), 4);
  double rms = 0;
  for (double s : gl.audio.samples) rms += s * s;
  EXPECT_LT(std::sqrt(rms / double(gl.audio.samples.size())), 1e-6);
  EXPECT_THROW(griffin_lim(stft(silence(0.5)), 0), ParameterError);
}

TEST(GriffinLim, MelInversionKeepsPitchClass) {
  AudioClip clip = sine(1541.0, 1.0, 0.3);
  clip.samples.resize(160 * 99);
  const auto mel = mel_spectrogram(stft(clip));
  const auto gl = griffin_lim(mel, StftConfig{}, 32);
  const auto a = extract_melody_control(chromagram(clip));
  const auto b = extract_melody_control(chromagram(gl.audio));
  int agree = 0, total = 0;
  for (std::size_t t = 5; t + 5 < a.frames; ++t, ++total) agree += a.pitch_at(t) == b.pitch_at(t);
  EXPECT_GT(double(agree) / total, 0.9);
}

TEST(Wav, RoundTripAndResample) {
  const auto path = std::filesystem::temp_directory_path() / "scorediff_wav_test.wav";
  const auto clip = sine(440, 0.25, 0.5, 22050);
  write_wav(path, clip);
  const auto raw = read_wav(path, 0);
  EXPECT_EQ(raw.sample_rate, 22050);
  ASSERT_EQ(raw.samples.size(), clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i) EXPECT_NEAR(raw.samples[i], clip.samples[i], 1e-7);
  const auto rs = read_wav(path);
  EXPECT_EQ(rs.sample_rate, 16000);
  EXPECT_NEAR(rs.duration(), 0.25, 1e-3);
  const auto c = chromagram(rs);
  EXPECT_EQ(argmax_row(c, c.frames / 2), 9);
  std::filesystem::remove(path);
}

TEST(Wav, ErrorsOnMissingFileAndFloatOverflow) {
  const auto dir = std::filesystem::temp_directory_path();
  EXPECT_THROW(read_wav(dir / "scorediff_no_such_file.wav"), IoError);
  AudioClip loud = sine(440, 0.1);
  loud.samples[10] = 1e300;
  EXPECT_THROW(write_wav(dir / "scorediff_loud.wav", loud), NumericError);
  EXPECT_FALSE(std::filesystem::exists(dir / "scorediff_loud.wav"));
}
