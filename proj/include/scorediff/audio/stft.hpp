#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "scorediff/audio/clip.hpp"
#include "scorediff/audio/fft.hpp"

namespace scorediff {

/// Short-time Fourier transform settings, all in samples. With `center`
/// set, the signal is zero padded by window/2 on both sides so frame t is
/// centred on sample t*hop and the frame count is 1 + floor(n / hop).
/// Otherwise the count is 1 + floor((n - window) / hop).
struct StftConfig {
  std::size_t window = 1024;
  std::size_t hop = 160;
  std::size_t fft_size = 1024;
  bool center = true;

  std::size_t bins() const { return fft_size / 2 + 1; }

  void validate() const {
    detail::require(window > 0, "stft window must be positive");
    detail::require(hop > 0, "stft hop must be positive");
    detail::require(window <= fft_size, "stft window exceeds fft size");
  }

  std::size_t frame_count(std::size_t n_samples) const {
    if (center) return 1 + n_samples / hop;
    return n_samples < window ? 0 : 1 + (n_samples - window) / hop;
  }
};

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  return w;
}

/// Magnitude spectrogram, frames x bins, row-major.
struct LinearSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> magnitudes;
  StftConfig config;
  int sample_rate = kPipelineRate;
  std::size_t n_samples = 0;

  double& at(std::size_t t, std::size_t k) { return magnitudes[t * bins + k]; }
  double at(std::size_t t, std::size_t k) const { return magnitudes[t * bins + k]; }
  double bin_hz(std::size_t k) const { return double(k) * sample_rate / double(config.fft_size); }
};

/// Complex one-sided STFT, frames x bins.
struct ComplexSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<dsp::Complex> values;
  StftConfig config;
  int sample_rate = kPipelineRate;
  std::size_t n_samples = 0;
};

/// Analysis with a reusable plan and window.
class Stft {
 public:
  explicit Stft(StftConfig cfg) : cfg_(cfg), plan_((cfg.validate(), cfg.fft_size)), window_(hann_window(cfg.window)) {}

  const StftConfig& config() const { return cfg_; }
  std::span<const double> window() const { return window_; }

  ComplexSpectrogram analyze(std::span<const double> x, int sample_rate) const {
    detail::require(!x.empty(), "stft of an empty clip");
    const std::size_t frames = cfg_.frame_count(x.size());
    detail::require(frames > 0, "clip shorter than one stft window");
    ComplexSpectrogram out;
    out.frames = frames;
    out.bins = cfg_.bins();
    out.config = cfg_;
    out.sample_rate = sample_rate;
    out.n_samples = x.size();
    out.values.resize(frames * out.bins);
    std::vector<dsp::Complex> buf(cfg_.fft_size);
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    for (std::size_t t = 0; t < frames; ++t) {
      std::fill(buf.begin(), buf.end(), dsp::Complex{});
      const std::ptrdiff_t start = frame_start(t);
      for (std::size_t i = 0; i < cfg_.window; ++i) {
        const std::ptrdiff_t j = start + std::ptrdiff_t(i);
        if (j >= 0 && j < n) buf[i] = x[std::size_t(j)] * window_[i];
      }
      plan_.forward(buf);
      std::copy_n(buf.begin(), out.bins, out.values.begin() + std::ptrdiff_t(t * out.bins));
    }
    return out;
  }

  /// Least-squares inverse: overlap-add of windowed frames divided by the
  /// summed squared window. Output has `spec.n_samples` samples.
  std::vector<double> synthesize(const ComplexSpectrogram& spec) const {
    const std::size_t n = spec.n_samples;
    std::vector<double> num(n, 0.0), den(n, 0.0);
    std::vector<dsp::Complex> buf(cfg_.fft_size);
    const std::size_t N = cfg_.fft_size;
    for (std::size_t t = 0; t < spec.frames; ++t) {
      for (std::size_t k = 0; k < spec.bins; ++k) buf[k] = spec.values[t * spec.bins + k];
      for (std::size_t k = spec.bins; k < N; ++k) buf[k] = std::conj(buf[N - k]);
      buf[0] = buf[0].real();
      if (N % 2 == 0) buf[N / 2] = buf[N / 2].real();
      plan_.inverse(buf);
      const std::ptrdiff_t start = frame_start(t);
      for (std::size_t i = 0; i < cfg_.window; ++i) {
        const std::ptrdiff_t j = start + std::ptrdiff_t(i);
        if (j < 0 || j >= std::ptrdiff_t(n)) continue;
        num[std::size_t(j)] += buf[i].real() * window_[i];
        den[std::size_t(j)] += window_[i] * window_[i];
      }
    }
    for (std::size_t j = 0; j < n; ++j) num[j] = den[j] > 1e-12 ? num[j] / den[j] : 0.0;
    return num;
  }

 private:
  std::ptrdiff_t frame_start(std::size_t t) const {
    const auto s = std::ptrdiff_t(t * cfg_.hop);
    return cfg_.center ? s - std::ptrdiff_t(cfg_.window / 2) : s;
  }

  StftConfig cfg_;
  dsp::FftPlan plan_;
  std::vector<double> window_;
};

inline LinearSpectrogram magnitude(const ComplexSpectrogram& c) {
  LinearSpectrogram s;
  s.frames = c.frames;
  s.bins = c.bins;
  s.config = c.config;
  s.sample_rate = c.sample_rate;
  s.n_samples = c.n_samples;
  s.magnitudes.resize(c.values.size());
  for (std::size_t i = 0; i < c.values.size(); ++i) s.magnitudes[i] = std::abs(c.values[i]);
  return s;
}

/// Hann-windowed magnitude spectrogram of a clip.
inline LinearSpectrogram stft(const AudioClip& clip, const StftConfig& cfg = {}) {
  clip.validate();
  detail::require(!clip.samples.empty(), "stft of an empty clip");
  return magnitude(Stft(cfg).analyze(clip.samples, clip.sample_rate));
}

}  // namespace scorediff
