#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "scorediff/audio/stft.hpp"

namespace scorediff {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelConfig {
  std::size_t mel_bins = 64;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = -11.512925464970229;  // ln(1e-5)
};

/// Triangular filters on the HTK mel scale, mel_bins x fft_bins.
struct MelFilterbank {
  std::size_t mel_bins = 0;
  std::size_t fft_bins = 0;
  std::vector<double> weights;
  std::vector<double> centers_hz;
  /// Non-zero support [first, last) of each filter.
  std::vector<std::size_t> first, last;

  double at(std::size_t m, std::size_t k) const { return weights[m * fft_bins + k]; }
};

inline MelFilterbank mel_filterbank(std::size_t mel_bins, std::size_t fft_size, int sample_rate,
                                    double fmin, double fmax) {
  detail::require(mel_bins >= 1, "mel_bins must be at least 1");
  detail::require(fmin >= 0 && fmin < fmax, "mel range requires 0 <= fmin < fmax");
  detail::require(fmax <= sample_rate / 2.0 + 1e-9, "mel fmax exceeds Nyquist");
  MelFilterbank fb;
  fb.mel_bins = mel_bins;
  fb.fft_bins = fft_size / 2 + 1;
  fb.weights.assign(mel_bins * fb.fft_bins, 0.0);
  const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
  std::vector<double> edges(mel_bins + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * double(i) / double(mel_bins + 1));
  fb.centers_hz.assign(edges.begin() + 1, edges.end() - 1);
  for (std::size_t m = 0; m < mel_bins; ++m) {
    const double l = edges[m], c = edges[m + 1], r = edges[m + 2];
    for (std::size_t k = 0; k < fb.fft_bins; ++k) {
      const double f = double(k) * sample_rate / double(fft_size);
      double w = 0;
      if (f > l && f <= c) w = (f - l) / (c - l);
      else if (f > c && f < r) w = (r - f) / (r - c);
      fb.weights[m * fb.fft_bins + k] = w;
    }
  }
  fb.first.assign(mel_bins, 0);
  fb.last.assign(mel_bins, 0);
  for (std::size_t m = 0; m < mel_bins; ++m) {
    std::size_t a = fb.fft_bins, b = 0;
    for (std::size_t k = 0; k < fb.fft_bins; ++k)
      if (fb.at(m, k) > 0) {
        a = std::min(a, k);
        b = k + 1;
      }
    fb.first[m] = a < b ? a : 0;
    fb.last[m] = b;
  }
  return fb;
}

/// Natural-log mel magnitudes, frames x mel_bins, clamped below at log_floor.
struct MelSpectrogram {
  std::size_t frames = 0;
  std::size_t mel_bins = 0;
  std::vector<double> values;
  double fmin = 0;
  double fmax = 8000;
  double log_floor = MelConfig{}.log_floor;

  double& at(std::size_t t, std::size_t m) { return values[t * mel_bins + m]; }
  double at(std::size_t t, std::size_t m) const { return values[t * mel_bins + m]; }
};

inline MelSpectrogram mel_spectrogram(const LinearSpectrogram& lin, const MelConfig& cfg = {}) {
  const auto fb = mel_filterbank(cfg.mel_bins, lin.config.fft_size, lin.sample_rate, cfg.fmin, cfg.fmax);
  detail::require_shape(fb.fft_bins == lin.bins, "linear spectrogram bin count mismatch");
  MelSpectrogram mel;
  mel.frames = lin.frames;
  mel.mel_bins = cfg.mel_bins;
  mel.fmin = cfg.fmin;
  mel.fmax = cfg.fmax;
  mel.log_floor = cfg.log_floor;
  mel.values.resize(lin.frames * cfg.mel_bins);
  for (std::size_t t = 0; t < lin.frames; ++t) {
    const double* row = &lin.magnitudes[t * lin.bins];
    for (std::size_t m = 0; m < cfg.mel_bins; ++m) {
      const double* w = &fb.weights[m * fb.fft_bins];
      double acc = 0;
      for (std::size_t k = fb.first[m]; k < fb.last[m]; ++k) acc += w[k] * row[k];
      mel.values[t * cfg.mel_bins + m] = acc > 0 ? std::max(std::log(acc), cfg.log_floor) : cfg.log_floor;
    }
  }
  return mel;
}

/// Approximate inverse of the mel projection: non-negative least squares
/// via multiplicative updates, returning a magnitude spectrogram laid out
/// for `stft_cfg`. Values at the log floor are treated as silence.
inline LinearSpectrogram mel_to_linear(const MelSpectrogram& mel, const StftConfig& stft_cfg,
                                       int sample_rate, std::size_t n_samples,
                                       int iterations = 200) {
  const auto fb = mel_filterbank(mel.mel_bins, stft_cfg.fft_size, sample_rate, mel.fmin, mel.fmax);
  const std::size_t K = fb.fft_bins, M = mel.mel_bins;
  LinearSpectrogram lin;
  lin.frames = mel.frames;
  lin.bins = K;
  lin.config = stft_cfg;
  lin.sample_rate = sample_rate;
  lin.n_samples = n_samples;
  lin.magnitudes.assign(mel.frames * K, 0.0);
  std::vector<double> y(M), x(K), wx(M), num(K), den(K);
  const double floor_lin = std::exp(mel.log_floor);
  for (std::size_t t = 0; t < mel.frames; ++t) {
    bool silent = true;
    for (std::size_t m = 0; m < M; ++m) {
      const double v = std::exp(mel.at(t, m));
      y[m] = v <= floor_lin * (1 + 1e-9) ? 0.0 : v;
      silent = silent && y[m] == 0.0;
    }
    if (silent) continue;
    // start from the normalised transpose projection
    std::fill(num.begin(), num.end(), 0.0);
    std::fill(den.begin(), den.end(), 0.0);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t k = fb.first[m]; k < fb.last[m]; ++k) {
        num[k] += fb.at(m, k) * y[m];
        den[k] += fb.at(m, k);
      }
    const std::vector<double> wty = num;
    for (std::size_t k = 0; k < K; ++k) x[k] = den[k] > 0 ? num[k] / den[k] + 1e-12 : 0.0;
    for (int it = 0; it < iterations; ++it) {
      for (std::size_t m = 0; m < M; ++m) {
        double a = 0;
        for (std::size_t k = fb.first[m]; k < fb.last[m]; ++k) a += fb.at(m, k) * x[k];
        wx[m] = a;
      }
      std::fill(den.begin(), den.end(), 0.0);
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t k = fb.first[m]; k < fb.last[m]; ++k) den[k] += fb.at(m, k) * wx[m];
      for (std::size_t k = 0; k < K; ++k) x[k] = den[k] > 0 ? x[k] * wty[k] / den[k] : 0.0;
    }
    std::copy(x.begin(), x.end(), lin.magnitudes.begin() + std::ptrdiff_t(t * K));
  }
  return lin;
}

}  // namespace scorediff
