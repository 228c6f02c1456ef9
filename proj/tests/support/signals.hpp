#pragma once

// Test-only signal generators and reference computations.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "scorediff/audio/clip.hpp"

namespace scorediff::testing {

inline AudioClip sine(double hz, double seconds, double amp = 0.5, int rate = kPipelineRate) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(std::size_t(seconds * rate));
  for (std::size_t i = 0; i < c.samples.size(); ++i)
    c.samples[i] = amp * std::sin(2 * std::numbers::pi * hz * double(i) / rate);
  return c;
}

inline AudioClip silence(double seconds, int rate = kPipelineRate) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.assign(std::size_t(seconds * rate), 0.0);
  return c;
}

/// Short decaying noise-free impulses at the given times.
inline AudioClip clicks(const std::vector<double>& times, double seconds, int rate = kPipelineRate) {
  AudioClip c = silence(seconds, rate);
  for (double t : times) {
    const auto start = std::size_t(std::lround(t * rate));
    for (std::size_t i = 0; i < 64 && start + i < c.samples.size(); ++i)
      c.samples[start + i] += 0.9 * std::exp(-double(i) / 12.0) * (i % 2 ? -1.0 : 1.0);
  }
  return c;
}

/// Direct O(n^2) DFT of a real frame.
inline std::vector<std::complex<double>> direct_dft(const std::vector<double>& x, std::size_t n_fft) {
  std::vector<std::complex<double>> out(n_fft / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0;
    for (std::size_t j = 0; j < x.size(); ++j)
      acc += x[j] * std::polar(1.0, -2 * std::numbers::pi * double(j * k) / double(n_fft));
    out[k] = acc;
  }
  return out;
}

inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = double(i);
  return r;
}

inline double pearson_ref(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(a.size());
  mb /= double(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman_ref(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson_ref(ranks(a), ranks(b));
}

}  // namespace scorediff::testing
