#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "scorediff/core/error.hpp"

namespace scorediff::dsp {

using Complex = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n && !(n & (n - 1)); }

/// Precomputed transform of one size. Power-of-two sizes use iterative
/// radix-2; any other size falls back to a direct O(n^2) DFT.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    detail::require(n > 0, "fft size must be positive");
    twiddle_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double a = -2.0 * std::numbers::pi * double(k) / double(n);
      twiddle_[k] = Complex(std::cos(a), std::sin(a));
    }
    if (is_power_of_two(n)) {
      bitrev_.resize(n);
      std::size_t bits = 0;
      while ((std::size_t{1} << bits) < n) ++bits;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b)
          if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
        bitrev_[i] = r;
      }
    }
  }

  std::size_t size() const { return n_; }

  /// In-place forward transform (no scaling).
  void forward(std::vector<Complex>& a) const { transform(a, false); }
  /// In-place inverse transform, scaled by 1/n.
  void inverse(std::vector<Complex>& a) const {
    transform(a, true);
    const double s = 1.0 / double(n_);
    for (auto& v : a) v *= s;
  }

 private:
  void transform(std::vector<Complex>& a, bool inv) const {
    detail::require_shape(a.size() == n_, "fft buffer size mismatch");
    if (bitrev_.empty()) {
      std::vector<Complex> out(n_);
      for (std::size_t k = 0; k < n_; ++k) {
        Complex acc = 0;
        for (std::size_t j = 0; j < n_; ++j) {
          const Complex w = twiddle_[(j * k) % n_];
          acc += a[j] * (inv ? std::conj(w) : w);
        }
        out[k] = acc;
      }
      a.swap(out);
      return;
    }
    for (std::size_t i = 0; i < n_; ++i)
      if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2, step = n_ / len;
      for (std::size_t i = 0; i < n_; i += len) {
        for (std::size_t j = 0; j < half; ++j) {
          Complex w = twiddle_[j * step];
          if (inv) w = std::conj(w);
          const Complex u = a[i + j], v = a[i + j + half] * w;
          a[i + j] = u + v;
          a[i + j + half] = u - v;
        }
      }
    }
  }

  std::size_t n_;
  std::vector<Complex> twiddle_;
  std::vector<std::size_t> bitrev_;
};

}  // namespace scorediff::dsp
