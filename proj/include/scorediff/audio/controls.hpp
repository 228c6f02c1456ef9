#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "scorediff/audio/chroma.hpp"
#include "scorediff/audio/stft.hpp"

namespace scorediff {

/// Per-frame dominant pitch class as a one-hot row; silent frames are all zero.
struct MelodyControl {
  std::size_t frames = 0;
  std::vector<float> one_hot;  // frames x 12

  /// Active pitch class of frame t, or -1 for a silent frame.
  int pitch_at(std::size_t t) const {
    for (std::size_t c = 0; c < kPitchClasses; ++c)
      if (one_hot[t * kPitchClasses + c] != 0.0f) return int(c);
    return -1;
  }

  static MelodyControl from_pitches(std::span<const int> pitches) {
    MelodyControl m;
    m.frames = pitches.size();
    m.one_hot.assign(m.frames * kPitchClasses, 0.0f);
    for (std::size_t t = 0; t < m.frames; ++t)
      if (pitches[t] >= 0) m.one_hot[t * kPitchClasses + std::size_t(pitches[t])] = 1.0f;
    return m;
  }
};

/// Smoothed per-frame loudness in dB.
struct DynamicsControl {
  std::vector<double> loudness_db;
  std::size_t frames() const { return loudness_db.size(); }
};

/// Argmax over pitch classes; ties resolve to the lowest index and frames
/// whose total energy is below `energy_floor` become silent.
inline MelodyControl extract_melody_control(const Chromagram& chroma, double energy_floor = 1e-4) {
  detail::require_shape(chroma.energies.size() == chroma.frames * kPitchClasses,
                        "chromagram must have 12 columns");
  std::vector<int> pitches(chroma.frames, -1);
  for (std::size_t t = 0; t < chroma.frames; ++t) {
    double total = 0, best = -1;
    int arg = -1;
    for (std::size_t c = 0; c < kPitchClasses; ++c) {
      const double e = chroma.at(t, c);
      total += e;
      if (e > best) {
        best = e;
        arg = int(c);
      }
    }
    if (total >= energy_floor && total > 0) pitches[t] = arg;
  }
  return MelodyControl::from_pitches(pitches);
}

namespace detail {

// Least-squares polynomial fit of `order` over points at positions xs,
// returning the row vector mapping samples to the fitted value at x_eval.
inline Eigen::VectorXd savgol_weights(std::span<const double> xs, std::size_t order, double x_eval) {
  const auto n = Eigen::Index(xs.size());
  const auto p = Eigen::Index(order + 1);
  Eigen::MatrixXd V(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = 1;
    for (Eigen::Index j = 0; j < p; ++j, v *= xs[std::size_t(i)]) V(i, j) = v;
  }
  Eigen::VectorXd e(p);
  double v = 1;
  for (Eigen::Index j = 0; j < p; ++j, v *= x_eval) e(j) = v;
  // value = e^T (V^T V)^-1 V^T y
  const Eigen::MatrixXd pinv = V.completeOrthogonalDecomposition().pseudoInverse();
  return pinv.transpose() * e;
}

}  // namespace detail

/// Savitzky-Golay smoothing. Interior samples use the centred window; the
/// first and last window/2 samples are evaluated from a single polynomial
/// fitted over the first (or last) `window` samples.
inline std::vector<double> savitzky_golay(std::span<const double> y, std::size_t window, std::size_t order) {
  detail::require(window % 2 == 1, "savitzky-golay window must be odd");
  detail::require(order < window, "savitzky-golay order must be below the window length");
  detail::require(y.size() >= window, "series shorter than the savitzky-golay window");
  const std::size_t half = window / 2, n = y.size();
  std::vector<double> xs(window);
  for (std::size_t i = 0; i < window; ++i) xs[i] = double(i) - double(half);
  const Eigen::VectorXd centre = detail::savgol_weights(xs, order, 0.0);
  std::vector<double> out(n);
  for (std::size_t t = half; t + half < n; ++t) {
    double acc = 0;
    for (std::size_t i = 0; i < window; ++i) acc += centre(Eigen::Index(i)) * y[t - half + i];
    out[t] = acc;
  }
  for (std::size_t t = 0; t < half; ++t) {
    const Eigen::VectorXd w = detail::savgol_weights(xs, order, double(t) - double(half));
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < window; ++i) {
      head += w(Eigen::Index(i)) * y[i];
      // mirror: position n-1-t evaluated from the last window, reversed
      tail += w(Eigen::Index(i)) * y[n - 1 - i];
    }
    out[t] = head;
    out[n - 1 - t] = tail;
  }
  return out;
}

struct DynamicsConfig {
  std::size_t sg_window = 11;
  std::size_t sg_order = 2;
  double db_floor = -80.0;
};

/// Per-frame energy in dB relative to a full-scale frame, optionally
/// clamped to [floor, 0].
inline std::vector<double> frame_loudness_db(const LinearSpectrogram& lin,
                                             std::optional<double> floor = std::nullopt) {
  const auto w = hann_window(lin.config.window);
  double wsq = 0;
  for (double v : w) wsq += v * v;
  const double ref = double(lin.config.fft_size) * wsq;
  std::vector<double> db(lin.frames);
  for (std::size_t t = 0; t < lin.frames; ++t) {
    double e = 0;
    for (std::size_t k = 0; k < lin.bins; ++k) e += lin.at(t, k) * lin.at(t, k);
    double v = e > 0 ? 10.0 * std::log10(e / ref) : -std::numeric_limits<double>::infinity();
    if (floor) v = std::clamp(v, *floor, 0.0);
    db[t] = v;
  }
  return db;
}

inline DynamicsControl extract_dynamics_control(const LinearSpectrogram& lin, const DynamicsConfig& cfg = {}) {
  detail::require(cfg.sg_window % 2 == 1, "dynamics smoothing window must be odd");
  detail::require(cfg.sg_window > cfg.sg_order, "dynamics smoothing window must exceed the order");
  const auto db = frame_loudness_db(lin, cfg.db_floor);
  DynamicsControl d;
  if (db.size() < cfg.sg_window) {
    d.loudness_db = db;
    return d;
  }
  d.loudness_db = savitzky_golay(db, cfg.sg_window, cfg.sg_order);
  for (double& v : d.loudness_db) v = std::clamp(v, cfg.db_floor, 0.0);
  return d;
}

}  // namespace scorediff
