#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "scorediff/core/error.hpp"
#include "scorediff/core/rng.hpp"
#include "scorediff/nn/layers.hpp"

namespace scorediff::film {

using nn::Param;
using nn::ParamStore;

inline constexpr std::size_t kFilmDim = 512;
inline constexpr std::size_t kAestheticFrames = 10;
inline constexpr std::size_t kAestheticAttributes = 6;

struct FrameEmbeddingSequence {
  std::size_t n_frames = 0;
  std::size_t dim = kFilmDim;
  std::vector<float> values;  // n_frames x dim
  double frame_rate = 10.0;

  std::span<const float> frame(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

struct FilmFeatures {
  std::vector<float> semantic, aesthetic, emotion;
};

struct FusedCondition {
  std::vector<float> c_film;
  std::array<double, 3> weights{};
};

struct EmotionLabel {
  std::size_t class_index = 0;
  std::size_t classes = 6;
};

/// Raw grayscale video frame, values in [0,1].
struct VideoFrame {
  std::size_t width = 0, height = 0;
  std::vector<float> pixels;
};

/// Source of per-frame visual embeddings (a pretrained image encoder in a
/// full system).
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual FrameEmbeddingSequence embed(const std::vector<VideoFrame>& frames, double frame_rate) const = 0;
};

/// Deterministic stand-in: a handful of pixel statistics pushed through a
/// fixed seeded random projection.
class ToyEmbeddingProvider final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kStats = 8;

  explicit ToyEmbeddingProvider(std::uint64_t seed = 7) : proj_(kFilmDim * kStats) {
    Rng rng(seed);
    for (auto& v : proj_) v = rng.normal() / std::sqrt(double(kStats));
  }

  static std::array<double, kStats> stats(const VideoFrame& f) {
    detail::require(f.width > 0 && f.height > 0 && f.pixels.size() == f.width * f.height, "malformed video frame");
    double sum = 0, sq = 0, gx = 0, gy = 0, top = 0, left = 0, hi = 0;
    for (std::size_t y = 0; y < f.height; ++y)
      for (std::size_t x = 0; x < f.width; ++x) {
        const double v = f.pixels[y * f.width + x];
        sum += v;
        sq += v * v;
        if (x + 1 < f.width) gx += std::abs(f.pixels[y * f.width + x + 1] - v);
        if (y + 1 < f.height) gy += std::abs(f.pixels[(y + 1) * f.width + x] - v);
        if (2 * y < f.height) top += v;
        if (2 * x < f.width) left += v;
        if (v > 0.5) hi += 1;
      }
    const double n = double(f.width * f.height);
    const double mean = sum / n;
    return {mean, std::sqrt(std::max(0.0, sq / n - mean * mean)), gx / n, gy / n, 2 * top / n - mean,
            2 * left / n - mean, hi / n, 1.0};
  }

  FrameEmbeddingSequence embed(const std::vector<VideoFrame>& frames, double frame_rate) const override {
    FrameEmbeddingSequence seq;
    seq.n_frames = frames.size();
    seq.frame_rate = frame_rate;
    seq.values.assign(frames.size() * kFilmDim, 0.0f);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto s = stats(frames[i]);
      for (std::size_t d = 0; d < kFilmDim; ++d) {
        double acc = 0;
        for (std::size_t k = 0; k < kStats; ++k) acc += proj_[d * kStats + k] * s[k];
        seq.values[i * kFilmDim + d] = float(acc);
      }
    }
    return seq;
  }

 private:
  std::vector<double> proj_;
};

/// Mean over the time axis.
inline std::vector<float> semantic_feature(const FrameEmbeddingSequence& frames) {
  detail::require(frames.n_frames >= 1, "semantic feature needs at least one frame");
  detail::require(frames.values.size() == frames.n_frames * frames.dim, "frame embedding size mismatch");
  std::vector<double> acc(frames.dim, 0.0);
  for (std::size_t i = 0; i < frames.n_frames; ++i)
    for (std::size_t d = 0; d < frames.dim; ++d) acc[d] += frames.values[i * frames.dim + d];
  std::vector<float> out(frames.dim);
  for (std::size_t d = 0; d < frames.dim; ++d) out[d] = float(acc[d] / double(frames.n_frames));
  return out;
}

struct FilmEncoderConfig {
  std::size_t dim = kFilmDim;
  std::size_t emotion_classes = 6;
  std::size_t aesthetic_buckets = 64;
  std::size_t theme_dim = 8;
  std::uint64_t seed = 11;
};

/// Input bundle for one clip, before any learned parameter is applied.
struct FilmInputs {
  std::vector<float> semantic;  // dim
  std::size_t aesthetic_bucket = 0;
  std::size_t emotion = 0;
};

/// Learned parts of the film condition: score map, score-bucket and emotion
/// embedding tables, and the shared fusion logit map. Parameters live in a
/// caller-owned store under the "film." prefix.
template <class T>
class FilmEncoder {
 public:
  FilmEncoder() = default;

  FilmEncoder(ParamStore<T>& store, const FilmEncoderConfig& cfg) : cfg_(cfg) {
    detail::require(cfg.aesthetic_buckets >= 1 && cfg.emotion_classes >= 1, "film encoder needs buckets and classes");
    Rng rng(cfg.seed);
    nn::Builder<T> b(store, rng, "film.");
    // bucketing is not differentiable, so the score map is fixed at init
    score_ = b.linear("aesthetic.score", kAestheticAttributes + cfg.theme_dim, 1);
    score_.w->trainable = false;
    score_.b->trainable = false;
    score_.b->value[0] = T(0.5);
    aesthetic_table_ = &b.tensor("aesthetic.table", rng.normal_tensor<T>({cfg.aesthetic_buckets, cfg.dim}));
    emotion_table_ = &b.tensor("emotion.table", rng.normal_tensor<T>({cfg.emotion_classes, cfg.dim}));
    laff_ = &b.tensor("laff.w", nn::fan_in_normal<T>(rng, {1, cfg.dim}, cfg.dim));
  }

  const FilmEncoderConfig& config() const { return cfg_; }

  /// Averages 10 frames of 6 attributes, appends the theme vector, applies
  /// the score map.
  double aesthetic_score(std::span<const float> attributes, std::span<const float> theme) const {
    detail::require(attributes.size() == kAestheticFrames * kAestheticAttributes,
                    "aesthetic attributes must be 10 frames x 6 attributes");
    detail::require(theme.size() == cfg_.theme_dim, "theme vector length mismatch");
    std::array<double, kAestheticAttributes> mean{};
    for (std::size_t f = 0; f < kAestheticFrames; ++f)
      for (std::size_t a = 0; a < kAestheticAttributes; ++a) mean[a] += attributes[f * kAestheticAttributes + a];
    double s = double(score_.b->value[0]);
    for (std::size_t a = 0; a < kAestheticAttributes; ++a) s += double(score_.w->value[a]) * mean[a] / kAestheticFrames;
    for (std::size_t t = 0; t < theme.size(); ++t) s += double(score_.w->value[kAestheticAttributes + t]) * theme[t];
    return s;
  }

  /// Scores are clamped to [0,1] and cut into equal-width buckets.
  std::size_t bucket_of(double score) const {
    const double c = std::clamp(score, 0.0, 1.0);
    return std::min(cfg_.aesthetic_buckets - 1, std::size_t(c * double(cfg_.aesthetic_buckets)));
  }

  std::vector<float> aesthetic_embedding(std::size_t bucket) const { return row(*aesthetic_table_, bucket); }

  std::vector<float> emotion_feature(const EmotionLabel& label) const {
    detail::require(label.class_index < cfg_.emotion_classes, "emotion label out of range");
    return row(*emotion_table_, label.class_index);
  }

  FilmFeatures features(const FilmInputs& in) const {
    detail::require(in.semantic.size() == cfg_.dim, "semantic feature dimension mismatch");
    return {in.semantic, aesthetic_embedding(in.aesthetic_bucket), emotion_feature({in.emotion, cfg_.emotion_classes})};
  }

  FusedCondition fuse(const FilmFeatures& f) const {
    const std::array<const std::vector<float>*, 3> parts{&f.semantic, &f.aesthetic, &f.emotion};
    std::array<double, 3> logits{};
    for (std::size_t i = 0; i < 3; ++i) {
      detail::require(parts[i]->size() == cfg_.dim, "film feature dimension mismatch");
      for (std::size_t d = 0; d < cfg_.dim; ++d) {
        const double v = (*parts[i])[d];
        if (!std::isfinite(v)) throw NumericError("non-finite film feature");
        logits[i] += double(laff_->value[d]) * v;
      }
    }
    FusedCondition out;
    out.weights = softmax3(logits);
    out.c_film.assign(cfg_.dim, 0.0f);
    for (std::size_t d = 0; d < cfg_.dim; ++d) {
      double acc = 0;
      for (std::size_t i = 0; i < 3; ++i) acc += out.weights[i] * (*parts[i])[d];
      out.c_film[d] = float(acc);
    }
    return out;
  }

  /// Differentiable path for a batch: returns context tokens [N, 1, dim].
  nn::Var context(nn::Tape<T>& tp, const std::vector<FilmInputs>& batch) const {
    const std::size_t N = batch.size(), D = cfg_.dim;
    Tensor<T> sem({N, 1, D});
    std::vector<std::size_t> buckets, emotions;
    for (std::size_t n = 0; n < N; ++n) {
      detail::require(batch[n].semantic.size() == D, "semantic feature dimension mismatch");
      for (std::size_t d = 0; d < D; ++d) sem[n * D + d] = T(batch[n].semantic[d]);
      buckets.push_back(batch[n].aesthetic_bucket);
      emotions.push_back(batch[n].emotion);
    }
    using namespace nn;
    Var a = reshape(tp, gather_rows(tp, tp.param(*aesthetic_table_), buckets), {N, 1, D});
    Var e = reshape(tp, gather_rows(tp, tp.param(*emotion_table_), emotions), {N, 1, D});
    Var stack = concat_channels(tp, concat_channels(tp, tp.constant(std::move(sem)), a), e);  // [N,3,D]
    Var logits = reshape(tp, linear(tp, stack, tp.param(*laff_)), {N, 1, 3});
    return batched_matmul(tp, softmax_last(tp, logits), stack, false);
  }

 private:
  static std::array<double, 3> softmax3(const std::array<double, 3>& l) {
    const double m = std::max({l[0], l[1], l[2]});
    std::array<double, 3> w{};
    double z = 0;
    for (std::size_t i = 0; i < 3; ++i) z += (w[i] = std::exp(l[i] - m));
    for (auto& v : w) v /= z;
    return w;
  }

  std::vector<float> row(const Param<T>& table, std::size_t r) const {
    detail::require(r < table.value.dim(0), "embedding row out of range");
    const std::size_t D = table.value.dim(1);
    std::vector<float> out(D);
    for (std::size_t d = 0; d < D; ++d) out[d] = float(table.value[r * D + d]);
    return out;
  }

  FilmEncoderConfig cfg_;
  nn::Linear<T> score_;
  Param<T>* aesthetic_table_ = nullptr;
  Param<T>* emotion_table_ = nullptr;
  Param<T>* laff_ = nullptr;
};

}  // namespace scorediff::film
