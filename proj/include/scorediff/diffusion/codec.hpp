#pragma once

#include <cmath>
#include <vector>

#include "scorediff/audio/mel.hpp"
#include "scorediff/nn/adamw.hpp"
#include "scorediff/nn/layers.hpp"

namespace scorediff::diffusion {

struct CodecConfig {
  std::size_t ratio = 4;     // compression per axis; 1 with channels 1 is identity mode
  std::size_t channels = 1;  // latent channels
  std::size_t hidden0 = 16, hidden1 = 32;
  double input_offset = -5.76;  // log-mel values are mapped by (x - offset) / scale
  double input_scale = 5.76;
  std::uint64_t seed = 3;

  bool identity() const { return ratio == 1 && channels == 1; }
};

/// Mel <-> latent mapping. A strided-conv autoencoder (two stride-2 stages
/// for ratio 4) or, in identity mode, a reshape.
template <class T>
class LatentCodec {
 public:
  explicit LatentCodec(const CodecConfig& cfg = {}) : cfg_(cfg) {
    if (cfg.identity()) return;
    detail::require(cfg.ratio == 2 || cfg.ratio == 4, "codec ratio must be 1 (identity), 2 or 4");
    Rng rng(cfg.seed);
    nn::Builder<T> b(store_, rng, "codec.");
    const std::size_t h0 = cfg.hidden0, h1 = cfg.hidden1;
    enc_.push_back(b.conv3x3("enc0", 1, h0));
    enc_.push_back(b.conv3x3("enc1", h0, h1, 2));
    if (cfg.ratio == 4) enc_.push_back(b.conv3x3("enc2", h1, h1, 2));
    enc_.push_back(b.conv("enc_out", h1, cfg.channels, 1, 1, {}));
    dec_.push_back(b.conv("dec_in", cfg.channels, h1, 1, 1, {}));
    if (cfg.ratio == 4) dec_.push_back(b.conv3x3("dec1", h1, h1));
    dec_.push_back(b.conv3x3("dec2", h1, h0));
    dec_.push_back(b.conv3x3("dec_out", h0, 1));
  }

  const CodecConfig& config() const { return cfg_; }
  nn::ParamStore<T>& store() { return store_; }
  const nn::ParamStore<T>& store() const { return store_; }
  double latent_shift() const { return shift_; }
  double latent_scale() const { return scale_; }
  void set_latent_normalization(double shift, double scale) {
    detail::require(scale > 0 && std::isfinite(scale) && std::isfinite(shift), "latent scale must be positive");
    shift_ = shift;
    scale_ = scale;
  }

  void check_mel_shape(std::size_t frames, std::size_t bins) const {
    detail::require(frames % cfg_.ratio == 0 && bins % cfg_.ratio == 0,
                    "mel shape " + std::to_string(frames) + "x" + std::to_string(bins) + " is not divisible by ratio " +
                        std::to_string(cfg_.ratio));
  }

  /// Network graph on normalised input x[N,1,T,F] -> raw latent.
  nn::Var encode_graph(nn::Tape<T>& tp, nn::Var x) const {
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      x = enc_[i](tp, x);
      if (i + 1 < enc_.size()) x = nn::silu(tp, x);
    }
    return x;
  }

  nn::Var decode_graph(nn::Tape<T>& tp, nn::Var z) const {
    nn::Var h = nn::silu(tp, dec_[0](tp, z));
    std::size_t ups = cfg_.ratio == 4 ? 2 : 1;
    for (std::size_t i = 1; i < dec_.size(); ++i) {
      if (ups > 0) {
        h = nn::upsample_nearest(tp, h, 2, 2);
        --ups;
      }
      h = dec_[i](tp, h);
      if (i + 1 < dec_.size()) h = nn::silu(tp, h);
    }
    return h;
  }

  Tensor<T> normalize(const MelSpectrogram& mel) const {
    Tensor<T> x({1, 1, mel.frames, mel.mel_bins});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = T((mel.values[i] - cfg_.input_offset) / cfg_.input_scale);
    return x;
  }

  /// [C, T/r, F/r]
  Tensor<T> encode(const MelSpectrogram& mel) const {
    check_mel_shape(mel.frames, mel.mel_bins);
    if (cfg_.identity()) {
      Tensor<T> z({1, mel.frames, mel.mel_bins});
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = T(mel.values[i]);
      return z;
    }
    nn::Tape<T> tp(false);
    Tensor<T> raw = tp.value(encode_graph(tp, tp.constant(normalize(mel))));
    Tensor<T> z({raw.dim(1), raw.dim(2), raw.dim(3)});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = T((double(raw[i]) - shift_) * scale_);
    return z;
  }

  MelSpectrogram decode(const Tensor<T>& z, const MelConfig& mel_cfg = {}) const {
    detail::require_shape(z.rank() == 3 && z.dim(0) == cfg_.channels, "latent must be [C,H,W], got " + shape_str(z.shape()));
    MelSpectrogram mel;
    mel.frames = z.dim(1) * cfg_.ratio;
    mel.mel_bins = z.dim(2) * cfg_.ratio;
    mel.fmin = mel_cfg.fmin;
    mel.fmax = mel_cfg.fmax;
    mel.log_floor = mel_cfg.log_floor;
    mel.values.resize(mel.frames * mel.mel_bins);
    if (cfg_.identity()) {
      for (std::size_t i = 0; i < z.size(); ++i) mel.values[i] = double(z[i]);
      return mel;
    }
    Tensor<T> raw({1, z.dim(0), z.dim(1), z.dim(2)});
    for (std::size_t i = 0; i < z.size(); ++i) raw[i] = T(double(z[i]) / scale_ + shift_);
    nn::Tape<T> tp(false);
    const Tensor<T> x = tp.value(decode_graph(tp, tp.constant(std::move(raw))));
    // decoded values below the analysis floor are clamped like real spectrograms
    for (std::size_t i = 0; i < x.size(); ++i)
      mel.values[i] = std::max(mel_cfg.log_floor, double(x[i]) * cfg_.input_scale + cfg_.input_offset);
    return mel;
  }

 private:
  CodecConfig cfg_;
  nn::ParamStore<T> store_;
  std::vector<nn::Conv2d<T>> enc_, dec_;
  double shift_ = 0.0, scale_ = 1.0;
};

struct CodecTrainConfig {
  std::size_t steps = 400;
  std::size_t batch = 8;
  nn::AdamWConfig optimizer{1e-3, 0.9, 0.999, 1e-8, 0.01, 1.0};
  std::uint64_t seed = 4;
};

/// Reconstruction-L2 training on normalised mels, then latent
/// normalisation to zero mean and unit variance over the corpus.
/// Returns the per-step losses.
template <class T>
std::vector<double> train_codec(LatentCodec<T>& codec, const std::vector<MelSpectrogram>& mels,
                                const CodecTrainConfig& cfg) {
  detail::require(!mels.empty(), "codec training needs at least one mel");
  std::vector<double> losses;
  if (codec.config().identity()) return losses;
  Rng rng(cfg.seed);
  nn::AdamW<T> opt(cfg.optimizer);
  const std::size_t T0 = mels[0].frames, F0 = mels[0].mel_bins;
  codec.check_mel_shape(T0, F0);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tensor<T> x({cfg.batch, 1, T0, F0});
    for (std::size_t n = 0; n < cfg.batch; ++n) {
      const auto& mel = mels[std::size_t(rng.integer(0, std::int64_t(mels.size()) - 1))];
      detail::require_shape(mel.frames == T0 && mel.mel_bins == F0, "codec training mels must share one shape");
      const auto one = codec.normalize(mel);
      std::copy(one.values().begin(), one.values().end(), x.data() + n * T0 * F0);
    }
    codec.store().zero_grad();
    nn::Tape<T> tp;
    nn::Var in = tp.constant(x);
    nn::Var loss = nn::mse(tp, codec.decode_graph(tp, codec.encode_graph(tp, in)), in);
    const double lv = double(tp.value(loss)[0]);
    if (!std::isfinite(lv)) throw NumericError("codec loss became non-finite at step " + std::to_string(step));
    losses.push_back(lv);
    tp.backward(loss);
    opt.step(codec.store());
  }
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& mel : mels) {
    nn::Tape<T> tp(false);
    const auto raw = tp.value(codec.encode_graph(tp, tp.constant(codec.normalize(mel))));
    for (T v : raw.values()) {
      sum += double(v);
      sq += double(v) * double(v);
      ++n;
    }
  }
  const double mean = sum / double(n);
  const double var = std::max(sq / double(n) - mean * mean, 1e-12);
  codec.set_latent_normalization(mean, 1.0 / std::sqrt(var));
  return losses;
}

}  // namespace scorediff::diffusion
