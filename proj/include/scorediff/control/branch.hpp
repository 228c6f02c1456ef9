#pragma once

#include <optional>
#include <vector>

#include "scorediff/audio/controls.hpp"
#include "scorediff/diffusion/unet.hpp"

namespace scorediff::control {

using diffusion::Residuals;
using nn::Param;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

struct StyleControls {
  std::optional<MelodyControl> melody;
  std::optional<DynamicsControl> dynamics;
};

struct BranchConfig {
  std::size_t hint_channels = 16;
  std::size_t ratio = 4;          // control frames per latent row
  std::size_t latent_width = 16;  // F / r
  double db_floor = -80.0;
};

/// Dynamics in dB mapped to [0,1] so that silence (the floor) maps to 0,
/// the same value an absent control contributes.
inline float normalize_db(double db, double floor) { return float(std::clamp((db - floor) / -floor, 0.0, 1.0)); }

/// Batched control tensors: melody [N,12,T,1], dynamics [N,1,T,1]. Absent
/// controls stay zero.
template <class T>
struct ControlBatch {
  Tensor<T> melody, dynamics;
  bool any_melody = false, any_dynamics = false;
};

template <class T>
ControlBatch<T> make_control_batch(const std::vector<const StyleControls*>& items, std::size_t frames, double db_floor) {
  const std::size_t N = items.size();
  ControlBatch<T> b;
  b.melody = Tensor<T>({N, kPitchClasses, frames, 1});
  b.dynamics = Tensor<T>({N, 1, frames, 1});
  for (std::size_t n = 0; n < N; ++n) {
    const StyleControls* c = items[n];
    if (!c) continue;
    if (c->melody) {
      detail::require_shape(c->melody->frames == frames, "melody control has " + std::to_string(c->melody->frames) +
                                                             " frames, latent expects " + std::to_string(frames));
      b.any_melody = true;
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t k = 0; k < kPitchClasses; ++k)
          b.melody[(n * kPitchClasses + k) * frames + t] = T(c->melody->one_hot[t * kPitchClasses + k]);
    }
    if (c->dynamics) {
      detail::require_shape(c->dynamics->frames() == frames, "dynamics control has " + std::to_string(c->dynamics->frames()) +
                                                                 " frames, latent expects " + std::to_string(frames));
      b.any_dynamics = true;
      for (std::size_t t = 0; t < frames; ++t) b.dynamics[n * frames + t] = T(normalize_db(c->dynamics->loudness_db[t], db_floor));
    }
  }
  return b;
}

/// Two strided (3,1) convolutions taking a control sequence [N,K,T,1] to a
/// hint map [N,hint,T/r,F/r]. No biases, so a zero control maps to zero.
template <class T>
struct ControlAdapter {
  nn::Conv2d<T> conv1, conv2;
  std::size_t hint = 0, width = 0;

  static ControlAdapter make(const nn::Builder<T>& b, std::size_t in, const BranchConfig& cfg) {
    const std::size_t s1 = cfg.ratio >= 2 ? 2 : 1, s2 = cfg.ratio / s1;
    detail::require(cfg.ratio >= 1 && s1 * s2 == cfg.ratio, "control ratio must be 1 or even");
    ControlAdapter a;
    a.hint = cfg.hint_channels;
    a.width = cfg.latent_width;
    a.conv1 = b.conv("conv1", in, cfg.hint_channels, 3, 1, {s1, 1, 1, 0}, nn::Init::FanIn, false);
    a.conv2 = b.conv("conv2", cfg.hint_channels, cfg.hint_channels * cfg.latent_width, 3, 1, {s2, 1, 1, 0}, nn::Init::FanIn, false);
    return a;
  }

  Var operator()(Tape<T>& tp, Var x) const {
    Var h = conv2(tp, nn::silu(tp, conv1(tp, x)));  // [N, hint*W, T/r, 1]
    const Shape s = tp.shape(h);
    h = nn::reshape(tp, h, {s[0], hint, width, s[2]});
    return nn::permute(tp, h, {0, 1, 3, 2});
  }
};

/// Trainable copy of the denoiser encoder plus the local-control input
/// path and per-level zero convolutions on its outputs.
template <class T>
class SControlBranch {
 public:
  SControlBranch() = default;

  /// Builds the branch under "branch." in the same store and copies every
  /// replicated tensor from `base_prefix`.
  SControlBranch(ParamStore<T>& store, Rng& rng, const diffusion::UNetConfig& ucfg, const BranchConfig& cfg,
                 const std::string& base_prefix = "base.")
      : cfg_(cfg), ucfg_(ucfg) {
    nn::Builder<T> b(store, rng, "branch.");
    enc_ = diffusion::EncoderBlocks<T>::make(b, ucfg);
    std::vector<std::string> copied;
    store.for_each([&](Param<T>& p) {
      if (p.name.rfind("branch.", 0) == 0) copied.push_back(p.name);
    });
    for (const auto& name : copied) {
      const std::string src = base_prefix + name.substr(7);
      detail::require(store.contains(src), "base model has no parameter " + src);
      auto& dst = store.get(name);
      dst.value = store.get(src).value;
    }
    norm_ = b.group_norm("inject.norm", ucfg.in_channels, 1);
    mel_ = ControlAdapter<T>::make(b.sub("inject.conv_mel"), kPitchClasses, cfg);
    dyn_ = ControlAdapter<T>::make(b.sub("inject.conv_dyn"), 1, cfg);
    z_in_ = b.conv("inject.z_in", cfg.hint_channels, ucfg.in_channels, 1, 1, {}, nn::Init::Zero, false);
    z_out_ = {b.conv("z_out0", ucfg.width0, ucfg.width0, 1, 1, {}, nn::Init::Zero),
              b.conv("z_out1", ucfg.width1, ucfg.width1, 1, 1, {}, nn::Init::Zero),
              b.conv("z_out_mid", ucfg.width1, ucfg.width1, 1, 1, {}, nn::Init::Zero)};
  }

  const BranchConfig& config() const { return cfg_; }
  diffusion::EncoderBlocks<T>& encoder() { return enc_; }
  std::vector<nn::CrossAttention<T>*> attention() { return enc_.attention(); }

  /// Names of parameters that exist only in the branch (not replicated).
  static bool is_new_layer(const std::string& name) {
    return name.rfind("branch.inject.", 0) == 0 || name.rfind("branch.z_out", 0) == 0;
  }

  /// norm(z) + Z_in(conv_mel(c_mel)) + Z_in(conv_dyn(c_dyn)). Absent inputs
  /// (Var{}) contribute nothing.
  Var inject_local(Tape<T>& tp, Var z, Var melody, Var dynamics) const {
    Var c = norm_(tp, z);
    const Shape zs = tp.shape(z);
    for (auto [ctl, adapter] : {std::pair{melody, &mel_}, std::pair{dynamics, &dyn_}}) {
      if (ctl.id < 0) continue;
      const Shape cs = tp.shape(ctl);
      detail::require_shape(cs.size() == 4 && cs[0] == zs[0] && cs[2] == zs[2] * cfg_.ratio && cs[3] == 1,
                            "control of shape " + shape_str(cs) + " does not align with latent " + shape_str(zs));
      Var h = z_in_(tp, (*adapter)(tp, ctl));
      detail::require_shape(tp.shape(h) == zs, "control hint shape " + shape_str(tp.shape(h)) + " != latent " + shape_str(zs));
      c = nn::add(tp, c, h);
    }
    return c;
  }

  /// One residual per down level plus the middle block.
  Residuals forward(Tape<T>& tp, Var z, const std::vector<std::size_t>& steps, Var context, Var melody,
                    Var dynamics) const {
    Var x = inject_local(tp, z, melody, dynamics);
    auto e = enc_(tp, x, steps, context);
    return {z_out_[0](tp, e.skip0), z_out_[1](tp, e.skip1), z_out_[2](tp, e.mid)};
  }

 private:
  BranchConfig cfg_;
  diffusion::UNetConfig ucfg_;
  diffusion::EncoderBlocks<T> enc_;
  nn::GroupNorm<T> norm_;
  ControlAdapter<T> mel_, dyn_;
  nn::Conv2d<T> z_in_;
  std::vector<nn::Conv2d<T>> z_out_;
};

}  // namespace scorediff::control
