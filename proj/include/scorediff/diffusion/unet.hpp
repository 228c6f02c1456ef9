#pragma once

#include <optional>
#include <vector>

#include "scorediff/nn/layers.hpp"

namespace scorediff::diffusion {

using nn::Param;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

struct UNetConfig {
  std::size_t in_channels = 1;
  std::size_t width0 = 32;
  std::size_t width1 = 64;
  std::size_t groups = 8;
  std::size_t time_freq_dim = 32;
  std::size_t time_dim = 128;
  std::size_t context_dim = 512;
};

/// Time MLP, input conv, two down levels and the middle block. The base
/// denoiser and the control branch each own one copy.
template <class T>
struct EncoderBlocks {
  nn::Linear<T> time1, time2;
  nn::Conv2d<T> conv_in;
  nn::ResBlock<T> res0;
  nn::Conv2d<T> down;
  nn::ResBlock<T> res1;
  nn::CrossAttention<T> attn1;
  nn::ResBlock<T> res_mid;
  nn::CrossAttention<T> attn_mid;
  UNetConfig cfg;

  struct Out {
    Var temb_act, skip0, skip1, mid;
  };

  static EncoderBlocks make(const nn::Builder<T>& b, const UNetConfig& c) {
    EncoderBlocks e;
    e.cfg = c;
    e.time1 = b.linear("time.l1", c.time_freq_dim, c.time_dim);
    e.time2 = b.linear("time.l2", c.time_dim, c.time_dim);
    e.conv_in = b.conv3x3("conv_in", c.in_channels, c.width0);
    e.res0 = nn::ResBlock<T>::make(b.sub("down0.res"), c.width0, c.width0, c.time_dim, c.groups);
    e.down = b.conv3x3("down0.down", c.width0, c.width0, 2);
    e.res1 = nn::ResBlock<T>::make(b.sub("down1.res"), c.width0, c.width1, c.time_dim, c.groups);
    e.attn1 = nn::CrossAttention<T>::make(b.sub("down1.attn"), c.width1, c.context_dim, c.groups);
    e.res_mid = nn::ResBlock<T>::make(b.sub("mid.res"), c.width1, c.width1, c.time_dim, c.groups);
    e.attn_mid = nn::CrossAttention<T>::make(b.sub("mid.attn"), c.width1, c.context_dim, c.groups);
    return e;
  }

  Var time_embedding(Tape<T>& tp, const std::vector<std::size_t>& steps) const {
    Var t = tp.constant(nn::timestep_embedding<T>(steps, cfg.time_freq_dim));
    return nn::silu(tp, time2(tp, nn::silu(tp, time1(tp, t))));
  }

  /// `x` is the block input before conv_in. Skips are taken after each
  /// down level (before downsampling on level 0).
  Out operator()(Tape<T>& tp, Var x, const std::vector<std::size_t>& steps, Var context) const {
    Out o;
    o.temb_act = time_embedding(tp, steps);
    Var h = conv_in(tp, x);
    o.skip0 = res0(tp, h, o.temb_act);
    h = down(tp, o.skip0);
    o.skip1 = attn1(tp, res1(tp, h, o.temb_act), context);
    o.mid = attn_mid(tp, res_mid(tp, o.skip1, o.temb_act), context);
    return o;
  }

  std::vector<nn::CrossAttention<T>*> attention() { return {&attn1, &attn_mid}; }
};

/// Two up levels consuming the encoder skips, then the zero-initialised
/// output head.
template <class T>
struct DecoderBlocks {
  nn::ResBlock<T> res_up1;
  nn::CrossAttention<T> attn_up1;
  nn::Conv2d<T> up_conv;
  nn::ResBlock<T> res_up0;
  nn::GroupNorm<T> out_norm;
  nn::Conv2d<T> out_conv;

  static DecoderBlocks make(const nn::Builder<T>& b, const UNetConfig& c) {
    DecoderBlocks d;
    d.res_up1 = nn::ResBlock<T>::make(b.sub("up1.res"), 2 * c.width1, c.width1, c.time_dim, c.groups);
    d.attn_up1 = nn::CrossAttention<T>::make(b.sub("up1.attn"), c.width1, c.context_dim, c.groups);
    d.up_conv = b.conv3x3("up1.up", c.width1, c.width0);
    d.res_up0 = nn::ResBlock<T>::make(b.sub("up0.res"), 2 * c.width0, c.width0, c.time_dim, c.groups);
    d.out_norm = b.group_norm("out.norm", c.width0, nn::norm_groups(c.width0, c.groups));
    d.out_conv = b.conv3x3("out.conv", c.width0, c.in_channels, 1, nn::Init::Zero);
    return d;
  }

  Var operator()(Tape<T>& tp, const typename EncoderBlocks<T>::Out& e, Var context) const {
    Var h = nn::concat_channels(tp, e.mid, e.skip1);
    h = attn_up1(tp, res_up1(tp, h, e.temb_act), context);
    h = up_conv(tp, nn::upsample_nearest(tp, h, 2, 2));
    h = res_up0(tp, nn::concat_channels(tp, h, e.skip0), e.temb_act);
    return out_conv(tp, nn::silu(tp, out_norm(tp, h)));
  }
};

/// Residuals added to skip0, skip1 and the middle output, in that order.
using Residuals = std::vector<Var>;

/// Noise-prediction UNet with cross-attention on a single context token.
template <class T>
class UNet {
 public:
  UNet() = default;

  UNet(ParamStore<T>& store, Rng& rng, const UNetConfig& cfg, const std::string& prefix = "base.") : cfg_(cfg) {
    nn::Builder<T> b(store, rng, prefix);
    enc_ = EncoderBlocks<T>::make(b, cfg);
    dec_ = DecoderBlocks<T>::make(b, cfg);
    null_ = &b.tensor("null_context", rng.normal_tensor<T>({1, 1, cfg.context_dim}, 0.1));
  }

  const UNetConfig& config() const { return cfg_; }
  EncoderBlocks<T>& encoder() { return enc_; }
  const EncoderBlocks<T>& encoder() const { return enc_; }
  std::vector<nn::CrossAttention<T>*> attention() { return {&enc_.attn1, &enc_.attn_mid, &dec_.attn_up1}; }

  void check_input(const Shape& s) const {
    detail::require_shape(s.size() == 4 && s[1] == cfg_.in_channels, "latent must be [N," + std::to_string(cfg_.in_channels) + ",H,W], got " + shape_str(s));
    detail::require_shape(s[2] % 2 == 0 && s[3] % 2 == 0 && s[2] && s[3], "latent height and width must be even");
  }

  /// Replaces context rows with the learned null token where `use_null`.
  Var context(Tape<T>& tp, Var ctx, const std::vector<bool>& use_null) const {
    return nn::select_null(tp, ctx, tp.param(*null_), use_null);
  }
  Var null_context(Tape<T>& tp, std::size_t n) const {
    Var z = tp.constant(Tensor<T>({n, 1, cfg_.context_dim}));
    return nn::select_null(tp, z, tp.param(*null_), std::vector<bool>(n, true));
  }

  Var forward(Tape<T>& tp, Var z, const std::vector<std::size_t>& steps, Var context,
              const Residuals* residuals = nullptr) const {
    check_input(tp.shape(z));
    detail::require_shape(steps.size() == tp.shape(z)[0], "one diffusion step per batch item required");
    auto e = enc_(tp, z, steps, context);
    if (residuals) {
      detail::require_shape(residuals->size() == 3, "expected three control residuals");
      e.skip0 = nn::add(tp, e.skip0, (*residuals)[0]);
      e.skip1 = nn::add(tp, e.skip1, (*residuals)[1]);
      e.mid = nn::add(tp, e.mid, (*residuals)[2]);
    }
    return dec_(tp, e, context);
  }

 private:
  UNetConfig cfg_;
  EncoderBlocks<T> enc_;
  DecoderBlocks<T> dec_;
  Param<T>* null_ = nullptr;
};

}  // namespace scorediff::diffusion
