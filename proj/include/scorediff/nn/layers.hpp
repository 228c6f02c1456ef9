#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "scorediff/nn/ops.hpp"

namespace scorediff::nn {

enum class Init { FanIn, Zero };

/// Low-rank update attached to a Linear layer: y = W0 x + alpha * B (A x),
/// with A[rank, in] and B[out, rank]. While merged, the update lives inside
/// W0 and the adapter is bypassed.
template <class T>
struct LoraAdapter {
  std::string target;
  Param<T>* A = nullptr;
  Param<T>* B = nullptr;
  std::size_t rank = 0;
  T alpha = T(1);
  bool merged = false;
};

template <class T>
struct Linear {
  std::string name;
  Param<T>* w = nullptr;  // [out, in]
  Param<T>* b = nullptr;
  LoraAdapter<T>* lora = nullptr;
  std::size_t in = 0, out = 0;

  Var operator()(Tape<T>& tp, Var x) const {
    Var y = linear(tp, x, tp.param(*w), b ? tp.param(*b) : Var{});
    if (lora && !lora->merged) {
      Var h = linear(tp, x, tp.param(*lora->A));
      Var d = linear(tp, h, tp.param(*lora->B));
      y = add(tp, y, scale(tp, d, lora->alpha));
    }
    return y;
  }
};

template <class T>
struct Conv2d {
  Param<T>* w = nullptr;  // [out, in, kh, kw]
  Param<T>* b = nullptr;
  ConvSpec spec;

  Var operator()(Tape<T>& tp, Var x) const { return conv2d(tp, x, tp.param(*w), b ? tp.param(*b) : Var{}, spec); }
  std::size_t out_channels() const { return w->value.dim(0); }
};

template <class T>
struct GroupNorm {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
  std::size_t groups = 1;

  Var operator()(Tape<T>& tp, Var x) const { return group_norm(tp, x, tp.param(*gamma), tp.param(*beta), groups); }
};

/// Creates layers inside a ParamStore under a name prefix.
template <class T>
class Builder {
 public:
  Builder(ParamStore<T>& store, Rng& rng, std::string prefix) : store_(store), rng_(rng), prefix_(std::move(prefix)) {}

  Builder sub(const std::string& name) const { return Builder(store_, rng_, prefix_ + name + "."); }
  const std::string& prefix() const { return prefix_; }
  ParamStore<T>& store() const { return store_; }
  Rng& rng() const { return rng_; }

  Conv2d<T> conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw,
                 ConvSpec spec, Init init = Init::FanIn, bool bias = true) const {
    Conv2d<T> c;
    const Shape shape{cout, cin, kh, kw};
    c.w = &store_.add(prefix_ + name + ".w", init == Init::Zero ? Tensor<T>(shape) : fan_in_normal<T>(rng_, shape, cin * kh * kw));
    if (bias) c.b = &store_.add(prefix_ + name + ".b", Tensor<T>({cout}));
    c.spec = spec;
    return c;
  }

  Conv2d<T> conv3x3(const std::string& name, std::size_t cin, std::size_t cout, std::size_t stride = 1,
                    Init init = Init::FanIn) const {
    return conv(name, cin, cout, 3, 3, {stride, stride, 1, 1}, init);
  }

  Linear<T> linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true,
                   Init init = Init::FanIn) const {
    Linear<T> l;
    l.name = prefix_ + name;
    l.in = in;
    l.out = out;
    l.w = &store_.add(l.name + ".w", init == Init::Zero ? Tensor<T>({out, in}) : fan_in_normal<T>(rng_, {out, in}, in));
    if (bias) l.b = &store_.add(l.name + ".b", Tensor<T>({out}));
    return l;
  }

  GroupNorm<T> group_norm(const std::string& name, std::size_t channels, std::size_t groups) const {
    detail::require(channels % groups == 0, "group count must divide channel count");
    GroupNorm<T> g;
    g.gamma = &store_.add(prefix_ + name + ".gamma", Tensor<T>({channels}, T(1)));
    g.beta = &store_.add(prefix_ + name + ".beta", Tensor<T>({channels}));
    g.groups = groups;
    return g;
  }

  Param<T>& tensor(const std::string& name, Tensor<T> init, bool trainable = true) const {
    return store_.add(prefix_ + name, std::move(init), trainable);
  }

 private:
  ParamStore<T>& store_;
  Rng& rng_;
  std::string prefix_;
};

inline std::size_t norm_groups(std::size_t channels, std::size_t preferred) {
  std::size_t g = std::min(preferred, channels);
  while (channels % g) --g;
  return g;
}

/// GroupNorm -> SiLU -> conv, twice, with the time embedding added between
/// and a 1x1 projection on the skip path when widths differ.
template <class T>
struct ResBlock {
  GroupNorm<T> norm1, norm2;
  Conv2d<T> conv1, conv2;
  Linear<T> time_proj;
  std::optional<Conv2d<T>> skip;

  static ResBlock make(const Builder<T>& b, std::size_t cin, std::size_t cout, std::size_t time_dim, std::size_t groups) {
    ResBlock r;
    r.norm1 = b.group_norm("norm1", cin, norm_groups(cin, groups));
    r.conv1 = b.conv3x3("conv1", cin, cout);
    r.time_proj = b.linear("time_proj", time_dim, cout);
    r.norm2 = b.group_norm("norm2", cout, norm_groups(cout, groups));
    r.conv2 = b.conv3x3("conv2", cout, cout);
    if (cin != cout) r.skip = b.conv("skip", cin, cout, 1, 1, {});
    return r;
  }

  /// `temb_act` is SiLU(time embedding), shape [N, time_dim].
  Var operator()(Tape<T>& tp, Var x, Var temb_act) const {
    Var h = conv1(tp, silu(tp, norm1(tp, x)));
    h = add_channel_bias(tp, h, time_proj(tp, temb_act));
    h = conv2(tp, silu(tp, norm2(tp, h)));
    return add(tp, skip ? (*skip)(tp, x) : x, h);
  }
};

/// Single-head cross-attention from spatial positions (queries) to context
/// tokens (keys/values), added residually: x + W_o softmax(QK^T/sqrt(d)) V.
template <class T>
struct CrossAttention {
  GroupNorm<T> norm;
  Linear<T> q, k, v, o;
  std::size_t channels = 0;

  static CrossAttention make(const Builder<T>& b, std::size_t channels, std::size_t context_dim, std::size_t groups) {
    CrossAttention a;
    a.channels = channels;
    a.norm = b.group_norm("norm", channels, norm_groups(channels, groups));
    a.q = b.linear("to_q", channels, channels, false);
    a.k = b.linear("to_k", context_dim, channels, false);
    a.v = b.linear("to_v", context_dim, channels, false);
    a.o = b.linear("to_out", channels, channels);
    return a;
  }

  std::vector<Linear<T>*> projections() { return {&q, &k, &v, &o}; }

  /// x[N,C,H,W], context[N,S,D] -> [N,C,H,W].
  Var operator()(Tape<T>& tp, Var x, Var context) const {
    const Shape xs = tp.shape(x);
    const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    Var tokens = reshape(tp, norm(tp, x), {N, C, H * W});
    tokens = permute(tp, tokens, {0, 2, 1});  // [N, HW, C]
    Var Q = q(tp, tokens);
    Var K = k(tp, context);
    Var V = v(tp, context);
    Var scores = scale(tp, batched_matmul(tp, Q, K, true), T(1.0 / std::sqrt(double(C))));
    Var attn = softmax_last(tp, scores);  // [N, HW, S]
    Var mixed = o(tp, batched_matmul(tp, attn, V, false));  // [N, HW, C]
    Var back = reshape(tp, permute(tp, mixed, {0, 2, 1}), {N, C, H, W});
    return add(tp, x, back);
  }
};

/// Sinusoidal embedding of integer diffusion steps, [N, dim].
template <class T>
Tensor<T> timestep_embedding(const std::vector<std::size_t>& steps, std::size_t dim) {
  detail::require(dim % 2 == 0, "timestep embedding dim must be even");
  Tensor<T> out({steps.size(), dim});
  const std::size_t half = dim / 2;
  for (std::size_t n = 0; n < steps.size(); ++n)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
      out[n * dim + i] = T(std::sin(double(steps[n]) * freq));
      out[n * dim + half + i] = T(std::cos(double(steps[n]) * freq));
    }
  return out;
}

}  // namespace scorediff::nn
