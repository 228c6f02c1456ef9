#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include "scorediff/nn/tape.hpp"

namespace scorediff::nn {

// Differentiable primitives. Each op computes its output from the input
// values, then registers a closure that reads the output gradient and adds
// into the input gradients. `Var{}` (id -1) marks an absent optional input.

namespace detail {
using scorediff::detail::require;
using scorediff::detail::require_shape;

template <class T>
Var emit(Tape<T>& tp, Tensor<T> out, bool rg, std::function<void(const Tensor<T>&)> bw) {
  const Var o{int(tp.size())};
  if (!rg) return tp.push(std::move(out), false, nullptr);
  return tp.push(std::move(out), true, [&tp, o, bw = std::move(bw)] { bw(tp.grad(o)); });
}
}  // namespace detail

template <class T>
Var add(Tape<T>& tp, Var a, Var b) {
  const auto& va = tp.value(a);
  const auto& vb = tp.value(b);
  detail::require_shape(va.shape() == vb.shape(),
                        "add shape mismatch " + shape_str(va.shape()) + " vs " + shape_str(vb.shape()));
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({a, b}), [&tp, a, b](const Tensor<T>& g) {
    for (Var v : {a, b})
      if (tp.requires_grad(v)) {
        auto& gv = tp.grad_ref(v);
        for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
      }
  });
}

template <class T>
Var scale(Tape<T>& tp, Var x, T s) {
  Tensor<T> out = tp.value(x);
  for (auto& v : out.values()) v *= s;
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x}), [&tp, x, s](const Tensor<T>& g) {
    auto& gx = tp.grad_ref(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

/// x[N,C,...] + e[N,C] broadcast over the trailing dimensions.
template <class T>
Var add_channel_bias(Tape<T>& tp, Var x, Var e) {
  const auto& vx = tp.value(x);
  const auto& ve = tp.value(e);
  detail::require_shape(vx.rank() >= 2 && ve.rank() == 2 && ve.dim(0) == vx.dim(0) && ve.dim(1) == vx.dim(1),
                        "add_channel_bias shape mismatch");
  const std::size_t nc = ve.size(), inner = vx.size() / nc;
  Tensor<T> out = vx;
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t j = 0; j < inner; ++j) out[i * inner + j] += ve[i];
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x, e}), [&tp, x, e, nc, inner](const Tensor<T>& g) {
    if (tp.requires_grad(x)) {
      auto& gx = tp.grad_ref(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad(e)) {
      auto& ge = tp.grad_ref(e);
      for (std::size_t i = 0; i < nc; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < inner; ++j) acc += g[i * inner + j];
        ge[i] += acc;
      }
    }
  });
}

template <class T>
Var silu(Tape<T>& tp, Var x) {
  const auto& vx = tp.value(x);
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < vx.size(); ++i) out[i] = vx[i] / (T(1) + std::exp(-vx[i]));
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x}), [&tp, x](const Tensor<T>& g) {
    const auto& vx = tp.value(x);
    auto& gx = tp.grad_ref(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-vx[i]));
      gx[i] += g[i] * s * (T(1) + vx[i] * (T(1) - s));
    }
  });
}

/// Mean squared error over all elements, returned as a scalar.
template <class T>
Var mse(Tape<T>& tp, Var pred, Var target) {
  const auto& p = tp.value(pred);
  const auto& t = tp.value(target);
  detail::require_shape(p.shape() == t.shape(), "mse shape mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += double(p[i] - t[i]) * double(p[i] - t[i]);
  Tensor<T> out({1}, T(acc / double(p.size())));
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({pred, target}), [&tp, pred, target](const Tensor<T>& g) {
    const auto& p = tp.value(pred);
    const auto& t = tp.value(target);
    const T k = T(2) * g[0] / T(p.size());
    if (tp.requires_grad(pred)) {
      auto& gp = tp.grad_ref(pred);
      for (std::size_t i = 0; i < p.size(); ++i) gp[i] += k * (p[i] - t[i]);
    }
    if (tp.requires_grad(target)) {
      auto& gt = tp.grad_ref(target);
      for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= k * (p[i] - t[i]);
    }
  });
}

struct ConvSpec {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

namespace detail {

struct ConvGeom {
  std::size_t C, H, W, O, KH, KW, HO, WO;
  ConvSpec s;
  bool pointwise() const { return KH == 1 && KW == 1 && s.stride_h == 1 && s.stride_w == 1 && s.pad_h == 0 && s.pad_w == 0; }
  std::size_t ck() const { return C * KH * KW; }
  std::size_t p() const { return HO * WO; }
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ki = 0; ki < g.KH; ++ki)
      for (std::size_t kj = 0; kj < g.KW; ++kj) {
        T* row = col + ((c * g.KH + ki) * g.KW + kj) * g.p();
        for (std::size_t oh = 0; oh < g.HO; ++oh) {
          const auto ih = std::ptrdiff_t(oh * g.s.stride_h + ki) - std::ptrdiff_t(g.s.pad_h);
          T* r = row + oh * g.WO;
          if (ih < 0 || ih >= std::ptrdiff_t(g.H)) {
            std::fill(r, r + g.WO, T(0));
            continue;
          }
          const T* src = x + (c * g.H + std::size_t(ih)) * g.W;
          for (std::size_t ow = 0; ow < g.WO; ++ow) {
            const auto iw = std::ptrdiff_t(ow * g.s.stride_w + kj) - std::ptrdiff_t(g.s.pad_w);
            r[ow] = (iw < 0 || iw >= std::ptrdiff_t(g.W)) ? T(0) : src[iw];
          }
        }
      }
}

template <class T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ki = 0; ki < g.KH; ++ki)
      for (std::size_t kj = 0; kj < g.KW; ++kj) {
        const T* row = col + ((c * g.KH + ki) * g.KW + kj) * g.p();
        for (std::size_t oh = 0; oh < g.HO; ++oh) {
          const auto ih = std::ptrdiff_t(oh * g.s.stride_h + ki) - std::ptrdiff_t(g.s.pad_h);
          if (ih < 0 || ih >= std::ptrdiff_t(g.H)) continue;
          T* dst = x + (c * g.H + std::size_t(ih)) * g.W;
          const T* r = row + oh * g.WO;
          for (std::size_t ow = 0; ow < g.WO; ++ow) {
            const auto iw = std::ptrdiff_t(ow * g.s.stride_w + kj) - std::ptrdiff_t(g.s.pad_w);
            if (iw >= 0 && iw < std::ptrdiff_t(g.W)) dst[iw] += r[ow];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution (cross-correlation). x[N,C,H,W], w[O,C,KH,KW], b[O] optional.
template <class T>
Var conv2d(Tape<T>& tp, Var x, Var w, Var b, ConvSpec spec) {
  const auto& vx = tp.value(x);
  const auto& vw = tp.value(w);
  detail::require_shape(vx.rank() == 4 && vw.rank() == 4 && vw.dim(1) == vx.dim(1),
                        "conv2d shape mismatch: x " + shape_str(vx.shape()) + " w " + shape_str(vw.shape()));
  detail::ConvGeom g{vx.dim(1), vx.dim(2), vx.dim(3), vw.dim(0), vw.dim(2), vw.dim(3), 0, 0, spec};
  detail::require_shape(g.H + 2 * spec.pad_h >= g.KH && g.W + 2 * spec.pad_w >= g.KW, "conv2d kernel larger than input");
  g.HO = (g.H + 2 * spec.pad_h - g.KH) / spec.stride_h + 1;
  g.WO = (g.W + 2 * spec.pad_w - g.KW) / spec.stride_w + 1;
  const std::size_t N = vx.dim(0);
  Tensor<T> out({N, g.O, g.HO, g.WO});
  std::vector<T> col(g.pointwise() ? 0 : g.ck() * g.p());
  const T* bias = b.valid() ? tp.value(b).data() : nullptr;
  for (std::size_t n = 0; n < N; ++n) {
    const T* xn = vx.data() + n * g.C * g.H * g.W;
    const T* src = xn;
    if (!g.pointwise()) {
      detail::im2col(xn, g, col.data());
      src = col.data();
    }
    T* yn = out.data() + n * g.O * g.p();
    detail::gemm(vw.data(), false, src, false, yn, g.O, g.p(), g.ck(), false);
    if (bias)
      for (std::size_t o = 0; o < g.O; ++o)
        for (std::size_t q = 0; q < g.p(); ++q) yn[o * g.p() + q] += bias[o];
  }
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x, w, b}), [&tp, x, w, b, g, N](const Tensor<T>& gy) {
    const auto& vx = tp.value(x);
    const auto& vw = tp.value(w);
    const bool gx_needed = tp.requires_grad(x), gw_needed = tp.requires_grad(w), gb_needed = tp.requires_grad(b);
    std::vector<T> col(g.pointwise() ? 0 : g.ck() * g.p());
    std::vector<T> dcol(g.pointwise() ? 0 : g.ck() * g.p());
    for (std::size_t n = 0; n < N; ++n) {
      const T* dy = gy.data() + n * g.O * g.p();
      const T* xn = vx.data() + n * g.C * g.H * g.W;
      if (gw_needed) {
        const T* src = xn;
        if (!g.pointwise()) {
          detail::im2col(xn, g, col.data());
          src = col.data();
        }
        detail::gemm(dy, false, src, true, tp.grad_ref(w).data(), g.O, g.ck(), g.p(), true);
      }
      if (gb_needed) {
        auto& gb = tp.grad_ref(b);
        for (std::size_t o = 0; o < g.O; ++o) {
          T acc = 0;
          for (std::size_t q = 0; q < g.p(); ++q) acc += dy[o * g.p() + q];
          gb[o] += acc;
        }
      }
      if (gx_needed) {
        T* dx = tp.grad_ref(x).data() + n * g.C * g.H * g.W;
        if (g.pointwise()) {
          detail::gemm(vw.data(), true, dy, false, dx, g.ck(), g.p(), g.O, true);
        } else {
          detail::gemm(vw.data(), true, dy, false, dcol.data(), g.ck(), g.p(), g.O, false);
          detail::col2im(dcol.data(), g, dx);
        }
      }
    }
  });
}

/// Nearest-neighbour upsampling of x[N,C,H,W] by integer factors.
template <class T>
Var upsample_nearest(Tape<T>& tp, Var x, std::size_t fh, std::size_t fw) {
  const auto& vx = tp.value(x);
  detail::require_shape(vx.rank() == 4, "upsample expects a rank-4 tensor");
  const std::size_t NC = vx.dim(0) * vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  Tensor<T> out({vx.dim(0), vx.dim(1), H * fh, W * fw});
  for (std::size_t i = 0; i < NC; ++i)
    for (std::size_t h = 0; h < H * fh; ++h)
      for (std::size_t w = 0; w < W * fw; ++w) out[(i * H * fh + h) * W * fw + w] = vx[(i * H + h / fh) * W + w / fw];
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x}), [&tp, x, NC, H, W, fh, fw](const Tensor<T>& g) {
    auto& gx = tp.grad_ref(x);
    for (std::size_t i = 0; i < NC; ++i)
      for (std::size_t h = 0; h < H * fh; ++h)
        for (std::size_t w = 0; w < W * fw; ++w) gx[(i * H + h / fh) * W + w / fw] += g[(i * H * fh + h) * W * fw + w];
  });
}

/// Group normalisation over x[N,C,...] with per-channel affine gamma, beta.
template <class T>
Var group_norm(Tape<T>& tp, Var x, Var gamma, Var beta, std::size_t groups, T eps = T(1e-5)) {
  const auto& vx = tp.value(x);
  detail::require_shape(vx.rank() >= 2 && vx.dim(1) % groups == 0, "group_norm channels not divisible by groups");
  const std::size_t N = vx.dim(0), C = vx.dim(1), S = vx.size() / (N * C), cpg = C / groups;
  const std::size_t gsize = cpg * S;
  auto stats = std::make_shared<std::vector<T>>(2 * N * groups);  // mean, rstd
  Tensor<T> out(vx.shape());
  const auto& vg = tp.value(gamma);
  const auto& vb = tp.value(beta);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const T* src = vx.data() + (n * C + gi * cpg) * S;
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < gsize; ++i) mean += src[i];
      mean /= double(gsize);
      for (std::size_t i = 0; i < gsize; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= double(gsize);
      const T rstd = T(1.0 / std::sqrt(var + double(eps)));
      (*stats)[2 * (n * groups + gi)] = T(mean);
      (*stats)[2 * (n * groups + gi) + 1] = rstd;
      T* dst = out.data() + (n * C + gi * cpg) * S;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = gi * cpg + c;
        for (std::size_t i = 0; i < S; ++i)
          dst[c * S + i] = (src[c * S + i] - T(mean)) * rstd * vg[ch] + vb[ch];
      }
    }
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x, gamma, beta}),
                         [&tp, x, gamma, beta, stats, N, C, S, groups, cpg, gsize](const Tensor<T>& g) {
    const auto& vx = tp.value(x);
    const auto& vg = tp.value(gamma);
    Tensor<T>* gx = tp.requires_grad(x) ? &tp.grad_ref(x) : nullptr;
    Tensor<T>* gg = tp.requires_grad(gamma) ? &tp.grad_ref(gamma) : nullptr;
    Tensor<T>* gb = tp.requires_grad(beta) ? &tp.grad_ref(beta) : nullptr;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const T mean = (*stats)[2 * (n * groups + gi)], rstd = (*stats)[2 * (n * groups + gi) + 1];
        const std::size_t base = (n * C + gi * cpg) * S;
        double sum_dxh = 0, sum_dxh_xh = 0;
        for (std::size_t c = 0; c < cpg; ++c) {
          const std::size_t ch = gi * cpg + c;
          double dg = 0, db = 0;
          for (std::size_t i = 0; i < S; ++i) {
            const std::size_t k = base + c * S + i;
            const T xh = (vx[k] - mean) * rstd;
            dg += g[k] * xh;
            db += g[k];
            const T dxh = g[k] * vg[ch];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
          }
          if (gg) (*gg)[ch] += T(dg);
          if (gb) (*gb)[ch] += T(db);
        }
        if (!gx) continue;
        const T m1 = T(sum_dxh / double(gsize)), m2 = T(sum_dxh_xh / double(gsize));
        for (std::size_t c = 0; c < cpg; ++c) {
          const std::size_t ch = gi * cpg + c;
          for (std::size_t i = 0; i < S; ++i) {
            const std::size_t k = base + c * S + i;
            const T xh = (vx[k] - mean) * rstd;
            (*gx)[k] += rstd * (g[k] * vg[ch] - m1 - xh * m2);
          }
        }
      }
  });
}

/// y = x W^T + b over the last axis, with W[out,in]. With `weight_in_out`
/// set, W is stored [in,out] and y = x W.
template <class T>
Var linear(Tape<T>& tp, Var x, Var w, Var b = Var{}, bool weight_in_out = false) {
  const auto& vx = tp.value(x);
  const auto& vw = tp.value(w);
  detail::require_shape(vw.rank() == 2 && vx.rank() >= 1, "linear expects a matrix weight");
  const std::size_t K = vx.shape().back();
  const std::size_t O = weight_in_out ? vw.dim(1) : vw.dim(0);
  detail::require_shape((weight_in_out ? vw.dim(0) : vw.dim(1)) == K,
                        "linear input width mismatch: x " + shape_str(vx.shape()) + " w " + shape_str(vw.shape()));
  const std::size_t R = vx.size() / K;
  Shape os = vx.shape();
  os.back() = O;
  Tensor<T> out(os);
  detail::gemm(vx.data(), false, vw.data(), !weight_in_out, out.data(), R, O, K, false);
  if (b.valid()) {
    const auto& vb = tp.value(b);
    detail::require_shape(vb.size() == O, "linear bias size mismatch");
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t o = 0; o < O; ++o) out[r * O + o] += vb[o];
  }
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x, w, b}), [&tp, x, w, b, R, O, K, weight_in_out](const Tensor<T>& g) {
    if (tp.requires_grad(x))
      detail::gemm(g.data(), false, tp.value(w).data(), weight_in_out, tp.grad_ref(x).data(), R, K, O, true);
    if (tp.requires_grad(w)) {
      if (weight_in_out) detail::gemm(tp.value(x).data(), true, g.data(), false, tp.grad_ref(w).data(), K, O, R, true);
      else detail::gemm(g.data(), true, tp.value(x).data(), false, tp.grad_ref(w).data(), O, K, R, true);
    }
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad_ref(b);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t o = 0; o < O; ++o) gb[o] += g[r * O + o];
    }
  });
}

/// Batched product a[N,L,K] * b[N,K,S] (or b[N,S,K] transposed) -> [N,L,S].
template <class T>
Var batched_matmul(Tape<T>& tp, Var a, Var b, bool transpose_b) {
  const auto& va = tp.value(a);
  const auto& vb = tp.value(b);
  detail::require_shape(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0), "batched_matmul expects rank-3 operands");
  const std::size_t N = va.dim(0), L = va.dim(1), K = va.dim(2);
  const std::size_t S = transpose_b ? vb.dim(1) : vb.dim(2);
  detail::require_shape((transpose_b ? vb.dim(2) : vb.dim(1)) == K, "batched_matmul inner size mismatch");
  Tensor<T> out({N, L, S});
  for (std::size_t n = 0; n < N; ++n)
    detail::gemm(va.data() + n * L * K, false, vb.data() + n * K * S, transpose_b, out.data() + n * L * S, L, S, K, false);
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({a, b}), [&tp, a, b, N, L, K, S, transpose_b](const Tensor<T>& g) {
    for (std::size_t n = 0; n < N; ++n) {
      const T* gn = g.data() + n * L * S;
      if (tp.requires_grad(a))
        detail::gemm(gn, false, tp.value(b).data() + n * K * S, !transpose_b, tp.grad_ref(a).data() + n * L * K, L, K, S, true);
      if (tp.requires_grad(b)) {
        if (transpose_b)
          detail::gemm(gn, true, tp.value(a).data() + n * L * K, false, tp.grad_ref(b).data() + n * K * S, S, K, L, true);
        else
          detail::gemm(tp.value(a).data() + n * L * K, true, gn, false, tp.grad_ref(b).data() + n * K * S, K, S, L, true);
      }
    }
  });
}

/// Softmax over the last axis.
template <class T>
Var softmax_last(Tape<T>& tp, Var x) {
  const auto& vx = tp.value(x);
  const std::size_t S = vx.shape().back(), R = vx.size() / S;
  Tensor<T> out(vx.shape());
  for (std::size_t r = 0; r < R; ++r) {
    const T* src = vx.data() + r * S;
    T* dst = out.data() + r * S;
    const T mx = *std::max_element(src, src + S);
    T sum = 0;
    for (std::size_t s = 0; s < S; ++s) sum += (dst[s] = std::exp(src[s] - mx));
    for (std::size_t s = 0; s < S; ++s) dst[s] /= sum;
  }
  const Var o{int(tp.size())};
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x}), [&tp, x, o, R, S](const Tensor<T>& g) {
    const auto& y = tp.value(o);
    auto& gx = tp.grad_ref(x);
    for (std::size_t r = 0; r < R; ++r) {
      T dot = 0;
      for (std::size_t s = 0; s < S; ++s) dot += g[r * S + s] * y[r * S + s];
      for (std::size_t s = 0; s < S; ++s) gx[r * S + s] += y[r * S + s] * (g[r * S + s] - dot);
    }
  });
}

template <class T>
Var reshape(Tape<T>& tp, Var x, Shape shape) {
  Tensor<T> out = tp.value(x).reshaped(std::move(shape));
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x}), [&tp, x](const Tensor<T>& g) {
    auto& gx = tp.grad_ref(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

namespace detail {

// Maps each output flat index to its source flat index for a permutation.
inline std::vector<std::size_t> permutation_index(const Shape& in, const std::vector<std::size_t>& perm, Shape& out_shape) {
  const std::size_t r = in.size();
  out_shape.resize(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[perm[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  std::vector<std::size_t> idx(shape_size(in)), coord(r, 0);
  for (std::size_t flat = 0; flat < idx.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += coord[i] * in_stride[perm[i]];
    idx[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++coord[i] < out_shape[i]) break;
      coord[i] = 0;
    }
  }
  return idx;
}

}  // namespace detail

/// Axis permutation: output axis i is input axis perm[i].
template <class T>
Var permute(Tape<T>& tp, Var x, const std::vector<std::size_t>& perm) {
  const auto& vx = tp.value(x);
  detail::require_shape(perm.size() == vx.rank(), "permute rank mismatch");
  Shape os;
  auto idx = std::make_shared<std::vector<std::size_t>>(detail::permutation_index(vx.shape(), perm, os));
  Tensor<T> out(os);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[(*idx)[i]];
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x}), [&tp, x, idx](const Tensor<T>& g) {
    auto& gx = tp.grad_ref(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*idx)[i]] += g[i];
  });
}

/// Concatenation along axis 1.
template <class T>
Var concat_channels(Tape<T>& tp, Var a, Var b) {
  const auto& va = tp.value(a);
  const auto& vb = tp.value(b);
  detail::require_shape(va.rank() == vb.rank() && va.rank() >= 2 && va.dim(0) == vb.dim(0), "concat rank mismatch");
  for (std::size_t i = 2; i < va.rank(); ++i) detail::require_shape(va.dim(i) == vb.dim(i), "concat trailing shape mismatch");
  const std::size_t N = va.dim(0), ia = va.size() / N, ib = vb.size() / N;
  Shape os = va.shape();
  os[1] += vb.dim(1);
  Tensor<T> out(os);
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(va.data() + n * ia, ia, out.data() + n * (ia + ib));
    std::copy_n(vb.data() + n * ib, ib, out.data() + n * (ia + ib) + ia);
  }
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({a, b}), [&tp, a, b, N, ia, ib](const Tensor<T>& g) {
    for (std::size_t n = 0; n < N; ++n) {
      if (tp.requires_grad(a)) {
        T* d = tp.grad_ref(a).data() + n * ia;
        for (std::size_t i = 0; i < ia; ++i) d[i] += g[n * (ia + ib) + i];
      }
      if (tp.requires_grad(b)) {
        T* d = tp.grad_ref(b).data() + n * ib;
        for (std::size_t i = 0; i < ib; ++i) d[i] += g[n * (ia + ib) + ia + i];
      }
    }
  });
}

/// Row lookup: table[K,D] at `rows` -> [rows.size(), D].
template <class T>
Var gather_rows(Tape<T>& tp, Var table, std::vector<std::size_t> rows) {
  const auto& vt = tp.value(table);
  detail::require_shape(vt.rank() == 2, "gather_rows expects a matrix");
  const std::size_t K = vt.dim(0), D = vt.dim(1);
  for (auto r : rows) detail::require(r < K, "gather_rows index out of range");
  Tensor<T> out({rows.size(), D});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(vt.data() + rows[i] * D, D, out.data() + i * D);
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({table}), [&tp, table, rows = std::move(rows), D](const Tensor<T>& g) {
    auto& gt = tp.grad_ref(table);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t d = 0; d < D; ++d) gt[rows[i] * D + d] += g[i * D + d];
  });
}

/// out[n] = use_null[n] ? null_value : x[n], where null_value has the shape
/// of one batch item of x.
template <class T>
Var select_null(Tape<T>& tp, Var x, Var null_value, std::vector<bool> use_null) {
  const auto& vx = tp.value(x);
  const auto& vn = tp.value(null_value);
  const std::size_t N = vx.dim(0), item = vx.size() / N;
  detail::require_shape(vn.size() == item && use_null.size() == N, "select_null shape mismatch");
  Tensor<T> out = vx;
  for (std::size_t n = 0; n < N; ++n)
    if (use_null[n]) std::copy_n(vn.data(), item, out.data() + n * item);
  return detail::emit<T>(tp, std::move(out), tp.any_requires_grad({x, null_value}),
                         [&tp, x, null_value, use_null = std::move(use_null), N, item](const Tensor<T>& g) {
    for (std::size_t n = 0; n < N; ++n) {
      if (use_null[n] && tp.requires_grad(null_value)) {
        auto& gn = tp.grad_ref(null_value);
        for (std::size_t i = 0; i < item; ++i) gn[i] += g[n * item + i];
      } else if (!use_null[n] && tp.requires_grad(x)) {
        auto& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < item; ++i) gx[n * item + i] += g[n * item + i];
      }
    }
  });
}

}  // namespace scorediff::nn
