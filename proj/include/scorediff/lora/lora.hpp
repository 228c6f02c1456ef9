#pragma once

#include <string>
#include <vector>

#include "scorediff/model.hpp"

namespace scorediff::lora {

using nn::LoraAdapter;

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 8.0;
  bool include_output = false;  // also adapt the attention output map
  bool strict = true;            // require rank <= min(d, k) / 4
  std::uint64_t seed = 5;
};

/// Attaches a rank-r adapter to `layer`: A[r,in] ~ N(0, 1/in), B[out,r] = 0,
/// base weight frozen. Parameters are named "lora.<layer>.A" / ".B".
template <class T>
LoraAdapter<T>& attach(nn::ParamStore<T>& store, std::vector<std::unique_ptr<LoraAdapter<T>>>& adapters,
                       nn::Linear<T>& layer, std::size_t rank, double alpha, std::uint64_t seed, bool strict = true) {
  const std::size_t lim = std::min(layer.in, layer.out);
  detail::require(rank >= 1 && rank <= lim, "LoRA rank " + std::to_string(rank) + " exceeds min(d,k) = " + std::to_string(lim) + " for " + layer.name);
  detail::require(!strict || 4 * rank <= lim, "LoRA rank " + std::to_string(rank) + " is not small relative to min(d,k) = " +
                                                  std::to_string(lim) + " for " + layer.name + " (strict bound r <= min(d,k)/4)");
  detail::require(layer.lora == nullptr, "layer " + layer.name + " already has an adapter");
  Rng rng(seed);
  auto a = std::make_unique<LoraAdapter<T>>();
  a->target = layer.name;
  a->rank = rank;
  a->alpha = T(alpha);
  a->A = &store.add("lora." + layer.name + ".A", rng.normal_tensor<T>({rank, layer.in}, 1.0 / std::sqrt(double(layer.in))));
  a->B = &store.add("lora." + layer.name + ".B", Tensor<T>({layer.out, rank}));
  layer.w->trainable = false;
  if (layer.b) layer.b->trainable = false;
  layer.lora = a.get();
  adapters.push_back(std::move(a));
  return *adapters.back();
}

/// Attaches by layer name within a model.
template <class T>
LoraAdapter<T>& attach(ScoreModel<T>& model, const std::string& layer_name, std::size_t rank, double alpha,
                       std::uint64_t seed, bool strict = true) {
  auto* layer = model.find_linear(layer_name);
  detail::require(layer != nullptr, "no linear layer named " + layer_name);
  return attach(model.store(), model.adapters(), *layer, rank, alpha, seed, strict);
}

/// Attention projection names of the control branch that receive adapters.
template <class T>
std::vector<std::string> branch_targets(ScoreModel<T>& model, bool include_output) {
  std::vector<std::string> out;
  for (auto* a : model.branch().attention()) {
    out.push_back(a->q.name);
    out.push_back(a->k.name);
    out.push_back(a->v.name);
    if (include_output) out.push_back(a->o.name);
  }
  return out;
}

/// Adapters on every targeted branch projection; returns how many were added.
template <class T>
std::size_t attach_branch(ScoreModel<T>& model, const LoraConfig& cfg) {
  const auto targets = branch_targets(model, cfg.include_output);
  for (std::size_t i = 0; i < targets.size(); ++i) attach(model, targets[i], cfg.rank, cfg.alpha, cfg.seed + i, cfg.strict);
  return targets.size();
}

/// W0 x + alpha B (A x) on a plain input matrix x[n, in], never forming BA.
template <class T>
Tensor<T> adapted_forward(const Tensor<T>& x, const nn::Linear<T>& layer, const LoraAdapter<T>& a) {
  detail::require_shape(x.rank() == 2 && x.dim(1) == layer.in, "adapter input must be [n, " + std::to_string(layer.in) + "]");
  detail::require_shape(a.A->value.dim(1) == layer.in && a.B->value.dim(0) == layer.out, "adapter shape does not match layer");
  nn::Tape<T> tp(false);
  using namespace nn;
  Var xv = tp.constant(x);
  Var y = linear(tp, xv, tp.constant(layer.w->value), layer.b ? tp.constant(layer.b->value) : Var{});
  if (!a.merged) {
    Var d = linear(tp, linear(tp, xv, tp.constant(a.A->value)), tp.constant(a.B->value));
    y = add(tp, y, scale(tp, d, a.alpha));
  }
  return tp.value(y);
}

namespace detail_lora {
template <class T>
void apply_delta(nn::Linear<T>& layer, const LoraAdapter<T>& a, double sign) {
  const auto& A = a.A->value;  // [r, in]
  const auto& B = a.B->value;  // [out, r]
  auto& W = layer.w->value;    // [out, in]
  for (std::size_t o = 0; o < layer.out; ++o)
    for (std::size_t i = 0; i < layer.in; ++i) {
      T acc = 0;
      for (std::size_t r = 0; r < a.rank; ++r) acc += B[o * a.rank + r] * A[r * layer.in + i];
      W[o * layer.in + i] += T(sign) * a.alpha * acc;
    }
}
}  // namespace detail_lora

/// W0 <- W0 + alpha BA; the adapter is then bypassed in the forward pass.
template <class T>
void merge(nn::Linear<T>& layer, LoraAdapter<T>& a) {
  detail::require(!a.merged, "adapter on " + layer.name + " is already merged");
  detail_lora::apply_delta(layer, a, 1.0);
  a.merged = true;
}

template <class T>
void unmerge(nn::Linear<T>& layer, LoraAdapter<T>& a) {
  detail::require(a.merged, "adapter on " + layer.name + " is not merged");
  detail_lora::apply_delta(layer, a, -1.0);
  a.merged = false;
}

struct ParameterReport {
  std::size_t full_count = 0;  // every branch parameter, as trained without LoRA
  std::size_t lora_count = 0;  // adapter matrices A and B
  std::size_t trainable_count = 0;  // adapters plus branch-only layers
  double ratio = 0;            // trainable_count / full_count
};

/// Exact counts over the control branch. In LoRA mode the replicated
/// blocks are frozen; only adapters and the branch-only input/output
/// layers train.
template <class T>
ParameterReport trainable_parameter_report(const ScoreModel<T>& model) {
  ParameterReport r;
  model.store().for_each([&](const nn::Param<T>& p) {
    if (p.name.rfind("branch.", 0) == 0) {
      r.full_count += p.size();
      if (control::SControlBranch<T>::is_new_layer(p.name)) r.trainable_count += p.size();
    } else if (p.name.rfind("lora.branch.", 0) == 0) {
      r.lora_count += p.size();
    }
  });
  r.trainable_count += r.lora_count;
  r.ratio = r.full_count ? double(r.trainable_count) / double(r.full_count) : 0.0;
  return r;
}

/// Trainable flags for branch training: base and film frozen; with LoRA,
/// only adapters and branch-only layers train.
template <class T>
void set_branch_trainable(ScoreModel<T>& model, bool lora_mode) {
  model.store().for_each([&](nn::Param<T>& p) {
    const bool branch = p.name.rfind("branch.", 0) == 0;
    const bool lora = p.name.rfind("lora.", 0) == 0;
    p.trainable = lora || (branch && (!lora_mode || control::SControlBranch<T>::is_new_layer(p.name)));
  });
}

}  // namespace scorediff::lora
