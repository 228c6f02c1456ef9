#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "scorediff/diffusion/train.hpp"

namespace scorediff::diffusion {

/// Uniform sub-schedule of `steps` diffusion indices in [1, M], descending.
inline std::vector<std::size_t> ddim_timesteps(std::size_t M, std::size_t steps) {
  detail::require(steps >= 1 && steps <= M, "DDIM steps must be in [1, M]");
  std::vector<std::size_t> ts;
  for (std::size_t k = steps; k-- > 0;) ts.push_back(1 + k * M / steps);
  return ts;
}

/// eps_u + s (eps_c - eps_u)
template <class T>
Tensor<T> guided(const Tensor<T>& cond, const Tensor<T>& uncond, double s) {
  Tensor<T> out(cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + T(s) * (cond[i] - uncond[i]);
  return out;
}

/// Deterministic (eta = 0) DDIM from the starting noise `z`.
template <class T>
Tensor<T> ddim_loop(const DiffusionSchedule& s, std::size_t steps, Tensor<T> z,
                    const std::function<Tensor<T>(const Tensor<T>&, std::size_t)>& eps_fn) {
  const auto ts = ddim_timesteps(s.M, steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t m = ts[i];
    const double ab = s.alpha_bar(m);
    const double ab_prev = i + 1 < ts.size() ? s.alpha_bar(ts[i + 1]) : 1.0;
    const Tensor<T> eps = eps_fn(z, m);
    const double sa = std::sqrt(ab), sb = std::sqrt(1 - ab);
    const double pa = std::sqrt(ab_prev), pb = std::sqrt(1 - ab_prev);
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double x0 = (double(z[k]) - sb * double(eps[k])) / sa;
      z[k] = T(pa * x0 + pb * double(eps[k]));
    }
  }
  return z;
}

/// Guided noise prediction of the base model for a single latent [1,C,H,W].
/// With s = 1 only the conditional pass runs.
template <class T>
Tensor<T> guided_eps(const ScoreModel<T>& model, const Tensor<T>& z, std::size_t m,
                     const std::optional<std::vector<float>>& c_film, double cfg_scale) {
  Tensor<T> cond = unet_forward(model, z, m, c_film);
  if (!c_film || cfg_scale == 1.0) return cond;
  return guided(cond, unet_forward<T>(model, z, m, std::nullopt), cfg_scale);
}

struct SampleConfig {
  std::size_t steps = 200;
  double cfg_scale = 7.5;
};

/// Base-model DDIM sampling; the terminal noise is drawn from `seed`.
template <class T>
Tensor<T> ddim_sample(const ScoreModel<T>& model, const SampleConfig& sc, const std::optional<std::vector<float>>& c_film,
                      std::uint64_t seed, const Shape& latent_shape) {
  detail::require(sc.steps <= model.schedule().M, "DDIM steps exceed the schedule length");
  Rng rng(seed);
  Shape s{1};
  s.insert(s.end(), latent_shape.begin(), latent_shape.end());
  return ddim_loop<T>(model.schedule(), sc.steps, rng.normal_tensor<T>(s),
                      [&](const Tensor<T>& z, std::size_t m) { return guided_eps(model, z, m, c_film, sc.cfg_scale); });
}

}  // namespace scorediff::diffusion
