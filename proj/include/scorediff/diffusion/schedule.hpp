#pragma once

#include <cmath>
#include <vector>

#include "scorediff/core/error.hpp"
#include "scorediff/core/tensor.hpp"

namespace scorediff::diffusion {

/// Linear-beta noise schedule. Index m runs 1..M; vectors are stored 0-based.
struct DiffusionSchedule {
  std::size_t M = 0;
  std::vector<double> betas, alphas, alpha_bars;

  double alpha_bar(std::size_t m) const {
    detail::require(m >= 1 && m <= M, "diffusion step out of range");
    return alpha_bars[m - 1];
  }
};

inline DiffusionSchedule build_schedule(std::size_t M = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
  detail::require(M >= 1, "schedule needs at least one step");
  detail::require(beta_start > 0 && beta_start <= beta_end && beta_end < 1, "invalid beta range");
  DiffusionSchedule s;
  s.M = M;
  double prod = 1.0;
  for (std::size_t i = 0; i < M; ++i) {
    const double b = M == 1 ? beta_start : beta_start + (beta_end - beta_start) * double(i) / double(M - 1);
    s.betas.push_back(b);
    s.alphas.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bars.push_back(prod);
  }
  return s;
}

/// sqrt(abar_m) z0 + sqrt(1 - abar_m) eps
template <class T>
Tensor<T> forward_diffuse(const Tensor<T>& z0, std::size_t m, const Tensor<T>& eps, const DiffusionSchedule& s) {
  detail::require_shape(z0.shape() == eps.shape(), "noise shape " + shape_str(eps.shape()) + " does not match latent " + shape_str(z0.shape()));
  const double ab = s.alpha_bar(m);
  const T a = T(std::sqrt(ab)), b = T(std::sqrt(1.0 - ab));
  Tensor<T> out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

}  // namespace scorediff::diffusion
