#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scorediff/nn/tape.hpp"

namespace scorediff::nn {

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;
};

/// Relative difference with a floor so that two near-zero gradients count
/// as agreeing.
inline double grad_rel_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares tape gradients of `loss` against central finite differences
/// for up to `samples` entries drawn across every trainable parameter.
/// `loss` must build a fresh graph on the given tape and return a scalar.
inline GradCheckReport gradient_check(ParamStore<double>& store,
                                      const std::function<Var(Tape<double>&)>& loss,
                                      std::size_t samples, double h = 1e-4, std::uint64_t seed = 0) {
  store.zero_grad();
  {
    Tape<double> tp;
    tp.backward(loss(tp));
  }
  std::vector<std::pair<Param<double>*, std::size_t>> picks;
  std::vector<Param<double>*> params;
  store.for_each([&](Param<double>& p) {
    if (p.trainable && p.size()) params.push_back(&p);
  });
  if (params.empty()) return {};
  Rng rng(seed);
  // round-robin over tensors so every layer is represented
  for (std::size_t i = 0; picks.size() < samples; ++i) {
    Param<double>* p = params[i % params.size()];
    picks.emplace_back(p, std::size_t(rng.integer(0, std::int64_t(p->size()) - 1)));
    if (i > samples * 4) break;
  }
  auto eval = [&] {
    Tape<double> tp(false);
    return tp.value(loss(tp))[0];
  };
  GradCheckReport rep;
  for (auto [p, idx] : picks) {
    const double orig = p->value[idx];
    p->value[idx] = orig + h;
    const double up = eval();
    p->value[idx] = orig - h;
    const double down = eval();
    p->value[idx] = orig;
    const double numeric = (up - down) / (2 * h);
    const double err = grad_rel_error(p->grad[idx], numeric);
    ++rep.checked;
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst = p->name + "[" + std::to_string(idx) + "]";
    }
  }
  return rep;
}

}  // namespace scorediff::nn
