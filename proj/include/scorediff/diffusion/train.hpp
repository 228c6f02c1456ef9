#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "scorediff/lora/lora.hpp"
#include "scorediff/model.hpp"
#include "scorediff/nn/adamw.hpp"

namespace scorediff::diffusion {

/// Repeats one c_film vector as context tokens [n,1,D].
template <class T>
Tensor<T> context_tokens(const std::vector<float>& c_film, std::size_t n, std::size_t dim) {
  detail::require_shape(c_film.size() == dim, "c_film must have " + std::to_string(dim) + " entries");
  Tensor<T> ctx({n, 1, dim});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) ctx[i * dim + d] = T(c_film[d]);
  return ctx;
}

/// Context Var for a batch: c_film tokens, or the learned null token when
/// c_film is absent.
template <class T>
Var context_var(Tape<T>& tp, const ScoreModel<T>& model, const std::optional<std::vector<float>>& c_film, std::size_t n) {
  const std::size_t D = model.config().unet.context_dim;
  if (!c_film) return model.unet().null_context(tp, n);
  return tp.constant(context_tokens<T>(*c_film, n, D));
}

/// Noise prediction of the base denoiser for z[N,C,H,W] at step m.
template <class T>
Tensor<T> unet_forward(const ScoreModel<T>& model, const Tensor<T>& z, std::size_t m,
                       const std::optional<std::vector<float>>& c_film) {
  detail::require(m >= 1 && m <= model.schedule().M, "diffusion step out of range");
  model.unet().check_input(z.shape());
  Tape<T> tp(false);
  const std::size_t N = z.dim(0);
  Var ctx = context_var(tp, model, c_film, N);
  return tp.value(model.unet().forward(tp, tp.constant(z), std::vector<std::size_t>(N, m), ctx));
}

/// One training batch: clean latents and per-item film inputs, plus style
/// controls when training the branch.
template <class T>
struct TrainBatch {
  Tensor<T> z0;  // [N,C,H,W]
  std::vector<film::FilmInputs> film;
  std::vector<const control::StyleControls*> controls;
};

struct TrainConfig {
  nn::AdamWConfig optimizer;
  double cond_dropout = 0.1;     // c_film replaced by the null token
  double control_dropout = 0.25; // each local control independently dropped (branch stage)
  std::uint64_t seed = 2;
};

enum class Stage { Base, Branch };

struct StepStats {
  double loss = 0;
  double grad_norm = 0;
  std::size_t step = 0;
};

/// Epsilon-prediction L2 training. The base stage trains the film encoder
/// and denoiser; the branch stage freezes both and trains the control
/// branch (optionally LoRA-only).
template <class T>
class Trainer {
 public:
  Trainer(ScoreModel<T>& model, Stage stage, const TrainConfig& cfg, bool lora_mode = false)
      : model_(model), stage_(stage), cfg_(cfg), opt_(cfg.optimizer), rng_(cfg.seed) {
    if (stage == Stage::Base) {
      model.store().for_each([](nn::Param<T>& p) {
        p.trainable = (p.name.rfind("base.", 0) == 0 || p.name.rfind("film.", 0) == 0) &&
                      p.name.rfind("film.aesthetic.score", 0) != 0;
      });
    } else {
      detail::require(model.has_branch(), "branch training needs a control branch");
      lora::set_branch_trainable(model, lora_mode);
    }
  }

  nn::AdamW<T>& optimizer() { return opt_; }
  Rng& rng() { return rng_; }

  /// Builds the loss graph for a batch with explicit randomness; used by
  /// step() and by gradient checks.
  struct Draw {
    std::vector<std::size_t> steps;
    Tensor<T> eps;
    std::vector<bool> drop_cond, drop_melody, drop_dynamics;
  };

  Draw draw(const TrainBatch<T>& b) {
    const std::size_t N = b.z0.dim(0);
    Draw d;
    d.eps = rng_.normal_tensor<T>(b.z0.shape());
    for (std::size_t n = 0; n < N; ++n) {
      d.steps.push_back(std::size_t(rng_.integer(1, std::int64_t(model_.schedule().M))));
      d.drop_cond.push_back(rng_.uniform() < cfg_.cond_dropout);
      d.drop_melody.push_back(stage_ == Stage::Branch && rng_.uniform() < cfg_.control_dropout);
      d.drop_dynamics.push_back(stage_ == Stage::Branch && rng_.uniform() < cfg_.control_dropout);
    }
    return d;
  }

  Var loss_graph(Tape<T>& tp, const TrainBatch<T>& b, const Draw& d) const {
    const std::size_t N = b.z0.dim(0);
    detail::require(N > 0 && b.film.size() == N, "batch needs one film input per latent");
    const std::size_t item = b.z0.size() / N;
    Tensor<T> zm(b.z0.shape());
    const auto& s = model_.schedule();
    for (std::size_t n = 0; n < N; ++n) {
      const double ab = s.alpha_bar(d.steps[n]);
      const T a = T(std::sqrt(ab)), c = T(std::sqrt(1.0 - ab));
      for (std::size_t i = 0; i < item; ++i) zm[n * item + i] = a * b.z0[n * item + i] + c * d.eps[n * item + i];
    }
    Var z = tp.constant(std::move(zm));
    Var ctx = model_.unet().context(tp, model_.film().context(tp, b.film), d.drop_cond);
    std::optional<Residuals> res;
    if (stage_ == Stage::Branch) {
      detail::require(b.controls.size() == N, "branch batch needs one control set per latent");
      std::vector<control::StyleControls> kept(N);
      std::vector<const control::StyleControls*> ptrs(N);
      for (std::size_t n = 0; n < N; ++n) {
        if (b.controls[n]) {
          if (!d.drop_melody[n]) kept[n].melody = b.controls[n]->melody;
          if (!d.drop_dynamics[n]) kept[n].dynamics = b.controls[n]->dynamics;
        }
        ptrs[n] = &kept[n];
      }
      const auto& br = model_.branch();
      auto cb = control::make_control_batch<T>(ptrs, b.z0.dim(2) * br.config().ratio, br.config().db_floor);
      res = br.forward(tp, z, d.steps, ctx, tp.constant(std::move(cb.melody)), tp.constant(std::move(cb.dynamics)));
    }
    Var pred = model_.unet().forward(tp, z, d.steps, ctx, res ? &*res : nullptr);
    return nn::mse(tp, pred, tp.constant(d.eps));
  }

  /// Uniform m, Gaussian eps, L2 on the noise, AdamW update.
  StepStats step(const TrainBatch<T>& b) {
    const Draw d = draw(b);
    model_.store().zero_grad();
    Tape<T> tp;
    Var loss = loss_graph(tp, b, d);
    StepStats st;
    st.loss = double(tp.value(loss)[0]);
    st.step = opt_.steps() + 1;
    if (!std::isfinite(st.loss)) throw NumericError(diagnose("loss", st.step, st.loss));
    tp.backward(loss);
    st.grad_norm = nn::AdamW<T>::grad_norm(model_.store());
    if (!std::isfinite(st.grad_norm)) throw NumericError(diagnose("gradient norm", st.step, st.grad_norm));
    opt_.step(model_.store());
    return st;
  }

 private:
  std::string diagnose(const char* what, std::size_t step, double value) const {
    std::ostringstream os;
    os << "non-finite " << what << " (" << value << ") at training step " << step;
    model_.store().for_each([&](const nn::Param<T>& p) {
      if (!p.value.all_finite()) os << "; non-finite values in " << p.name;
      else if (p.trainable && !p.grad.all_finite()) os << "; non-finite gradient in " << p.name;
    });
    return os.str();
  }

  ScoreModel<T>& model_;
  Stage stage_;
  TrainConfig cfg_;
  nn::AdamW<T> opt_;
  Rng rng_;
};

}  // namespace scorediff::diffusion
