#pragma once

#include <iostream>
#include <optional>
#include <string>

#include "scorediff/diffusion/codec.hpp"
#include "scorediff/diffusion/ddim.hpp"

namespace scorediff::control {

/// Emitted when a controlled call has to run without a branch.
struct Warning {
  std::string message;
};

using WarningSink = std::function<void(const Warning&)>;

inline void warn_stderr(const Warning& w) { std::cerr << "warning: " << w.message << "\n"; }

/// Base prediction with branch residuals added; residuals come from one
/// branch pass with the conditional context and are reused for the
/// unconditional guidance pass.
template <class T>
Tensor<T> controlled_denoise(const ScoreModel<T>& model, const Tensor<T>& z, std::size_t m,
                             const std::optional<std::vector<float>>& c_film, const StyleControls& controls,
                             double cfg_scale, const WarningSink& warn = warn_stderr) {
  if (!model.has_branch()) {
    if (warn) warn({"no control branch loaded; falling back to the base denoiser"});
    return diffusion::guided_eps(model, z, m, c_film, cfg_scale);
  }
  detail::require(m >= 1 && m <= model.schedule().M, "diffusion step out of range");
  model.unet().check_input(z.shape());
  const std::size_t N = z.dim(0);
  const auto& br = model.branch();
  Tape<T> tp(false);
  Var zv = tp.constant(z);
  const std::vector<std::size_t> steps(N, m);
  Var ctx = diffusion::context_var(tp, model, c_film, N);
  std::vector<const StyleControls*> items(N, &controls);
  auto cb = make_control_batch<T>(items, z.dim(2) * br.config().ratio, br.config().db_floor);
  Var mel = cb.any_melody ? tp.constant(std::move(cb.melody)) : Var{};
  Var dyn = cb.any_dynamics ? tp.constant(std::move(cb.dynamics)) : Var{};
  const Residuals res = br.forward(tp, zv, steps, ctx, mel, dyn);
  Tensor<T> cond = tp.value(model.unet().forward(tp, zv, steps, ctx, &res));
  if (!c_film || cfg_scale == 1.0) return cond;
  Var null_ctx = model.unet().null_context(tp, N);
  Tensor<T> uncond = tp.value(model.unet().forward(tp, zv, steps, null_ctx, &res));
  return diffusion::guided(cond, uncond, cfg_scale);
}

enum class Mode { ScoreGeneration, MelodyOnly, DynamicsOnly, Both };

inline Mode parse_mode(const std::string& s) {
  if (s == "score") return Mode::ScoreGeneration;
  if (s == "melody") return Mode::MelodyOnly;
  if (s == "dynamics") return Mode::DynamicsOnly;
  if (s == "both") return Mode::Both;
  throw ParameterError("unknown generation mode '" + s + "' (expected score|melody|dynamics|both)");
}

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::ScoreGeneration: return "score";
    case Mode::MelodyOnly: return "melody";
    case Mode::DynamicsOnly: return "dynamics";
    case Mode::Both: return "both";
  }
  return "?";
}

struct GenerateConfig {
  std::size_t steps = 100;
  double cfg_scale = 7.5;
  std::size_t frames = 128;  // mel frames when no control fixes the length
  std::size_t mel_bins = 64;
};

/// Keeps only the controls the mode uses; errors when one is missing.
inline StyleControls select_controls(Mode mode, const StyleControls& given) {
  StyleControls c;
  const bool need_mel = mode == Mode::MelodyOnly || mode == Mode::Both;
  const bool need_dyn = mode == Mode::DynamicsOnly || mode == Mode::Both;
  if (need_mel) {
    detail::require(given.melody.has_value(), std::string("mode '") + mode_name(mode) + "' needs a melody control");
    c.melody = given.melody;
  }
  if (need_dyn) {
    detail::require(given.dynamics.has_value(), std::string("mode '") + mode_name(mode) + "' needs a dynamics control");
    c.dynamics = given.dynamics;
  }
  return c;
}

/// DDIM through controlled_denoise, then decode to a mel spectrogram.
template <class T>
MelSpectrogram generate(const ScoreModel<T>& model, const diffusion::LatentCodec<T>& codec,
                               const film::FusedCondition& film, Mode mode, const StyleControls& given,
                               std::uint64_t seed, const GenerateConfig& gc = {}, const WarningSink& warn = warn_stderr) {
  const StyleControls controls = select_controls(mode, given);
  std::size_t frames = gc.frames;
  if (controls.melody) frames = controls.melody->frames;
  else if (controls.dynamics) frames = controls.dynamics->frames();
  const std::size_t r = codec.config().ratio;
  codec.check_mel_shape(frames, gc.mel_bins);
  detail::require(gc.steps <= model.schedule().M, "DDIM steps exceed the schedule length");
  Rng rng(seed);
  const Shape shape{1, codec.config().channels, frames / r, gc.mel_bins / r};
  const std::optional<std::vector<float>> c_film = film.c_film;
  const auto z = diffusion::ddim_loop<T>(model.schedule(), gc.steps, rng.normal_tensor<T>(shape),
                                         [&](const Tensor<T>& zt, std::size_t m) {
                                           return controlled_denoise(model, zt, m, c_film, controls, gc.cfg_scale, warn);
                                         });
  return codec.decode(z.reshaped({shape[1], shape[2], shape[3]}));
}

}  // namespace scorediff::control
