#pragma once

#include "scorediff/diffusion/train.hpp"
#include "scorediff/nn/gradcheck.hpp"

namespace scorediff::diffusion {

struct ModelGradCheckConfig {
  std::size_t samples = 150;
  double h = 1e-4;
  std::uint64_t seed = 0;
  std::size_t batch = 2, height = 8, width = 8;
  bool with_branch = true;
  /// Gives zero-initialised layers small random values so that every
  /// parameter lies on a path with non-zero gradient.
  bool perturb_zero_init = true;
};

/// Finite-difference check of the training loss of a double-precision
/// copy of the model (base + branch), over a fixed probe batch.
inline nn::GradCheckReport model_gradient_check(ModelConfig mcfg, const ModelGradCheckConfig& g,
                                                const nn::ParamStore<float>* weights = nullptr) {
  mcfg.branch.latent_width = g.width;
  ScoreModel<double> model(mcfg);
  if (g.with_branch) model.add_branch();
  if (weights) model.copy_values_from(*weights);
  Rng rng(g.seed);
  if (g.perturb_zero_init)
    model.store().for_each([&](nn::Param<double>& p) {
      if (p.name.find("z_out") != std::string::npos || p.name.find("z_in") != std::string::npos ||
          p.name.rfind("base.out.conv", 0) == 0)
        for (auto& v : p.value.values()) v = rng.normal(0.0, 0.05);
    });

  TrainBatch<double> batch;
  batch.z0 = rng.normal_tensor<double>({g.batch, mcfg.unet.in_channels, g.height, g.width});
  std::vector<control::StyleControls> controls(g.batch);
  for (std::size_t n = 0; n < g.batch; ++n) {
    film::FilmInputs in;
    for (std::size_t d = 0; d < mcfg.film.dim; ++d) in.semantic.push_back(float(rng.normal()));
    in.aesthetic_bucket = std::size_t(rng.integer(0, std::int64_t(mcfg.film.aesthetic_buckets) - 1));
    in.emotion = std::size_t(rng.integer(0, std::int64_t(mcfg.film.emotion_classes) - 1));
    batch.film.push_back(in);
    const std::size_t frames = g.height * mcfg.branch.ratio;
    std::vector<int> pitches(frames);
    DynamicsControl dyn;
    for (std::size_t t = 0; t < frames; ++t) {
      pitches[t] = int(rng.integer(-1, 11));
      dyn.loudness_db.push_back(rng.uniform(-80.0, 0.0));
    }
    controls[n].melody = MelodyControl::from_pitches(pitches);
    controls[n].dynamics = dyn;
    batch.controls.push_back(&controls[n]);
  }

  TrainConfig tc;
  tc.seed = g.seed + 1;
  tc.control_dropout = 0.0;
  Trainer<double> trainer(model, g.with_branch ? Stage::Branch : Stage::Base, tc);
  auto draw = trainer.draw(batch);
  std::fill(draw.drop_cond.begin(), draw.drop_cond.end(), false);
  draw.drop_cond.back() = true;  // cover the null token as well
  model.store().for_each([](nn::Param<double>& p) { p.trainable = p.name.rfind("film.aesthetic.score", 0) != 0; });
  return nn::gradient_check(model.store(), [&](nn::Tape<double>& tp) { return trainer.loss_graph(tp, batch, draw); },
                            g.samples, g.h, g.seed + 2);
}

}  // namespace scorediff::diffusion
