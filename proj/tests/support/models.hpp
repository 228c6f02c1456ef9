#pragma once

#include "scorediff/control/generate.hpp"
#include "scorediff/lora/lora.hpp"

namespace testing_support {

using namespace scorediff;

/// Latent 1x8x8, control frames 32.
inline ModelConfig small_config() {
  ModelConfig c;
  c.unet.width0 = 16;
  c.unet.width1 = 32;
  c.unet.groups = 4;
  c.branch.latent_width = 8;
  c.branch.hint_channels = 4;
  return c;
}

inline film::FilmInputs random_film(Rng& rng, const ModelConfig& c) {
  film::FilmInputs in;
  for (std::size_t d = 0; d < c.film.dim; ++d) in.semantic.push_back(float(rng.normal()));
  in.aesthetic_bucket = std::size_t(rng.integer(0, std::int64_t(c.film.aesthetic_buckets) - 1));
  in.emotion = std::size_t(rng.integer(0, std::int64_t(c.film.emotion_classes) - 1));
  return in;
}

inline std::vector<float> random_c_film(Rng& rng, std::size_t dim = 512) {
  std::vector<float> v(dim);
  for (auto& x : v) x = float(rng.normal());
  return v;
}

inline control::StyleControls random_controls(Rng& rng, std::size_t frames) {
  control::StyleControls c;
  std::vector<int> p(frames);
  DynamicsControl d;
  for (std::size_t t = 0; t < frames; ++t) {
    p[t] = int(rng.integer(-1, 11));
    d.loudness_db.push_back(rng.uniform(-80.0, 0.0));
  }
  c.melody = MelodyControl::from_pitches(p);
  c.dynamics = d;
  return c;
}

/// Gives every zero-initialised layer of the branch random weights, as if
/// trained.
template <class T>
void randomize_branch_zero_layers(ScoreModel<T>& m, std::uint64_t seed, double scale = 0.1) {
  Rng rng(seed);
  m.store().for_each([&](nn::Param<T>& p) {
    if (p.name.find("z_out") != std::string::npos || p.name.find("z_in") != std::string::npos)
      for (auto& v : p.value.values()) v = T(rng.normal(0.0, scale));
  });
}

template <class T>
void randomize_output_layer(ScoreModel<T>& m, std::uint64_t seed, double scale = 0.1) {
  Rng rng(seed);
  for (const char* n : {"base.out.conv.w", "base.out.conv.b"})
    for (auto& v : m.store().get(n).value.values()) v = T(rng.normal(0.0, scale));
}

}  // namespace testing_support
