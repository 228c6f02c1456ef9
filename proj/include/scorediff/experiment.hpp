#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "scorediff/audio/features.hpp"
#include "scorediff/control/generate.hpp"
#include "scorediff/data/config.hpp"
#include "scorediff/diffusion/train.hpp"
#include "scorediff/metrics/style.hpp"

namespace scorediff {

/// A clip reduced to what training and evaluation consume.
struct CorpusEntry {
  std::string id;
  std::size_t style = 0;
  MelSpectrogram mel;
  control::StyleControls controls;
  film::FrameEmbeddingSequence frames;
  std::vector<float> attributes, theme;
  std::size_t emotion = 0;
};

inline CorpusEntry corpus_entry(const data::SynthClip& clip, const FeatureConfig& fc,
                                const film::EmbeddingProvider& provider) {
  const auto f = extract_features(clip.audio, fc);
  CorpusEntry e;
  e.id = clip.id;
  e.style = clip.style;
  e.mel = f.mel;
  e.controls.melody = f.melody;
  e.controls.dynamics = f.dynamics;
  e.frames = provider.embed(clip.video, 1.0);
  e.attributes = clip.attributes;
  e.theme = clip.theme;
  e.emotion = clip.emotion;
  return e;
}

template <class T>
film::FilmInputs film_inputs(const film::FilmEncoder<T>& enc, const CorpusEntry& e) {
  film::FilmInputs in;
  in.semantic = film::semantic_feature(e.frames);
  in.aesthetic_bucket = enc.bucket_of(enc.aesthetic_score(e.attributes, e.theme));
  in.emotion = e.emotion;
  return in;
}

struct ExperimentResult {
  double codec_rel_l2 = 0;
  double base_final_loss = 0, branch_final_loss = 0;
  metrics::Maybe melody_acc;
  metrics::DynamicsCorrelation dynamics;
  double seconds_data = 0, seconds_codec = 0, seconds_base = 0, seconds_branch = 0, seconds_eval = 0;
  double seconds_total() const { return seconds_data + seconds_codec + seconds_base + seconds_branch + seconds_eval; }
};

using Logger = std::function<void(const std::string&)>;

namespace detail_exp {
inline double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline double window_mean(const std::vector<double>& v, std::size_t n) {
  if (v.empty()) return 0;
  const std::size_t k = std::min(n, v.size());
  double s = 0;
  for (std::size_t i = v.size() - k; i < v.size(); ++i) s += v[i];
  return s / double(k);
}
}  // namespace detail_exp

/// Latents with their film inputs and (for the branch stage) controls.
struct TrainingSet {
  std::vector<Tensor<float>> latents;  // [C, H, W] each
  std::vector<film::FilmInputs> film;
  std::vector<const control::StyleControls*> controls;
};

/// Runs `steps` optimizer steps on batches drawn uniformly with
/// replacement; returns the mean loss of the last 100 steps.
inline double train_stage(ScoreModel<float>& model, diffusion::Stage stage, const diffusion::TrainConfig& tc, bool lora_mode,
                          std::size_t steps, std::size_t batch, const TrainingSet& set, Rng& batch_rng,
                          const Logger& log = {}) {
  const std::size_t n = set.latents.size();
  const bool branch = stage == diffusion::Stage::Branch;
  detail::require(n > 0 && set.film.size() == n, "training set is empty or incomplete");
  detail::require(!branch || set.controls.size() == n, "branch training needs controls for every clip");
  detail::require(batch > 0, "batch size must be positive");
  const Shape ls = set.latents[0].shape();
  const std::size_t item = set.latents[0].size();
  diffusion::Trainer<float> tr(model, stage, tc, lora_mode);
  std::vector<double> losses;
  for (std::size_t s = 0; s < steps; ++s) {
    diffusion::TrainBatch<float> b;
    b.z0 = Tensor<float>({batch, ls[0], ls[1], ls[2]});
    for (std::size_t k = 0; k < batch; ++k) {
      const std::size_t i = std::size_t(batch_rng.integer(0, std::int64_t(n) - 1));
      detail::require_shape(set.latents[i].shape() == ls, "latents differ in shape");
      std::copy(set.latents[i].values().begin(), set.latents[i].values().end(), b.z0.data() + k * item);
      b.film.push_back(set.film[i]);
      if (branch) b.controls.push_back(set.controls[i]);
    }
    losses.push_back(tr.step(b).loss);
    if (log && (s + 1) % 250 == 0)
      log(std::string(branch ? "branch" : "base") + " step " + std::to_string(s + 1) + " loss " +
          std::to_string(detail_exp::window_mean(losses, 250)));
  }
  return detail_exp::window_mean(losses, 100);
}

/// ||decode(encode(x)) - x|| / ||x|| pooled over `mels`.
inline double codec_relative_l2(const diffusion::LatentCodec<float>& codec, const std::vector<MelSpectrogram>& mels,
                                const MelConfig& mc = {}) {
  double num = 0, den = 0;
  for (const auto& m : mels) {
    const auto rec = codec.decode(codec.encode(m), mc);
    for (std::size_t k = 0; k < rec.values.size(); ++k) {
      const double d = rec.values[k] - m.values[k];
      num += d * d;
      den += m.values[k] * m.values[k];
    }
  }
  return den > 0 ? std::sqrt(num / den) : 0.0;
}

/// Trains codec, base and branch on a synthetic corpus, then generates in
/// "both" mode from held-out controls and scores the re-extracted melody
/// and dynamics against them.
inline ExperimentResult run_experiment(const RunConfig& cfg, const Logger& log = {}) {
  using clock = std::chrono::steady_clock;
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  ExperimentResult res;

  auto t0 = clock::now();
  const auto clips = data::synth_corpus(cfg.synth);
  film::ToyEmbeddingProvider provider;
  std::vector<CorpusEntry> corpus;
  corpus.reserve(clips.size());
  for (const auto& c : clips) corpus.push_back(corpus_entry(c, cfg.features, provider));
  const std::size_t n_test = std::max<std::size_t>(cfg.eval_pairs, std::size_t(double(corpus.size()) * cfg.held_out_fraction));
  detail::require(n_test < corpus.size(), "corpus too small for the held-out set");
  const std::size_t n_train = corpus.size() - n_test;
  res.seconds_data = detail_exp::since(t0);
  say("corpus: " + std::to_string(n_train) + " train / " + std::to_string(n_test) + " held out");

  t0 = clock::now();
  diffusion::LatentCodec<float> codec(cfg.codec);
  std::vector<MelSpectrogram> train_mels;
  for (std::size_t i = 0; i < n_train; ++i) train_mels.push_back(corpus[i].mel);
  diffusion::train_codec(codec, train_mels, cfg.codec_train);
  {
    std::vector<MelSpectrogram> held;
    for (std::size_t i = n_train; i < corpus.size(); ++i) held.push_back(corpus[i].mel);
    res.codec_rel_l2 = codec_relative_l2(codec, held, cfg.features.mel);
  }
  std::vector<Tensor<float>> latents;
  for (const auto& e : corpus) latents.push_back(codec.encode(e.mel));
  res.seconds_codec = detail_exp::since(t0);
  say("codec: held-out relative L2 " + std::to_string(res.codec_rel_l2));

  ScoreModel<float> model(cfg.model);
  TrainingSet set;
  for (std::size_t i = 0; i < n_train; ++i) {
    set.latents.push_back(latents[i]);
    set.film.push_back(film_inputs(model.film(), corpus[i]));
    set.controls.push_back(&corpus[i].controls);
  }
  Rng batch_rng(cfg.synth.seed + 17);

  t0 = clock::now();
  res.base_final_loss = train_stage(model, diffusion::Stage::Base, cfg.base_train, false, cfg.base_steps, cfg.batch, set,
                                    batch_rng, log);
  res.seconds_base = detail_exp::since(t0);

  t0 = clock::now();
  model.add_branch();
  if (cfg.use_lora) lora::attach_branch(model, cfg.lora);
  res.branch_final_loss = train_stage(model, diffusion::Stage::Branch, cfg.branch_train, cfg.use_lora, cfg.branch_steps,
                                      cfg.batch, set, batch_rng, log);
  res.seconds_branch = detail_exp::since(t0);

  t0 = clock::now();
  std::size_t agree = 0, voiced = 0;
  std::vector<metrics::DynamicsPair> pairs;
  for (std::size_t k = 0; k < cfg.eval_pairs; ++k) {
    const auto& e = corpus[n_train + k];
    const auto fused = model.film().fuse(model.film().features(film_inputs(model.film(), e)));
    const auto mel = control::generate(model, codec, fused, control::Mode::Both, e.controls, cfg.eval_seed + k, cfg.generate);
    const auto out = extract_features(render_mel(mel, cfg.features), cfg.features);
    const auto& ctl = *e.controls.melody;
    for (std::size_t t = 0; t < std::min(ctl.frames, out.melody.frames); ++t) {
      const int a = ctl.pitch_at(t), b = out.melody.pitch_at(t);
      if (a < 0 || b < 0) continue;
      ++voiced;
      agree += a == b;
    }
    pairs.push_back(metrics::align(*e.controls.dynamics, out.dynamics));
  }
  if (voiced) res.melody_acc = double(agree) / double(voiced);
  res.dynamics = metrics::dynamics_correlation(pairs);
  res.seconds_eval = detail_exp::since(t0);
  return res;
}

}  // namespace scorediff
