#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "scorediff/audio/beats.hpp"
#include "scorediff/audio/features.hpp"
#include "scorediff/control/generate.hpp"
#include "scorediff/data/synth.hpp"
#include "scorediff/diffusion/codec.hpp"
#include "scorediff/diffusion/ddim.hpp"
#include "scorediff/lora/lora.hpp"
#include "scorediff/metrics/rhythm.hpp"

namespace scorediff {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StftConfig, window, hop, fft_size, center)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MelConfig, mel_bins, fmin, fmax, log_floor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ChromaConfig, stft, fmin, fmax, a4_hz, sample_rate)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DynamicsConfig, sg_window, sg_order, db_floor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BeatConfig, stft, pre_max, post_max, pre_avg, post_avg, delta, wait,
                                                min_duration, silence_level)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FeatureConfig, stft, mel, chroma, dynamics, melody_energy_floor,
                                                griffin_lim_iterations)

namespace nn {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamWConfig, lr, beta1, beta2, eps, weight_decay, clip_norm)
}

namespace diffusion {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UNetConfig, in_channels, width0, width1, groups, time_freq_dim, time_dim,
                                                context_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CodecConfig, ratio, channels, hidden0, hidden1, input_offset,
                                                input_scale, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CodecTrainConfig, steps, batch, optimizer, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, optimizer, cond_dropout, control_dropout, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SampleConfig, steps, cfg_scale)
}  // namespace diffusion

namespace control {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BranchConfig, hint_channels, ratio, latent_width, db_floor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenerateConfig, steps, cfg_scale, frames, mel_bins)
}  // namespace control

namespace film {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FilmEncoderConfig, dim, emotion_classes, aesthetic_buckets, theme_dim, seed)
}

namespace lora {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LoraConfig, rank, alpha, include_output, strict, seed)
}

namespace metrics {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CoverageConfig, tolerance, swap_denominators)
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleConfig, steps, beta_start, beta_end)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, unet, branch, film, schedule, seed)

namespace data {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, clips, frames, hop, styles, grid, sample_rate, seed)

struct SplitConfig {
  double train = 26730.0 / 32520.0;
  double val = 2895.0 / 32520.0;
  double test = 2895.0 / 32520.0;
  std::uint64_t seed = 2024;
  double clip_seconds = 10.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitConfig, train, val, test, seed, clip_seconds)
}  // namespace data

/// Every tunable of every module. Missing JSON fields keep their defaults.
struct RunConfig {
  FeatureConfig features;
  BeatConfig beats;
  ModelConfig model;
  diffusion::CodecConfig codec;
  diffusion::CodecTrainConfig codec_train;
  diffusion::TrainConfig base_train;
  diffusion::TrainConfig branch_train{{1e-4, 0.9, 0.999, 1e-8, 0.01, 1.0}, 0.1, 0.25, 3};
  std::size_t base_steps = 3000;
  std::size_t branch_steps = 4000;
  std::size_t batch = 8;
  lora::LoraConfig lora;
  bool use_lora = false;
  diffusion::SampleConfig sample;
  control::GenerateConfig generate;
  metrics::CoverageConfig coverage;
  data::SynthConfig synth;
  data::SplitConfig split;
  double held_out_fraction = 0.1;
  std::size_t eval_pairs = 50;
  std::uint64_t eval_seed = 1000;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, features, beats, model, codec, codec_train, base_train,
                                                branch_train, base_steps, branch_steps, batch, lora, use_lora, sample,
                                                generate, coverage, synth, split, held_out_fraction, eval_pairs, eval_seed)

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Digest of the canonical JSON form (object keys sorted), so field order
/// in a config file does not matter.
inline std::uint64_t config_digest(const nlohmann::json& j) { return fnv1a64(j.dump()); }

template <class C>
std::uint64_t config_digest(const C& c) {
  return config_digest(nlohmann::json(c));
}

inline std::string digest_hex(std::uint64_t d) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

/// Parses a config file, filling unspecified fields with defaults.
inline RunConfig load_run_config(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path)).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid config " + path + ": " + e.what());
  }
}

}  // namespace scorediff
