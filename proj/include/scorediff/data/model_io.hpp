#pragma once

#include <memory>
#include <string>

#include "scorediff/data/checkpoint.hpp"
#include "scorediff/data/config.hpp"

namespace scorediff::data {

/// Digest identifying a model architecture; branch and adapter
/// checkpoints carry the digest of the base they were trained on.
inline std::uint64_t model_digest(const ModelConfig& m) { return config_digest(m); }

inline Checkpoint codec_checkpoint(const diffusion::LatentCodec<float>& codec, const RunConfig& cfg) {
  Checkpoint c;
  c.config_json = nlohmann::json(cfg).dump();
  c.digest = config_digest(cfg.codec);
  store_section(c, "codec", codec.store(), "codec.");
  auto& sec = c.sections["codec"];
  sec["codec.latent_shift"] = Tensor<float>({1}, float(codec.latent_shift()));
  sec["codec.latent_scale"] = Tensor<float>({1}, float(codec.latent_scale()));
  return c;
}

inline RunConfig checkpoint_config(const Checkpoint& c) {
  try {
    return nlohmann::json::parse(c.config_json).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid: ") + e.what());
  }
}

inline diffusion::LatentCodec<float> load_codec(const Checkpoint& c) {
  const auto cfg = checkpoint_config(c);
  if (config_digest(cfg.codec) != c.digest) throw FormatError("codec checkpoint digest does not match its config");
  diffusion::LatentCodec<float> codec(cfg.codec);
  auto sec = c.section("codec");
  const auto shift = sec.at("codec.latent_shift")[0], scale = sec.at("codec.latent_scale")[0];
  sec.erase("codec.latent_shift");
  sec.erase("codec.latent_scale");
  Checkpoint only;
  only.sections["codec"] = std::move(sec);
  load_section(only, "codec", codec.store());
  codec.set_latent_normalization(shift, scale);
  return codec;
}

/// Film encoder and base denoiser.
inline Checkpoint base_checkpoint(const ScoreModel<float>& model, const RunConfig& cfg) {
  Checkpoint c;
  c.config_json = nlohmann::json(cfg).dump();
  c.digest = model_digest(model.config());
  store_section(c, "film", model.store(), "film.");
  store_section(c, "base", model.store(), "base.");
  return c;
}

/// Branch weights plus, when adapters are attached, a separate "lora"
/// section.
inline Checkpoint branch_checkpoint(const ScoreModel<float>& model, const RunConfig& cfg) {
  Checkpoint c;
  c.config_json = nlohmann::json(cfg).dump();
  c.digest = model_digest(model.config());
  store_section(c, "branch", model.store(), "branch.");
  if (!model.adapters().empty()) store_section(c, "lora", model.store(), "lora.");
  return c;
}

inline std::unique_ptr<ScoreModel<float>> load_model(const Checkpoint& base, const Checkpoint* branch = nullptr) {
  const auto cfg = checkpoint_config(base);
  if (model_digest(cfg.model) != base.digest) throw FormatError("base checkpoint digest does not match its config");
  auto model = std::make_unique<ScoreModel<float>>(cfg.model);
  load_section(base, "film", model->store());
  load_section(base, "base", model->store());
  if (branch) {
    if (branch->digest != base.digest)
      throw FormatError("branch checkpoint was trained on a different base (digest " + digest_hex(branch->digest) +
                        " vs " + digest_hex(base.digest) + ")");
    model->add_branch();
    load_section(*branch, "branch", model->store());
    if (branch->has("lora")) {
      const auto bcfg = checkpoint_config(*branch);
      lora::attach_branch(*model, bcfg.lora);
      load_section(*branch, "lora", model->store());
    }
  }
  return model;
}

}  // namespace scorediff::data
