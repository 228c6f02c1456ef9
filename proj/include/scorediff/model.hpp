#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scorediff/control/branch.hpp"
#include "scorediff/diffusion/schedule.hpp"
#include "scorediff/diffusion/unet.hpp"
#include "scorediff/film/encoder.hpp"

namespace scorediff {

struct ScheduleConfig {
  std::size_t steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct ModelConfig {
  diffusion::UNetConfig unet;
  control::BranchConfig branch;
  film::FilmEncoderConfig film;
  ScheduleConfig schedule;
  std::uint64_t seed = 1;
};

/// Film encoder, base denoiser, optional control branch and LoRA adapters,
/// all in one parameter store with prefixes "film.", "base.", "branch."
/// and "lora.".
template <class T>
class ScoreModel {
 public:
  explicit ScoreModel(const ModelConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    film_ = film::FilmEncoder<T>(store_, cfg.film);
    unet_ = diffusion::UNet<T>(store_, rng_, cfg.unet, "base.");
    schedule_ = diffusion::build_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
  }
  ScoreModel(const ScoreModel&) = delete;
  ScoreModel& operator=(const ScoreModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& store() { return store_; }
  const nn::ParamStore<T>& store() const { return store_; }
  const film::FilmEncoder<T>& film() const { return film_; }
  const diffusion::UNet<T>& unet() const { return unet_; }
  diffusion::UNet<T>& unet() { return unet_; }
  const diffusion::DiffusionSchedule& schedule() const { return schedule_; }
  Rng& rng() { return rng_; }

  bool has_branch() const { return branch_.has_value(); }
  const control::SControlBranch<T>& branch() const {
    detail::require(branch_.has_value(), "model has no control branch");
    return *branch_;
  }
  control::SControlBranch<T>& branch() {
    detail::require(branch_.has_value(), "model has no control branch");
    return *branch_;
  }

  /// Replicates the base encoder into a fresh branch (weights copied,
  /// zero convolutions zeroed).
  control::SControlBranch<T>& add_branch() {
    detail::require(!branch_, "model already has a control branch");
    Rng brng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    branch_.emplace(store_, brng, cfg_.unet, cfg_.branch, "base.");
    return *branch_;
  }

  /// All linear layers by parameter-name prefix, for adapter attachment.
  std::vector<nn::Linear<T>*> linears() {
    std::vector<nn::Linear<T>*> out;
    auto collect = [&](std::vector<nn::CrossAttention<T>*> attn) {
      for (auto* a : attn)
        for (auto* l : a->projections()) out.push_back(l);
    };
    collect(unet_.attention());
    if (branch_) collect(branch_->attention());
    return out;
  }

  nn::Linear<T>* find_linear(const std::string& name) {
    for (auto* l : linears())
      if (l->name == name) return l;
    return nullptr;
  }

  std::vector<std::unique_ptr<nn::LoraAdapter<T>>>& adapters() { return adapters_; }
  const std::vector<std::unique_ptr<nn::LoraAdapter<T>>>& adapters() const { return adapters_; }

  /// Copies every parameter value present in both stores by name.
  template <class U>
  void copy_values_from(const nn::ParamStore<U>& other) {
    store_.for_each([&](nn::Param<T>& p) {
      if (!other.contains(p.name)) return;
      const auto& src = other.get(p.name);
      detail::require_shape(src.value.shape() == p.value.shape(), "shape mismatch copying " + p.name);
      p.value = src.value.template cast<T>();
      p.trainable = src.trainable;
    });
  }

 private:
  ModelConfig cfg_;
  Rng rng_;
  nn::ParamStore<T> store_;
  film::FilmEncoder<T> film_;
  diffusion::UNet<T> unet_;
  std::optional<control::SControlBranch<T>> branch_;
  std::vector<std::unique_ptr<nn::LoraAdapter<T>>> adapters_;
  diffusion::DiffusionSchedule schedule_;
};

}  // namespace scorediff
