#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "scorediff/core/rng.hpp"
#include "scorediff/core/tensor.hpp"

namespace scorediff::nn {

/// A named trainable tensor with its gradient and AdamW moments.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;
  Tensor<T> v;
  bool trainable = true;

  std::size_t size() const { return value.size(); }
  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    else grad.fill(T(0));
  }
};

/// Owns every parameter of a model, keyed by unique name. Iteration is in
/// name order so optimisation and serialisation are deterministic.
template <class T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, Tensor<T> init, bool trainable = true) {
    auto [it, inserted] = params_.try_emplace(name, nullptr);
    if (!inserted) throw ParameterError("duplicate parameter name " + name);
    it->second = std::make_unique<Param<T>>();
    auto& p = *it->second;
    p.name = name;
    p.value = std::move(init);
    p.grad = Tensor<T>(p.value.shape());
    p.trainable = trainable;
    return p;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  Param<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ParameterError("no parameter named " + name);
    return *it->second;
  }
  const Param<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ParameterError("no parameter named " + name);
    return *it->second;
  }

  template <class F>
  void for_each(F&& f) {
    for (auto& [name, p] : params_) f(*p);
  }
  template <class F>
  void for_each(F&& f) const {
    for (const auto& [name, p] : params_) f(static_cast<const Param<T>&>(*p));
  }

  std::size_t count(const std::function<bool(const Param<T>&)>& pred = nullptr) const {
    std::size_t n = 0;
    for_each([&](const Param<T>& p) {
      if (!pred || pred(p)) n += p.size();
    });
    return n;
  }

  void zero_grad() {
    for_each([](Param<T>& p) { p.zero_grad(); });
  }

  void set_trainable_prefix(const std::string& prefix, bool trainable) {
    for_each([&](Param<T>& p) {
      if (p.name.rfind(prefix, 0) == 0) p.trainable = trainable;
    });
  }

  std::size_t size() const { return params_.size(); }

  /// Copy of every value converted to another scalar type.
  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for_each([&](const Param<T>& p) { out.add(p.name, p.value.template cast<U>(), p.trainable); });
    return out;
  }

 private:
  std::map<std::string, std::unique_ptr<Param<T>>> params_;
};

/// Normal(0, 1/sqrt(fan_in)) initialisation.
template <class T>
Tensor<T> fan_in_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  return rng.normal_tensor<T>(std::move(shape), 1.0 / std::sqrt(double(fan_in)));
}

}  // namespace scorediff::nn
