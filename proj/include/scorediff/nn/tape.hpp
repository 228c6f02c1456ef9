#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "scorediff/core/tensor.hpp"
#include "scorediff/nn/params.hpp"

namespace scorediff::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff record. Each op pushes its output value and, when
/// any input needs a gradient, a closure that propagates the output
/// gradient back to its inputs. Parameters are leaves whose gradient is
/// accumulated into Param::grad when backward() runs.
template <class T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  /// Leaf that can receive a gradient (read it back with grad()).
  Var leaf(Tensor<T> v, bool requires_grad = true) {
    return push(std::move(v), grad_enabled_ && requires_grad, nullptr);
  }

  Var param(Param<T>& p) {
    const bool rg = grad_enabled_ && p.trainable;
    Var out = push(p.value, rg, nullptr);
    if (rg) {
      const int id = out.id;
      nodes_[std::size_t(id)].backward = [this, id, &p] {
        const auto& g = nodes_[std::size_t(id)].grad;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
        for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
      };
    }
    return out;
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(std::size_t(v.id)).value; }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return v.valid() && nodes_[std::size_t(v.id)].requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor<T>& grad_ref(Var v) {
    auto& n = nodes_[std::size_t(v.id)];
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  const Tensor<T>& grad(Var v) const { return nodes_.at(std::size_t(v.id)).grad; }

  /// Records an op output. `bw` runs during backward() if the output
  /// requires a gradient and one has reached it.
  Var push(Tensor<T> value, bool requires_grad, std::function<void()> bw) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    if (n.requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  bool any_requires_grad(std::initializer_list<Var> vs) const {
    if (!grad_enabled_) return false;
    for (Var v : vs)
      if (requires_grad(v)) return true;
    return false;
  }

  void backward(Var loss) {
    detail::require_shape(value(loss).size() == 1, "backward needs a scalar loss");
    if (!requires_grad(loss)) return;
    grad_ref(loss)[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[std::size_t(i)];
      if (n.requires_grad && n.backward && n.grad.size() == n.value.size() && !n.value.empty())
        n.backward();
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// C(m x n) (+)= op(A) * op(B) on row-major buffers.
template <class T>
void gemm(const T* A, bool ta, const T* B, bool tb, T* C, std::size_t m, std::size_t n, std::size_t k,
          bool accumulate) {
  using I = Eigen::Index;
  ConstMatMap<T> a(A, I(ta ? k : m), I(ta ? m : k));
  ConstMatMap<T> b(B, I(tb ? n : k), I(tb ? k : n));
  MatMap<T> c(C, I(m), I(n));
  if (!accumulate) c.setZero();
  if (!ta && !tb) c.noalias() += a * b;
  else if (ta && !tb) c.noalias() += a.transpose() * b;
  else if (!ta && tb) c.noalias() += a * b.transpose();
  else c.noalias() += a.transpose() * b.transpose();
}

}  // namespace detail
}  // namespace scorediff::nn
