#include <gtest/gtest.h>

#include "scorediff/nn/adamw.hpp"
#include "scorediff/nn/gradcheck.hpp"
#include "scorediff/nn/layers.hpp"

using namespace scorediff;
using namespace scorediff::nn;

namespace {

// Builds a scalar loss by projecting the op output onto a fixed random tensor.
Var project(Tape<double>& tp, Var y, std::uint64_t seed) {
  Rng rng(seed);
  auto target = rng.normal_tensor<double>(tp.shape(y));
  return mse(tp, y, tp.constant(target));
}

struct OpFixture {
  ParamStore<double> store;
  Rng rng{17};
  Param<double>& p(const std::string& name, Shape s) { return store.add(name, rng.normal_tensor<double>(s)); }
};

void expect_grads_match(ParamStore<double>& store, const std::function<Var(Tape<double>&)>& f, double tol = 1e-6) {
  const auto rep = gradient_check(store, f, 120, 1e-5);
  EXPECT_LT(rep.max_rel_error, tol) << rep.worst;
  EXPECT_GT(rep.checked, 0u);
}

}  // namespace

TEST(Ops, Conv2dStridedPaddedGradients) {
  OpFixture f;
  auto& x = f.p("x", {2, 3, 7, 6});
  auto& w = f.p("w", {4, 3, 3, 3});
  auto& b = f.p("b", {4});
  auto& w1 = f.p("w1", {5, 4, 1, 1});
  expect_grads_match(f.store, [&](Tape<double>& tp) {
    Var y = conv2d(tp, tp.param(x), tp.param(w), tp.param(b), {2, 1, 1, 1});
    y = conv2d(tp, y, tp.param(w1), Var{}, {});
    return project(tp, y, 1);
  });
}

TEST(Ops, Conv2dMatchesDirectSum) {
  Rng rng(2);
  auto x = rng.normal_tensor<double>({1, 2, 5, 4});
  auto w = rng.normal_tensor<double>({3, 2, 3, 1});
  Tape<double> tp(false);
  const auto y = tp.value(conv2d(tp, tp.constant(x), tp.constant(w), Var{}, {2, 1, 1, 0}));
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 4}));
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t ki = 0; ki < 3; ++ki) {
            const long h = long(i * 2 + ki) - 1;
            if (h >= 0 && h < 5) acc += x.at(0, c, std::size_t(h), j) * w.at(o, c, ki, 0);
          }
        EXPECT_NEAR(y.at(0, o, i, j), acc, 1e-12);
      }
}

TEST(Ops, NormActivationAndShapeOpGradients) {
  OpFixture f;
  auto& x = f.p("x", {2, 4, 3, 2});
  auto& g = f.p("gamma", {4});
  auto& b = f.p("beta", {4});
  auto& e = f.p("e", {2, 4});
  auto& y2 = f.p("y2", {2, 2, 3, 2});
  expect_grads_match(f.store, [&](Tape<double>& tp) {
    Var h = group_norm(tp, tp.param(x), tp.param(g), tp.param(b), 2);
    h = silu(tp, add_channel_bias(tp, h, tp.param(e)));
    h = concat_channels(tp, h, tp.param(y2));
    h = upsample_nearest(tp, h, 2, 1);
    h = permute(tp, h, {0, 2, 3, 1});
    h = reshape(tp, scale(tp, h, 0.7), {2, 72});
    return project(tp, h, 2);
  });
}

TEST(Ops, LinearAttentionPrimitivesGradients) {
  OpFixture f;
  auto& x = f.p("x", {2, 5, 3});
  auto& w = f.p("w", {4, 3});
  auto& wt = f.p("wt", {4, 6});
  auto& bias = f.p("b", {4});
  auto& ctx = f.p("ctx", {2, 2, 4});
  auto& table = f.p("table", {5, 3});
  auto& null = f.p("null", {1, 3});
  expect_grads_match(f.store, [&](Tape<double>& tp) {
    Var q = linear(tp, tp.param(x), tp.param(w), tp.param(bias));          // [2,5,4]
    Var s = softmax_last(tp, batched_matmul(tp, q, tp.param(ctx), true));  // [2,5,2]
    Var a = batched_matmul(tp, s, tp.param(ctx), false);                   // [2,5,4]
    Var l = linear(tp, a, tp.param(wt), Var{}, true);                      // [2,5,6]
    Var r = gather_rows(tp, tp.param(table), {4, 1});
    Var sel = select_null(tp, reshape(tp, r, {2, 1, 3}), tp.param(null), {false, true});
    return add(tp, project(tp, l, 3), project(tp, sel, 4));
  });
}

TEST(Layers, ResBlockAndCrossAttentionGradients) {
  ParamStore<double> store;
  Rng rng(5);
  Builder<double> b(store, rng, "");
  auto res = ResBlock<double>::make(b.sub("res"), 4, 8, 6, 2);
  auto attn = CrossAttention<double>::make(b.sub("attn"), 8, 5, 4);
  auto& x = store.add("x", rng.normal_tensor<double>({2, 4, 4, 2}));
  auto& t = store.add("t", rng.normal_tensor<double>({2, 6}));
  auto& ctx = store.add("ctx", rng.normal_tensor<double>({2, 3, 5}));
  expect_grads_match(store, [&](Tape<double>& tp) {
    Var h = res(tp, tp.param(x), silu(tp, tp.param(t)));
    h = attn(tp, h, tp.param(ctx));
    return project(tp, h, 6);
  }, 1e-5);
}

TEST(Layers, SingleTokenAttentionWeightsAreOne) {
  Tape<double> tp(false);
  Rng rng(1);
  Var s = softmax_last(tp, tp.constant(rng.normal_tensor<double>({2, 7, 1})));
  for (double v : tp.value(s).values()) EXPECT_EQ(v, 1.0);
}

TEST(Layers, LinearGradientExact) {
  ParamStore<double> store;
  Rng rng(8);
  Builder<double> b(store, rng, "");
  auto lin = b.linear("lin", 6, 3);
  auto& x = store.add("x", rng.normal_tensor<double>({4, 6}));
  const auto rep = gradient_check(store, [&](Tape<double>& tp) { return project(tp, lin(tp, tp.param(x)), 9); }, 100, 1e-4);
  EXPECT_LT(rep.max_rel_error, 1e-8) << rep.worst;
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParamsUnchanged) {
  ParamStore<float> store;
  Rng rng(3);
  store.add("p", rng.normal_tensor<float>({10}));
  const auto before = store.get("p").value;
  AdamW<float> opt({1e-3, 0.9, 0.999, 1e-8, 0.0, 1.0});
  store.zero_grad();
  for (int i = 0; i < 5; ++i) opt.step(store);
  EXPECT_EQ(store.get("p").value, before);
}

TEST(AdamW, FrozenParamsUntouchedAndDecayApplies) {
  ParamStore<float> store;
  store.add("a", Tensor<float>({3}, 1.0f));
  store.add("frozen", Tensor<float>({3}, 1.0f), false);
  store.zero_grad();
  AdamW<float> opt({0.1, 0.9, 0.999, 1e-8, 0.01, 0});
  opt.step(store);
  EXPECT_EQ(store.get("frozen").value[0], 1.0f);
  EXPECT_NEAR(store.get("a").value[0], 1.0f - 0.1f * 0.01f, 1e-7);
}

TEST(ParamStore, DuplicateNamesRejected) {
  ParamStore<float> s;
  s.add("x", Tensor<float>({1}));
  EXPECT_THROW(s.add("x", Tensor<float>({1})), ParameterError);
  EXPECT_THROW(s.get("y"), ParameterError);
}
