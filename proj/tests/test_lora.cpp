#include <gtest/gtest.h>

#include "support/models.hpp"

using namespace scorediff;
using namespace scorediff::lora;
using nn::Var;
using testing_support::small_config;

namespace {

struct Layer {
  nn::ParamStore<double> store;
  nn::Linear<double> lin;
  std::vector<std::unique_ptr<LoraAdapter<double>>> adapters;

  Layer(std::size_t in, std::size_t out, std::uint64_t seed = 1) {
    Rng rng(seed);
    nn::Builder<double> b(store, rng, "");
    lin = b.linear("proj", in, out);
    for (auto& v : store.get("proj.b").value.values()) v = rng.normal();
  }
};

void randomize(LoraAdapter<double>& a, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : a.B->value.values()) v = rng.normal();
}

double max_rel(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]) / std::max(1e-12, std::abs(b[i])));
  return m;
}

}  // namespace

TEST(Attach, FreshAdapterLeavesOutputBitwise) {
  Layer l(16, 12);
  auto& a = attach(l.store, l.adapters, l.lin, 3, 8.0, 2);
  for (double v : a.B->value.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(a.A->value.shape(), (Shape{3, 16}));
  EXPECT_EQ(a.B->value.shape(), (Shape{12, 3}));
  Rng rng(3);
  const auto x = rng.normal_tensor<double>({5, 16});
  nn::Tape<double> tp(false);
  Var base = nn::linear(tp, tp.constant(x), tp.constant(l.lin.w->value), tp.constant(l.lin.b->value));
  EXPECT_EQ(adapted_forward(x, l.lin, a), tp.value(base));
  EXPECT_EQ(tp.value(l.lin(tp, tp.constant(x))), tp.value(base));
  EXPECT_FALSE(l.lin.w->trainable);
  EXPECT_FALSE(l.lin.b->trainable);
}

TEST(Attach, RankBounds) {
  Layer l(16, 12);
  EXPECT_THROW(attach(l.store, l.adapters, l.lin, 12, 8.0, 2), ParameterError);  // r = min(d,k), strict
  EXPECT_THROW(attach(l.store, l.adapters, l.lin, 4, 8.0, 2), ParameterError);   // 4 > 12/4
  EXPECT_THROW(attach(l.store, l.adapters, l.lin, 13, 8.0, 2, false), ParameterError);
  EXPECT_THROW(attach(l.store, l.adapters, l.lin, 0, 8.0, 2, false), ParameterError);
  attach(l.store, l.adapters, l.lin, 12, 8.0, 2, false);
  EXPECT_THROW(attach(l.store, l.adapters, l.lin, 1, 8.0, 2, false), ParameterError);  // already attached
}

TEST(Attach, UnknownLayerRejected) {
  ScoreModel<float> m(small_config());
  m.add_branch();
  EXPECT_THROW(attach(m, "branch.nope.to_q", 1, 8.0, 1), ParameterError);
}

TEST(AdaptedForward, RankOneMatchesDenseOracle) {
  Layer l(6, 5);
  auto& a = attach(l.store, l.adapters, l.lin, 1, 2.5, 4, false);
  Rng rng(5);
  for (auto& v : a.A->value.values()) v = rng.normal();
  randomize(a, 6);
  const auto x = rng.normal_tensor<double>({4, 6});
  const auto y = adapted_forward(x, l.lin, a);
  const auto& W = l.lin.w->value;
  const auto& b = l.lin.b->value;
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t o = 0; o < 5; ++o) {
      double ref = b[o];
      for (std::size_t i = 0; i < 6; ++i) ref += (W[o * 6 + i] + 2.5 * a.B->value[o] * a.A->value[i]) * x[n * 6 + i];
      EXPECT_NEAR(y[n * 5 + o], ref, 1e-7);
    }
  EXPECT_THROW(adapted_forward(rng.normal_tensor<double>({4, 7}), l.lin, a), ShapeError);
}

TEST(AdaptedForward, ZeroAlphaAndLinearityInAlpha) {
  Layer l(8, 8);
  auto& a = attach(l.store, l.adapters, l.lin, 2, 0.0, 7);
  randomize(a, 8);
  Rng rng(9);
  const auto x = rng.normal_tensor<double>({3, 8});
  const auto y0 = adapted_forward(x, l.lin, a);
  nn::Tape<double> tp(false);
  EXPECT_EQ(y0, tp.value(nn::linear(tp, tp.constant(x), tp.constant(l.lin.w->value), tp.constant(l.lin.b->value))));
  a.alpha = 3.0;
  const auto y1 = adapted_forward(x, l.lin, a);
  a.alpha = 6.0;
  const auto y2 = adapted_forward(x, l.lin, a);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y2[i] - y0[i], 2 * (y1[i] - y0[i]), 1e-6);
}

TEST(Merge, MatchesAdaptedForwardAndUnmergeRestores) {
  Layer l(24, 20);
  auto& a = attach(l.store, l.adapters, l.lin, 4, 8.0, 10);
  randomize(a, 11);
  const auto w0 = l.lin.w->value;
  Rng rng(12);
  std::vector<Tensor<double>> xs, before;
  for (int i = 0; i < 100; ++i) {
    xs.push_back(rng.normal_tensor<double>({1, 24}));
    before.push_back(adapted_forward(xs.back(), l.lin, a));
  }
  merge(l.lin, a);
  EXPECT_THROW(merge(l.lin, a), ParameterError);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    nn::Tape<double> tp(false);
    const auto merged = tp.value(l.lin(tp, tp.constant(xs[std::size_t(i)])));
    worst = std::max(worst, max_rel(merged, before[std::size_t(i)]));
    EXPECT_EQ(adapted_forward(xs[std::size_t(i)], l.lin, a), merged);
  }
  EXPECT_LT(worst, 1e-6);
  unmerge(l.lin, a);
  EXPECT_LT(max_rel(l.lin.w->value, w0), 1e-6);
  EXPECT_THROW(unmerge(l.lin, a), ParameterError);
}

TEST(Merge, ZeroAdapterLeavesWeightsBitwise) {
  Layer l(16, 16);
  auto& a = attach(l.store, l.adapters, l.lin, 2, 8.0, 13);
  const auto w0 = l.lin.w->value;
  merge(l.lin, a);
  EXPECT_EQ(l.lin.w->value, w0);
}

TEST(Report, CountsAndRatio) {
  ScoreModel<float> m(small_config());
  m.add_branch();
  const auto none = trainable_parameter_report(m);
  EXPECT_EQ(none.lora_count, 0u);
  EXPECT_GT(none.full_count, 0u);

  const std::size_t attn = m.branch().attention().size();
  LoraConfig cfg;
  cfg.rank = 2;
  EXPECT_EQ(attach_branch(m, cfg), 3 * attn);
  EXPECT_EQ(m.adapters().size(), 3 * attn);
  const auto r2 = trainable_parameter_report(m);

  ScoreModel<float> m4(small_config());
  m4.add_branch();
  cfg.rank = 4;
  attach_branch(m4, cfg);
  const auto r4 = trainable_parameter_report(m4);
  EXPECT_EQ(r4.lora_count, 2 * r2.lora_count);

  std::size_t expect = 0;
  for (auto* a : m4.branch().attention())
    for (auto* l : {&a->q, &a->k, &a->v}) expect += 4 * (l->in + l->out);
  EXPECT_EQ(r4.lora_count, expect);
  EXPECT_EQ(r4.full_count, none.full_count);
}

TEST(Report, DefaultToyBranchRatioBelowQuarter) {
  ScoreModel<float> m(ModelConfig{});
  m.add_branch();
  attach_branch(m, LoraConfig{});
  const auto r = trainable_parameter_report(m);
  EXPECT_LT(r.ratio, 0.25);
  EXPECT_GT(r.lora_count, 0u);
}

TEST(Training, OnlyAdaptersAndBranchOnlyLayersGetGradients) {
  ScoreModel<float> m(small_config());
  testing_support::randomize_output_layer(m, 1);
  m.add_branch();
  attach_branch(m, LoraConfig{1, 8.0});
  diffusion::TrainConfig tc;
  tc.control_dropout = 0;
  diffusion::Trainer<float> tr(m, diffusion::Stage::Branch, tc, true);
  Rng rng(2);
  std::vector<control::StyleControls> ctl{testing_support::random_controls(rng, 32)};
  diffusion::TrainBatch<float> b;
  b.z0 = rng.normal_tensor<float>({1, 1, 8, 8});
  b.film.push_back(testing_support::random_film(rng, m.config()));
  b.controls.push_back(&ctl[0]);
  std::map<std::string, Tensor<float>> frozen;
  m.store().for_each([&](const nn::Param<float>& p) {
    if (!p.trainable) frozen[p.name] = p.value;
  });
  EXPECT_GT(frozen.size(), 0u);
  EXPECT_TRUE(frozen.count("branch.down1.attn.to_q.w"));
  for (int i = 0; i < 3; ++i) tr.step(b);
  bool lora_moved = false;
  m.store().for_each([&](const nn::Param<float>& p) {
    if (!p.trainable) {
      for (float g : p.grad.values()) ASSERT_EQ(g, 0.0f) << p.name;
      EXPECT_EQ(p.value, frozen[p.name]) << p.name;
    } else {
      EXPECT_TRUE(p.name.rfind("lora.", 0) == 0 || control::SControlBranch<float>::is_new_layer(p.name)) << p.name;
      if (p.name.rfind("lora.", 0) == 0 && p.name.back() == 'B')
        for (float v : p.value.values()) lora_moved = lora_moved || v != 0.0f;
    }
  });
  EXPECT_TRUE(lora_moved);
}
