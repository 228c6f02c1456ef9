#include <gtest/gtest.h>

#include "scorediff/diffusion/codec.hpp"
#include "scorediff/diffusion/ddim.hpp"
#include "scorediff/diffusion/gradcheck.hpp"
#include "support/models.hpp"

using namespace scorediff;
using namespace scorediff::diffusion;
using testing_support::small_config;

TEST(Schedule, SingleStep) {
  const auto s = build_schedule(1, 0.1, 0.1);
  ASSERT_EQ(s.alpha_bars.size(), 1u);
  EXPECT_DOUBLE_EQ(s.alpha_bars[0], 0.9);
}

TEST(Schedule, DefaultEndsNearZeroAndDecreases) {
  const auto s = build_schedule(1000, 1e-4, 0.02);
  double prod = 1;
  for (std::size_t i = 0; i < 1000; ++i) prod *= 1 - (1e-4 + (0.02 - 1e-4) * double(i) / 999.0);
  EXPECT_NEAR(s.alpha_bars.back(), prod, 1e-12);
  EXPECT_LT(s.alpha_bars.back(), 0.01);
  for (std::size_t i = 1; i < s.M; ++i) EXPECT_LT(s.alpha_bars[i], s.alpha_bars[i - 1]);
  EXPECT_GT(s.alpha_bars.back(), 0.0);
  EXPECT_LT(s.alpha_bars.front(), 1.0);
}

TEST(Schedule, RandomValidRangesAreMonotone) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const double a = rng.uniform(1e-5, 0.2), b = rng.uniform(a, 0.5);
    const auto s = build_schedule(std::size_t(rng.integer(1, 300)), a, b);
    for (std::size_t k = 1; k < s.M; ++k) EXPECT_LT(s.alpha_bars[k], s.alpha_bars[k - 1]);
    for (double v : s.alpha_bars) EXPECT_TRUE(v > 0 && v < 1);
  }
}

TEST(Schedule, InvalidRangesRejected) {
  EXPECT_THROW(build_schedule(0), ParameterError);
  EXPECT_THROW(build_schedule(10, 0.0, 0.1), ParameterError);
  EXPECT_THROW(build_schedule(10, 0.2, 0.1), ParameterError);
  EXPECT_THROW(build_schedule(10, 0.1, 1.0), ParameterError);
}

TEST(ForwardDiffuse, ZeroNoiseScalesInput) {
  const auto s = build_schedule();
  Rng rng(1);
  const auto z0 = rng.normal_tensor<double>({1, 4, 4});
  const auto out = forward_diffuse(z0, 300, Tensor<double>(z0.shape()), s);
  for (std::size_t i = 0; i < z0.size(); ++i) EXPECT_DOUBLE_EQ(out[i], std::sqrt(s.alpha_bar(300)) * z0[i]);
  EXPECT_THROW(forward_diffuse(z0, 1, Tensor<double>({1, 4, 5}), s), ShapeError);
  EXPECT_THROW(forward_diffuse(z0, 0, Tensor<double>(z0.shape()), s), ParameterError);
}

TEST(ForwardDiffuse, MatchesStepwiseNoisingInDistribution) {
  const auto s = build_schedule(200, 1e-3, 0.05);
  const std::size_t m = 120, draws = 10000;
  const double z0 = 1.7;
  Rng a(8), b(9);
  std::vector<double> closed, stepwise;
  for (std::size_t i = 0; i < draws; ++i) {
    Tensor<double> x({1}, z0), e({1}, a.normal());
    closed.push_back(forward_diffuse(x, m, e, s)[0]);
    double v = z0;
    for (std::size_t k = 0; k < m; ++k) v = std::sqrt(1 - s.betas[k]) * v + std::sqrt(s.betas[k]) * b.normal();
    stepwise.push_back(v);
  }
  auto moments = [](const std::vector<double>& x) {
    double mu = 0, var = 0;
    for (double v : x) mu += v / double(x.size());
    for (double v : x) var += (v - mu) * (v - mu) / double(x.size() - 1);
    return std::pair{mu, var};
  };
  const auto [m1, v1] = moments(closed);
  const auto [m2, v2] = moments(stepwise);
  const double var_true = 1 - s.alpha_bar(m);
  const double se_mean = std::sqrt(var_true / draws);
  const double se_var = var_true * std::sqrt(2.0 / double(draws - 1));
  EXPECT_NEAR(m1, m2, 3 * std::sqrt(2.0) * se_mean);
  EXPECT_NEAR(v1, v2, 3 * std::sqrt(2.0) * se_var);
  EXPECT_NEAR(m2, std::sqrt(s.alpha_bar(m)) * z0, 3 * se_mean);
}

TEST(ForwardDiffuse, FinalStepIsAlmostPureNoise) {
  const auto s = build_schedule();
  Rng rng(3);
  const auto z0 = rng.normal_tensor<double>({1, 32, 32});
  const auto eps = rng.normal_tensor<double>(z0.shape());
  const auto out = forward_diffuse(z0, s.M, eps, s);
  double zz = 0, zo = 0, oo = 0, ee = 0, eo = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    zz += z0[i] * z0[i];
    zo += z0[i] * out[i];
    oo += out[i] * out[i];
    ee += eps[i] * eps[i];
    eo += eps[i] * out[i];
  }
  EXPECT_LT(std::abs(zo / std::sqrt(zz * oo)), 0.1);
  EXPECT_GT(eo / std::sqrt(ee * oo), 0.99);
}

TEST(UNet, OutputShapeEqualsInput) {
  ScoreModel<float> m(small_config());
  Rng rng(1);
  for (auto shape : {Shape{1, 1, 8, 8}, Shape{2, 1, 4, 12}, Shape{3, 1, 16, 8}}) {
    const auto z = rng.normal_tensor<float>(shape);
    EXPECT_EQ(unet_forward(m, z, 10, testing_support::random_c_film(rng)).shape(), shape);
  }
  EXPECT_THROW(unet_forward(m, rng.normal_tensor<float>({1, 1, 7, 8}), 10, std::nullopt), ShapeError);
  EXPECT_THROW(unet_forward(m, rng.normal_tensor<float>({1, 2, 8, 8}), 10, std::nullopt), ShapeError);
  EXPECT_THROW(unet_forward(m, rng.normal_tensor<float>({1, 1, 8, 8}), 1001, std::nullopt), ParameterError);
}

TEST(UNet, ConditioningChangesOutput) {
  ScoreModel<float> m(small_config());
  testing_support::randomize_output_layer(m, 2);
  Rng rng(5);
  const auto z = rng.normal_tensor<float>({1, 1, 8, 8});
  const auto a = unet_forward(m, z, 100, testing_support::random_c_film(rng));
  const auto b = unet_forward(m, z, 100, testing_support::random_c_film(rng));
  const auto u = unet_forward<float>(m, z, 100, std::nullopt);
  EXPECT_GT(relative_l2(a, b), 0.0);
  EXPECT_GT(relative_l2(a, u), 0.0);
}

TEST(UNet, FreshModelPredictsZeroNoise) {
  ScoreModel<float> m(small_config());
  Rng rng(5);
  const auto out = unet_forward(m, rng.normal_tensor<float>({2, 1, 8, 8}), 500, testing_support::random_c_film(rng));
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(UNet, ParameterNamesUniqueAndPrefixed) {
  ScoreModel<float> m(small_config());
  m.add_branch();
  std::size_t base = 0, branch = 0, film = 0;
  m.store().for_each([&](const nn::Param<float>& p) {
    base += p.name.rfind("base.", 0) == 0;
    branch += p.name.rfind("branch.", 0) == 0;
    film += p.name.rfind("film.", 0) == 0;
  });
  EXPECT_EQ(base + branch + film, m.store().size());
  EXPECT_GT(branch, 0u);
  EXPECT_EQ(m.linears().size(), 3u * 4 + 2u * 4);
}

namespace {
TrainBatch<float> random_batch(Rng& rng, const ModelConfig& c, std::size_t n) {
  TrainBatch<float> b;
  b.z0 = rng.normal_tensor<float>({n, 1, 8, 8});
  for (std::size_t i = 0; i < n; ++i) b.film.push_back(testing_support::random_film(rng, c));
  return b;
}
}  // namespace

TEST(Train, InitialLossIsUnitPerElement) {
  ScoreModel<float> m(small_config());
  Trainer<float> tr(m, Stage::Base, {});
  Rng rng(11);
  double total = 0;
  for (int i = 0; i < 5; ++i) {
    auto b = random_batch(rng, m.config(), 8);
    Tape<float> tp;
    total += double(tp.value(tr.loss_graph(tp, b, tr.draw(b)))[0]);
  }
  EXPECT_GT(total / 5, 0.9);
  EXPECT_LT(total / 5, 1.1);
}

TEST(Train, IdenticalRunsGiveBitwiseIdenticalParameters) {
  auto run = [] {
    auto m = std::make_unique<ScoreModel<float>>(small_config());
    Trainer<float> tr(*m, Stage::Base, {});
    Rng rng(3);
    for (int i = 0; i < 10; ++i) tr.step(random_batch(rng, m->config(), 4));
    return m;
  };
  auto a = run(), b = run();
  bool moved = false;
  a->store().for_each([&](const nn::Param<float>& p) {
    EXPECT_EQ(p.value, b->store().get(p.name).value) << p.name;
  });
  ScoreModel<float> fresh(small_config());
  a->store().for_each([&](const nn::Param<float>& p) { moved = moved || !(p.value == fresh.store().get(p.name).value); });
  EXPECT_TRUE(moved);
}

TEST(Train, LossDecreasesOnAFixedBatch) {
  ScoreModel<float> m(small_config());
  TrainConfig tc;
  tc.optimizer.lr = 2e-3;
  tc.cond_dropout = 0;
  Trainer<float> tr(m, Stage::Base, tc);
  Rng rng(6);
  auto b = random_batch(rng, m.config(), 4);
  auto d = tr.draw(b);
  auto loss_now = [&] {
    Tape<float> tp(false);
    return double(tp.value(tr.loss_graph(tp, b, d))[0]);
  };
  const double before = loss_now();
  for (int i = 0; i < 30; ++i) {
    m.store().zero_grad();
    Tape<float> tp;
    auto l = tr.loss_graph(tp, b, d);
    tp.backward(l);
    tr.optimizer().step(m.store());
  }
  EXPECT_LT(loss_now(), 0.8 * before);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
  ScoreModel<float> m(small_config());
  Trainer<float> tr(m, Stage::Base, {});
  Rng rng(1);
  auto b = random_batch(rng, m.config(), 2);
  b.z0[3] = NAN;
  try {
    tr.step(b);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss"), std::string::npos);
  }
}

TEST(Train, OutputBiasGradientMatchesClosedForm) {
  // with a zero output conv the prediction is 0, so dL/db = -2 mean(eps)
  ScoreModel<double> m(small_config());
  Trainer<double> tr(m, Stage::Base, {});
  Rng rng(2);
  TrainBatch<double> b;
  b.z0 = rng.normal_tensor<double>({3, 1, 8, 8});
  for (int i = 0; i < 3; ++i) b.film.push_back(testing_support::random_film(rng, m.config()));
  const auto d = tr.draw(b);
  m.store().zero_grad();
  Tape<double> tp;
  tp.backward(tr.loss_graph(tp, b, d));
  double mean_eps = 0;
  for (double e : d.eps.values()) mean_eps += e / double(d.eps.size());
  EXPECT_NEAR(m.store().get("base.out.conv.b").grad[0], -2 * mean_eps, 1e-12);
}

TEST(GradCheck, LinearLayerIsExact) {
  nn::ParamStore<double> store;
  Rng rng(1);
  nn::Builder<double> b(store, rng, "");
  auto lin = b.linear("lin", 7, 5);
  for (auto& v : store.get("lin.b").value.values()) v = rng.normal();
  const auto x = rng.normal_tensor<double>({6, 7});
  const auto target = rng.normal_tensor<double>({6, 5});
  const auto rep = nn::gradient_check(store, [&](nn::Tape<double>& tp) {
    return nn::mse(tp, lin(tp, tp.constant(x)), tp.constant(target));
  }, 100, 1e-4);
  EXPECT_EQ(rep.checked, 100u);
  EXPECT_LT(rep.max_rel_error, 1e-8) << rep.worst;
}

TEST(GradCheck, FullModelWithBranch) {
  ModelGradCheckConfig g;
  g.samples = 150;
  const auto rep = model_gradient_check(small_config(), g);
  EXPECT_GE(rep.checked, 100u);
  EXPECT_LT(rep.max_rel_error, 1e-3) << rep.worst;
}

TEST(Ddim, TimestepsAreUniformAndDescending) {
  const auto t = ddim_timesteps(1000, 200);
  ASSERT_EQ(t.size(), 200u);
  EXPECT_EQ(t.front(), 996u);
  EXPECT_EQ(t.back(), 1u);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_EQ(t[i - 1] - t[i], 5u);
  EXPECT_EQ(ddim_timesteps(10, 10).front(), 10u);
  EXPECT_THROW(ddim_timesteps(10, 11), ParameterError);
}

TEST(Ddim, UnitGuidanceIsTheConditionalPass) {
  ScoreModel<float> m(small_config());
  testing_support::randomize_output_layer(m, 4);
  Rng rng(2);
  const auto z = rng.normal_tensor<float>({1, 1, 8, 8});
  const auto c = testing_support::random_c_film(rng);
  EXPECT_EQ(guided_eps(m, z, 50, c, 1.0), unet_forward(m, z, 50, std::optional(c)));
  const auto cond = unet_forward(m, z, 50, std::optional(c));
  const auto unc = unet_forward<float>(m, z, 50, std::nullopt);
  const auto g = guided_eps(m, z, 50, c, 7.5);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], unc[i] + 7.5f * (cond[i] - unc[i]), 1e-5);
}

TEST(Ddim, SamplingIsDeterministicAndBounded) {
  ScoreModel<float> m(small_config());
  testing_support::randomize_output_layer(m, 9, 0.02);
  Rng rng(1);
  const auto c = testing_support::random_c_film(rng);
  SampleConfig sc{20, 7.5};
  const auto a = ddim_sample(m, sc, c, 77, {1, 8, 8});
  const auto b = ddim_sample(m, sc, c, 77, {1, 8, 8});
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.all_finite());
  EXPECT_NE(a, ddim_sample(m, sc, c, 78, {1, 8, 8}));
  sc.steps = 1001;
  EXPECT_THROW(ddim_sample(m, sc, c, 1, {1, 8, 8}), ParameterError);
}

TEST(Ddim, PerfectNoisePredictorRecoversTheStartingLatent) {
  // eps_fn returning the true noise inverts the forward process exactly
  const auto s = build_schedule(1000);
  Rng rng(12);
  const auto z0 = rng.normal_tensor<double>({1, 1, 4, 4});
  const auto eps = rng.normal_tensor<double>(z0.shape());
  const auto zT = forward_diffuse(z0, ddim_timesteps(1000, 50).front(), eps, s);
  const auto out = ddim_loop<double>(s, 50, zT, [&](const Tensor<double>&, std::size_t) { return eps; });
  for (std::size_t i = 0; i < z0.size(); ++i) EXPECT_NEAR(out[i], z0[i], 1e-9);
}

namespace {
MelSpectrogram synthetic_mel(std::size_t frames, std::size_t bins, std::uint64_t seed) {
  Rng rng(seed);
  MelSpectrogram m;
  m.frames = frames;
  m.mel_bins = bins;
  const std::size_t band = std::size_t(rng.integer(4, std::int64_t(bins) - 8));
  const double level = rng.uniform(-2, 3);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t f = 0; f < bins; ++f)
      m.values.push_back(f >= band && f < band + 4 && (t / 8) % 2 == 0 ? level : m.log_floor);
  return m;
}
}  // namespace

TEST(Codec, IdentityModeRoundTripsBitwise) {
  LatentCodec<double> codec(CodecConfig{1, 1});
  auto mel = synthetic_mel(16, 64, 1);
  Rng rng(3);
  for (auto& v : mel.values) v += rng.uniform(0, 1e-3);
  const auto z = codec.encode(mel);
  EXPECT_EQ(z.shape(), (Shape{1, 16, 64}));
  EXPECT_EQ(codec.decode(z).values, mel.values);
}

TEST(Codec, FloatIdentityModeRoundTripsRepresentableValues) {
  LatentCodec<float> codec(CodecConfig{1, 1});
  auto mel = synthetic_mel(16, 64, 1);
  for (auto& v : mel.values) v = double(float(v));
  mel.log_floor = double(float(mel.log_floor));
  EXPECT_EQ(codec.decode(codec.encode(mel), MelConfig{64, 0, 8000, mel.log_floor}).values, mel.values);
}

TEST(Codec, ShapesAndDivisibility) {
  LatentCodec<float> codec;
  const auto mel = synthetic_mel(32, 64, 2);
  const auto z = codec.encode(mel);
  EXPECT_EQ(z.shape(), (Shape{1, 8, 16}));
  const auto back = codec.decode(z);
  EXPECT_EQ(back.frames, 32u);
  EXPECT_EQ(back.mel_bins, 64u);
  EXPECT_THROW(codec.encode(synthetic_mel(30, 64, 2)), ParameterError);
}

TEST(Codec, TrainingReachesLowReconstructionError) {
  std::vector<MelSpectrogram> mels;
  for (std::uint64_t i = 0; i < 24; ++i) mels.push_back(synthetic_mel(32, 64, i));
  LatentCodec<float> codec;
  CodecTrainConfig tc;
  tc.steps = 400;
  tc.batch = 4;
  const auto losses = train_codec(codec, mels, tc);
  EXPECT_LT(losses.back(), losses.front());
  double num = 0, den = 0;
  for (std::uint64_t i = 100; i < 110; ++i) {
    const auto mel = synthetic_mel(32, 64, i);
    const auto rec = codec.decode(codec.encode(mel));
    for (std::size_t k = 0; k < rec.values.size(); ++k) {
      num += (rec.values[k] - mel.values[k]) * (rec.values[k] - mel.values[k]);
      den += mel.values[k] * mel.values[k];
    }
  }
  EXPECT_LT(std::sqrt(num / den), 0.15);
}
