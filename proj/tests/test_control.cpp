#include <gtest/gtest.h>

#include "support/models.hpp"

using namespace scorediff;
using namespace scorediff::control;
using namespace scorediff::diffusion;
using testing_support::random_c_film;
using testing_support::random_controls;
using testing_support::small_config;

namespace {

TrainBatch<float> branch_batch(Rng& rng, const ModelConfig& c, const std::vector<StyleControls>& ctl) {
  TrainBatch<float> b;
  b.z0 = rng.normal_tensor<float>({ctl.size(), 1, 8, 8});
  for (const auto& x : ctl) {
    b.film.push_back(testing_support::random_film(rng, c));
    b.controls.push_back(&x);
  }
  return b;
}

void train_base_a_little(ScoreModel<float>& m, int steps = 3) {
  Trainer<float> tr(m, Stage::Base, {});
  Rng rng(17);
  for (int i = 0; i < steps; ++i) {
    TrainBatch<float> b;
    b.z0 = rng.normal_tensor<float>({2, 1, 8, 8});
    for (int k = 0; k < 2; ++k) b.film.push_back(testing_support::random_film(rng, m.config()));
    tr.step(b);
  }
}

void train_branch(ScoreModel<float>& m, int steps, double lr = 1e-2) {
  TrainConfig tc;
  tc.optimizer.lr = lr;
  tc.control_dropout = 0;
  Trainer<float> tr(m, Stage::Branch, tc);
  Rng rng(23);
  std::vector<StyleControls> ctl{random_controls(rng, 32), random_controls(rng, 32)};
  for (int i = 0; i < steps; ++i) tr.step(branch_batch(rng, m.config(), ctl));
}

}  // namespace

TEST(Branch, ReplicatedBlocksEqualBaseBitwise) {
  ScoreModel<float> m(small_config());
  train_base_a_little(m);
  m.add_branch();
  std::size_t copied = 0;
  m.store().for_each([&](const nn::Param<float>& p) {
    if (p.name.rfind("branch.", 0) != 0 || SControlBranch<float>::is_new_layer(p.name)) return;
    EXPECT_EQ(p.value, m.store().get("base." + p.name.substr(7)).value) << p.name;
    ++copied;
  });
  EXPECT_GT(copied, 20u);
}

TEST(Branch, ZeroConvolutionsStartAtZero) {
  ScoreModel<float> m(small_config());
  m.add_branch();
  std::size_t seen = 0;
  m.store().for_each([&](const nn::Param<float>& p) {
    if (p.name.find("z_out") == std::string::npos && p.name.find("z_in") == std::string::npos) return;
    ++seen;
    for (float v : p.value.values()) EXPECT_EQ(v, 0.0f) << p.name;
  });
  EXPECT_EQ(seen, 7u);  // Z_in weight plus weight and bias of three Z_out
}

TEST(Branch, IsADeepCopy) {
  ScoreModel<float> m(small_config());
  m.add_branch();
  const auto before = m.store().get("base.conv_in.w").value;
  for (auto& v : m.store().get("branch.conv_in.w").value.values()) v += 1.0f;
  EXPECT_EQ(m.store().get("base.conv_in.w").value, before);
}

TEST(Branch, CannotBeAddedTwice) {
  ScoreModel<float> m(small_config());
  m.add_branch();
  EXPECT_THROW(m.add_branch(), ParameterError);
}

TEST(InjectLocal, AbsentControlsGiveNormalisedLatent) {
  ScoreModel<float> m(small_config());
  auto& br = m.add_branch();
  testing_support::randomize_branch_zero_layers(m, 1);
  Rng rng(2);
  Tape<float> tp(false);
  Var z = tp.constant(rng.normal_tensor<float>({2, 1, 8, 8}));
  const auto c = tp.value(br.inject_local(tp, z, {}, {}));
  nn::GroupNorm<float> norm{&m.store().get("branch.inject.norm.gamma"), &m.store().get("branch.inject.norm.beta"), 1};
  EXPECT_EQ(c, tp.value(norm(tp, z)));
}

TEST(InjectLocal, ZeroInputConvolutionIgnoresControls) {
  ScoreModel<float> m(small_config());
  auto& br = m.add_branch();
  Rng rng(3);
  Tape<float> tp(false);
  Var z = tp.constant(rng.normal_tensor<float>({1, 1, 8, 8}));
  Var mel = tp.constant(rng.normal_tensor<float>({1, 12, 32, 1}));
  Var dyn = tp.constant(rng.normal_tensor<float>({1, 1, 32, 1}));
  EXPECT_EQ(tp.value(br.inject_local(tp, z, mel, dyn)), tp.value(br.inject_local(tp, z, {}, {})));
}

TEST(InjectLocal, ShapePreservedAndMisalignmentRejected) {
  ScoreModel<float> m(small_config());
  auto& br = m.add_branch();
  testing_support::randomize_branch_zero_layers(m, 4);
  Rng rng(5);
  Tape<float> tp(false);
  Var z = tp.constant(rng.normal_tensor<float>({2, 1, 8, 8}));
  Var mel = tp.constant(rng.normal_tensor<float>({2, 12, 32, 1}));
  Var dyn = tp.constant(rng.normal_tensor<float>({2, 1, 32, 1}));
  for (auto [a, b] : {std::pair{mel, dyn}, std::pair{mel, Var{}}, std::pair{Var{}, dyn}}) {
    const auto out = br.inject_local(tp, z, a, b);
    EXPECT_EQ(tp.shape(out), (Shape{2, 1, 8, 8}));
  }
  EXPECT_NE(tp.value(br.inject_local(tp, z, mel, {})), tp.value(br.inject_local(tp, z, {}, {})));
  Var short_mel = tp.constant(rng.normal_tensor<float>({2, 12, 28, 1}));
  EXPECT_THROW(br.inject_local(tp, z, short_mel, {}), ShapeError);
  const auto ctl = random_controls(rng, 28);
  EXPECT_THROW(make_control_batch<float>({&ctl}, 32, -80), ShapeError);
}

TEST(BranchForward, ThreeResidualsAllZeroAtInit) {
  ScoreModel<float> m(small_config());
  auto& br = m.add_branch();
  Rng rng(6);
  Tape<float> tp(false);
  Var z = tp.constant(rng.normal_tensor<float>({1, 1, 8, 8}));
  Var ctx = context_var(tp, m, random_c_film(rng), 1);
  Var mel = tp.constant(rng.normal_tensor<float>({1, 12, 32, 1}));
  const auto res = br.forward(tp, z, {400}, ctx, mel, {});
  ASSERT_EQ(res.size(), 3u);
  const Shape expect[] = {{1, 16, 8, 8}, {1, 32, 4, 4}, {1, 32, 4, 4}};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(tp.shape(res[i]), expect[i]);
    for (float v : tp.value(res[i]).values()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(BranchForward, OneTrainingStepMakesResidualsNonzero) {
  ScoreModel<float> m(small_config());
  testing_support::randomize_output_layer(m, 7);
  m.add_branch();
  train_branch(m, 1, 1e-3);
  Rng rng(8);
  Tape<float> tp(false);
  Var z = tp.constant(rng.normal_tensor<float>({1, 1, 8, 8}));
  Var ctx = context_var(tp, m, random_c_film(rng), 1);
  Var mel = tp.constant(rng.normal_tensor<float>({1, 12, 32, 1}));
  double energy = 0;
  for (const auto& r : m.branch().forward(tp, z, {300}, ctx, mel, {}))
    for (float v : tp.value(r).values()) energy += double(v) * v;
  EXPECT_GT(energy, 0.0);
}

TEST(BranchTraining, BaseAndFilmStayBitwiseFrozen) {
  ScoreModel<float> m(small_config());
  train_base_a_little(m);
  m.add_branch();
  std::map<std::string, Tensor<float>> before;
  m.store().for_each([&](const nn::Param<float>& p) {
    if (p.name.rfind("branch.", 0) != 0) before[p.name] = p.value;
  });
  const auto branch_w = m.store().get("branch.conv_in.w").value;
  train_branch(m, 4);
  for (const auto& [name, v] : before) EXPECT_EQ(m.store().get(name).value, v) << name;
  EXPECT_NE(m.store().get("branch.conv_in.w").value, branch_w);
}

TEST(ControlledDenoise, FreshBranchMatchesBaseBitwise) {
  ScoreModel<float> m(small_config());
  testing_support::randomize_output_layer(m, 9);
  m.add_branch();
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const auto z = rng.normal_tensor<float>({1, 1, 8, 8});
    const auto c = random_c_film(rng);
    const auto ctl = random_controls(rng, 32);
    const std::size_t step = std::size_t(rng.integer(1, 1000));
    EXPECT_EQ(controlled_denoise(m, z, step, c, ctl, 1.0), unet_forward(m, z, step, std::optional(c)));
    EXPECT_EQ(controlled_denoise(m, z, step, c, ctl, 7.5), guided_eps(m, z, step, c, 7.5));
  }
}

TEST(ControlledDenoise, UnitScaleIsTheConditionalPass) {
  ScoreModel<float> m(small_config());
  testing_support::randomize_output_layer(m, 11);
  m.add_branch();
  testing_support::randomize_branch_zero_layers(m, 12);
  Rng rng(13);
  const auto z = rng.normal_tensor<float>({1, 1, 8, 8});
  const auto c = random_c_film(rng);
  const auto ctl = random_controls(rng, 32);
  const auto one = controlled_denoise(m, z, 200, c, ctl, 1.0);
  const auto cond = controlled_denoise(m, z, 200, c, ctl, 1.0);
  EXPECT_EQ(one, cond);
  // guidance extrapolates from the unconditional pass through the conditional one
  const auto g2 = controlled_denoise(m, z, 200, c, ctl, 2.0);
  const auto g3 = controlled_denoise(m, z, 200, c, ctl, 3.0);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_NEAR(g3[i] - g2[i], g2[i] - one[i], 1e-4);
}

TEST(ControlledDenoise, ResidualsSharedAcrossGuidancePasses) {
  // with scale s the result is u + s (c - u); residuals only enter through
  // both passes identically, so the unconditional pass equals the s = 0 output
  ScoreModel<float> m(small_config());
  testing_support::randomize_output_layer(m, 14);
  m.add_branch();
  testing_support::randomize_branch_zero_layers(m, 15);
  Rng rng(16);
  const auto z = rng.normal_tensor<float>({1, 1, 8, 8});
  const auto c = random_c_film(rng);
  const auto ctl = random_controls(rng, 32);
  const auto uncond_guided = controlled_denoise(m, z, 300, c, ctl, 0.0);
  Tape<float> tp(false);
  Var zv = tp.constant(z);
  Var ctx = context_var(tp, m, c, 1);
  std::vector<const StyleControls*> items{&ctl};
  auto cb = make_control_batch<float>(items, 32, -80);
  const auto res = m.branch().forward(tp, zv, {300}, ctx, tp.constant(cb.melody), tp.constant(cb.dynamics));
  const auto uncond = tp.value(m.unet().forward(tp, zv, {300}, m.unet().null_context(tp, 1), &res));
  for (std::size_t i = 0; i < uncond.size(); ++i) EXPECT_NEAR(uncond_guided[i], uncond[i], 1e-6);
}

TEST(ControlledDenoise, MelodyAndDynamicsOnlyDifferOnTrainedBranch) {
  ScoreModel<float> m(small_config());
  testing_support::randomize_output_layer(m, 18);
  m.add_branch();
  train_branch(m, 5);
  Rng rng(19);
  const auto z = rng.normal_tensor<float>({1, 1, 8, 8});
  const auto c = random_c_film(rng);
  const auto full = random_controls(rng, 32);
  const auto a = controlled_denoise(m, z, 250, c, select_controls(Mode::MelodyOnly, full), 7.5);
  const auto b = controlled_denoise(m, z, 250, c, select_controls(Mode::DynamicsOnly, full), 7.5);
  EXPECT_GT(relative_l2(a, b), 0.0);
}

TEST(ControlledDenoise, MissingBranchFallsBackWithWarning) {
  ScoreModel<float> m(small_config());
  testing_support::randomize_output_layer(m, 20);
  Rng rng(21);
  const auto z = rng.normal_tensor<float>({1, 1, 8, 8});
  const auto c = random_c_film(rng);
  std::vector<Warning> warnings;
  const auto out = controlled_denoise(m, z, 100, c, random_controls(rng, 32), 7.5,
                                      [&](const Warning& w) { warnings.push_back(w); });
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].message.find("no control branch"), std::string::npos);
  EXPECT_EQ(out, guided_eps(m, z, 100, c, 7.5));
}

TEST(Modes, ParseAndSelect) {
  EXPECT_EQ(parse_mode("score"), Mode::ScoreGeneration);
  EXPECT_EQ(parse_mode("both"), Mode::Both);
  EXPECT_THROW(parse_mode("loud"), ParameterError);
  for (auto mode : {Mode::ScoreGeneration, Mode::MelodyOnly, Mode::DynamicsOnly, Mode::Both})
    EXPECT_EQ(parse_mode(mode_name(mode)), mode);
  Rng rng(1);
  const auto full = random_controls(rng, 16);
  StyleControls only_mel;
  only_mel.melody = full.melody;
  EXPECT_THROW(select_controls(Mode::DynamicsOnly, only_mel), ParameterError);
  EXPECT_THROW(select_controls(Mode::Both, only_mel), ParameterError);
  EXPECT_FALSE(select_controls(Mode::MelodyOnly, full).dynamics.has_value());
  EXPECT_FALSE(select_controls(Mode::ScoreGeneration, full).melody.has_value());
}

namespace {
struct GenFixture {
  std::unique_ptr<ScoreModel<float>> model;
  LatentCodec<float> codec;
  film::FusedCondition film;
  GenFixture() {
    auto cfg = small_config();
    cfg.branch.latent_width = 16;
    model = std::make_unique<ScoreModel<float>>(cfg);
    testing_support::randomize_output_layer(*model, 30, 0.05);
    model->add_branch();
    testing_support::randomize_branch_zero_layers(*model, 31, 0.05);
    Rng rng(32);
    film.c_film = random_c_film(rng);
  }
};
}  // namespace

TEST(Generate, ScoreModeEqualsExplicitZeroControls) {
  GenFixture f;
  GenerateConfig gc;
  gc.steps = 10;
  gc.frames = 32;
  StyleControls zeros;
  zeros.melody = MelodyControl::from_pitches(std::vector<int>(32, -1));
  zeros.dynamics = DynamicsControl{std::vector<double>(32, -80.0)};
  const auto score = generate(*f.model, f.codec, f.film, Mode::ScoreGeneration, {}, 5, gc);
  const auto both = generate(*f.model, f.codec, f.film, Mode::Both, zeros, 5, gc);
  EXPECT_EQ(score.values, both.values);
  EXPECT_EQ(score.frames, 32u);
  EXPECT_EQ(score.mel_bins, 64u);
}

TEST(Generate, DeterministicForFixedSeedAndControlsMatter) {
  GenFixture f;
  GenerateConfig gc;
  gc.steps = 10;
  Rng rng(40);
  const auto ctl = random_controls(rng, 32);
  const auto a = generate(*f.model, f.codec, f.film, Mode::Both, ctl, 9, gc);
  const auto b = generate(*f.model, f.codec, f.film, Mode::Both, ctl, 9, gc);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.frames, 32u);
  const auto s = generate(*f.model, f.codec, f.film, Mode::ScoreGeneration, ctl, 9, gc);
  EXPECT_NE(a.values, s.values);
  EXPECT_THROW(generate(*f.model, f.codec, f.film, Mode::MelodyOnly, {}, 9, gc), ParameterError);
  gc.steps = 1001;
  EXPECT_THROW(generate(*f.model, f.codec, f.film, Mode::Both, ctl, 9, gc), ParameterError);
}
