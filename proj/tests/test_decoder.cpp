#include <gtest/gtest.h>

#include <cmath>

#include "tgqn/model/decoder.hpp"
#include "tgqn/model/losses.hpp"

using namespace tgqn;
using namespace tgqn::model;

namespace {

DecoderConfig small_cfg() {
  DecoderConfig cfg;
  cfg.m_cores = 2;
  cfg.image_size = 8;
  cfg.core_channels = 8;
  cfg.canvas_channels = 8;
  cfg.z_channels = 2;
  cfg.d = 8;
  cfg.target_embed = 4;
  cfg.canvas_embed = 4;
  cfg.core_kernel = 3;
  cfg.head_kernel = 3;
  return cfg;
}

template <typename T>
ParamStore<T> make_params(const DecoderConfig& cfg, std::uint64_t seed) {
  ParamStore<T> ps;
  Rng rng(seed);
  init_decoder_params(ps, cfg, rng);
  return ps;
}

TEST(InitState, ZeroCanvasAndStateCounts) {
  const DecoderConfig cfg = small_cfg();
  Graph<float> g;
  const auto s = init_state(g, cfg, 1);
  ASSERT_EQ(s.gen.size(), 2u);
  ASSERT_EQ(s.inf.size(), 2u);
  for (std::size_t i = 0; i < s.canvas->value.size(); ++i)
    ASSERT_EQ(s.canvas->value[i], 0.0f);

  DecoderConfig cfg4 = cfg;
  cfg4.m_cores = 4;
  Graph<float> g4;
  const auto s4 = init_state(g4, cfg4, 2);
  EXPECT_EQ(s4.gen.size(), 4u);
  EXPECT_EQ(s4.inf.size(), 4u);

  // Determinism: independently built states are identical.
  Graph<float> g2;
  const auto t = init_state(g2, cfg, 1);
  EXPECT_EQ(t.canvas->value.vec(), s.canvas->value.vec());

  DecoderConfig bad = cfg;
  bad.m_cores = 0;
  Graph<float> gb;
  EXPECT_THROW(init_state(gb, bad, 1), std::invalid_argument);
}

TEST(Reparameterization, ZeroLogVarianceIsMeanPlusNoise) {
  Graph<float> g;
  Rng rng(61);
  Tensor<float> mean({1, 2, 3, 3}), eps({1, 2, 3, 3});
  rng.fill_normal(mean);
  rng.fill_normal(eps);
  LatentVars<float> dist;
  dist.mean = g.constant(mean);
  dist.log_variance = g.constant(Tensor<float>({1, 2, 3, 3}));
  auto z = model::detail::sample_latent(g, dist, g.constant(eps));
  for (std::size_t i = 0; i < z->value.size(); ++i)
    ASSERT_EQ(z->value[i], mean[i] + eps[i]);
}

struct StepInputs {
  Tensor<float> r_star, pose, target;
};

StepInputs random_inputs(const DecoderConfig& cfg, std::uint64_t seed,
                         int batch = 1) {
  Rng rng(seed);
  StepInputs in;
  in.r_star = Tensor<float>({batch, cfg.d});
  in.pose = Tensor<float>({batch, kPoseDim});
  in.target = Tensor<float>({batch, 3, cfg.image_size, cfg.image_size});
  rng.fill_normal(in.r_star);
  rng.fill_uniform(in.pose, -1, 1);
  rng.fill_uniform(in.target, 0, 1);
  return in;
}

TEST(CoreMicroStep, DeterministicUnderFixedNoise) {
  const DecoderConfig cfg = small_cfg();
  const auto ps = make_params<float>(cfg, 62);
  const StepInputs in = random_inputs(cfg, 63);

  auto run = [&]() {
    Graph<float> g;
    ParamVars<float> pv(g, ps, false);
    NoiseSource<float> noise(Rng(7));
    auto state = init_state(g, cfg, 1);
    auto pose_map = tile_vec(g, g.constant(in.pose), cfg.grid(), cfg.grid());
    auto r_map = tile_vec(g, g.constant(in.r_star), cfg.grid(), cfg.grid());
    auto eps = g.constant(noise.next({1, cfg.z_channels, cfg.grid(), cfg.grid()}));
    auto micro = core_micro_step(g, 0, state, r_map, pose_map, nullptr,
                                 RunMode::kGeneration, eps, pv, cfg);
    return std::pair(micro.z_sample->value, micro.state.gen[0].hidden->value);
  };
  const auto [z1, h1] = run();
  const auto [z2, h2] = run();
  EXPECT_EQ(z1.vec(), z2.vec());
  EXPECT_EQ(h1.vec(), h2.vec());
}

TEST(CoreMicroStep, CanvasDeltaMatchesIsolatedUpsample) {
  const DecoderConfig cfg = small_cfg();
  const auto ps = make_params<float>(cfg, 64);
  const StepInputs in = random_inputs(cfg, 65);

  Graph<float> g;
  ParamVars<float> pv(g, ps, false);
  NoiseSource<float> noise(Rng(8));
  auto state = init_state(g, cfg, 1);
  auto pose_map = tile_vec(g, g.constant(in.pose), cfg.grid(), cfg.grid());
  auto r_map = tile_vec(g, g.constant(in.r_star), cfg.grid(), cfg.grid());
  auto target = g.constant(in.target);
  auto target_embed = relu(
      g, conv2d(g, target, pv["dec.target_ds.w"], pv["dec.target_ds.b"], 4, 0));
  auto eps = g.constant(noise.next({1, cfg.z_channels, cfg.grid(), cfg.grid()}));
  auto micro = core_micro_step(g, 1, state, r_map, pose_map, target_embed,
                               RunMode::kTraining, eps, pv, cfg);

  // Recompute the transposed convolution of the new hidden state in a fresh
  // graph and compare against canvas_out - canvas_in.
  Graph<float> g2;
  ParamVars<float> pv2(g2, ps, false);
  auto iso = conv_transpose2d(g2, g2.constant(micro.state.gen[1].hidden->value),
                              pv2["dec.m1.up.w"], pv2["dec.m1.up.b"], 4);
  for (std::size_t i = 0; i < iso->value.size(); ++i) {
    const float delta =
        micro.state.canvas->value[i] - state.canvas->value[i];
    ASSERT_NEAR(delta, iso->value[i], 1e-6f);
  }
}

TEST(CoreMicroStep, TrainingRequiresTarget) {
  const DecoderConfig cfg = small_cfg();
  const auto ps = make_params<float>(cfg, 66);
  const StepInputs in = random_inputs(cfg, 67);
  Graph<float> g;
  ParamVars<float> pv(g, ps, false);
  auto state = init_state(g, cfg, 1);
  auto pose_map = tile_vec(g, g.constant(in.pose), cfg.grid(), cfg.grid());
  auto r_map = tile_vec(g, g.constant(in.r_star), cfg.grid(), cfg.grid());
  Graph<float> gn;
  NoiseSource<float> noise(Rng(9));
  auto eps = g.constant(noise.next({1, cfg.z_channels, cfg.grid(), cfg.grid()}));
  EXPECT_THROW(core_micro_step(g, 0, state, r_map, pose_map, nullptr,
                               RunMode::kTraining, eps, pv, cfg),
               std::invalid_argument);
}

TEST(RenderStep, CountContractAndRange) {
  DecoderConfig cfg = small_cfg();
  cfg.m_cores = 1;
  const auto ps = make_params<float>(cfg, 68);
  const StepInputs in = random_inputs(cfg, 69);
  Graph<float> g;
  ParamVars<float> pv(g, ps, false);
  NoiseSource<float> noise(Rng(10));
  auto state = init_state(g, cfg, 1);
  auto out = render_step(g, g.constant(in.r_star), g.constant(in.pose),
                         g.constant(in.target), state, RunMode::kTraining, pv,
                         cfg, noise);
  EXPECT_EQ(out.priors.size(), 1u);
  EXPECT_EQ(out.posteriors.size(), 1u);
  for (std::size_t i = 0; i < out.predicted->value.size(); ++i) {
    ASSERT_GE(out.predicted->value[i], 0.0f);
    ASSERT_LE(out.predicted->value[i], 1.0f);
  }
}

TEST(RenderStep, StateThreadingReadsPreviousStateBitExactly) {
  const DecoderConfig cfg = small_cfg();
  const auto ps = make_params<float>(cfg, 70);
  const StepInputs a = random_inputs(cfg, 71);
  const StepInputs b = random_inputs(cfg, 72);

  // Threaded: two steps in one pass.
  Graph<float> g;
  ParamVars<float> pv(g, ps, false);
  NoiseSource<float> noise(Rng(11));
  auto s0 = init_state(g, cfg, 1);
  auto step1 = render_step(g, g.constant(a.r_star), g.constant(a.pose),
                           g.constant(a.target), s0, RunMode::kTraining, pv,
                           cfg, noise);
  auto step2 = render_step(g, g.constant(b.r_star), g.constant(b.pose),
                           g.constant(b.target), step1.state_out,
                           RunMode::kTraining, pv, cfg, noise);

  // Isolated: rebuild step 2 from copied boundary values and an aligned
  // noise stream; every output must match bit for bit.
  Graph<float> g2;
  ParamVars<float> pv2(g2, ps, false);
  NoiseSource<float> noise2(Rng(11));
  for (int m = 0; m < cfg.m_cores; ++m)
    (void)noise2.next({1, cfg.z_channels, cfg.grid(), cfg.grid()});
  DecoderStateVars<float> mid;
  for (int m = 0; m < cfg.m_cores; ++m) {
    mid.gen.push_back({g2.constant(step1.state_out.gen[m].cell->value),
                       g2.constant(step1.state_out.gen[m].hidden->value)});
    mid.inf.push_back({g2.constant(step1.state_out.inf[m].cell->value),
                       g2.constant(step1.state_out.inf[m].hidden->value)});
  }
  mid.canvas = g2.constant(step1.state_out.canvas->value);
  auto redo = render_step(g2, g2.constant(b.r_star), g2.constant(b.pose),
                          g2.constant(b.target), mid, RunMode::kTraining, pv2,
                          cfg, noise2);
  EXPECT_EQ(redo.predicted->value.vec(), step2.predicted->value.vec());
  for (int m = 0; m < cfg.m_cores; ++m) {
    EXPECT_EQ(redo.state_out.gen[m].cell->value.vec(),
              step2.state_out.gen[m].cell->value.vec());
    EXPECT_EQ(redo.state_out.inf[m].hidden->value.vec(),
              step2.state_out.inf[m].hidden->value.vec());
  }
}

TEST(RenderStep, TrainingAndGenerationDivergeWhenPosteriorMoves) {
  const DecoderConfig cfg = small_cfg();
  const auto ps = make_params<float>(cfg, 73);
  const StepInputs in = random_inputs(cfg, 74);

  struct Snapshot {
    Tensor<float> predicted;
    double post_prior_gap = 0;
  };
  auto run = [&](RunMode mode) {
    Graph<float> g;
    ParamVars<float> pv(g, ps, false);
    NoiseSource<float> noise(Rng(12));
    auto state = init_state(g, cfg, 1);
    auto out = render_step(
        g, g.constant(in.r_star), g.constant(in.pose),
        mode == RunMode::kTraining ? g.constant(in.target) : nullptr, state,
        mode, pv, cfg, noise);
    Snapshot snap;
    snap.predicted = out.predicted->value;
    for (std::size_t m = 0; m < out.posteriors.size(); ++m)
      for (std::size_t i = 0; i < out.posteriors[m].mean->value.size(); ++i)
        snap.post_prior_gap += std::fabs(out.posteriors[m].mean->value[i] -
                                         out.priors[m].mean->value[i]);
    return snap;
  };
  const auto train_out = run(RunMode::kTraining);
  const auto gen_out = run(RunMode::kGeneration);

  // With random parameters the posterior differs from the prior, so the
  // same noise stream produces different frames.
  ASSERT_GT(train_out.post_prior_gap, 1e-4);
  double frame_gap = 0;
  for (std::size_t i = 0; i < train_out.predicted.size(); ++i)
    frame_gap += std::fabs(train_out.predicted[i] - gen_out.predicted[i]);
  EXPECT_GT(frame_gap, 1e-5);
}

TEST(DecodeSequence, SingleStepMatchesRenderStepFromZeroState) {
  const DecoderConfig cfg = small_cfg();
  const auto ps = make_params<float>(cfg, 75);
  const StepInputs in = random_inputs(cfg, 76);

  Graph<float> g;
  ParamVars<float> pv(g, ps, false);
  NoiseSource<float> noise(Rng(13));
  auto outs = decode_sequence<float>(g, {g.constant(in.r_star)},
                                     {g.constant(in.pose)},
                                     {g.constant(in.target)},
                                     RunMode::kTraining, pv, cfg, noise);
  ASSERT_EQ(outs.size(), 1u);

  Graph<float> g2;
  ParamVars<float> pv2(g2, ps, false);
  NoiseSource<float> noise2(Rng(13));
  auto direct = render_step(g2, g2.constant(in.r_star), g2.constant(in.pose),
                            g2.constant(in.target), init_state(g2, cfg, 1),
                            RunMode::kTraining, pv2, cfg, noise2);
  EXPECT_EQ(outs[0].predicted->value.vec(), direct.predicted->value.vec());
}

TEST(DecodeSequence, ThreeStepTrainingCounts) {
  const DecoderConfig cfg = small_cfg();
  const auto ps = make_params<float>(cfg, 77);
  Graph<float> g;
  ParamVars<float> pv(g, ps, false);
  NoiseSource<float> noise(Rng(14));
  std::vector<Var<float>> cond, queries, targets;
  for (int n = 0; n < 3; ++n) {
    const StepInputs in = random_inputs(cfg, 78 + n);
    cond.push_back(g.constant(in.r_star));
    queries.push_back(g.constant(in.pose));
    targets.push_back(g.constant(in.target));
  }
  auto outs = decode_sequence(g, cond, queries, targets, RunMode::kTraining,
                              pv, cfg, noise);
  ASSERT_EQ(outs.size(), 3u);
  for (const auto& o : outs) {
    EXPECT_EQ(o.priors.size(), static_cast<std::size_t>(cfg.m_cores));
    EXPECT_EQ(o.posteriors.size(), static_cast<std::size_t>(cfg.m_cores));
  }
  // Boundary states are exactly the same tensors between consecutive steps.
  for (int n = 1; n < 3; ++n) {
    EXPECT_EQ(outs[n].state_in.canvas->value.vec(),
              outs[n - 1].state_out.canvas->value.vec());
    for (int m = 0; m < cfg.m_cores; ++m) {
      EXPECT_EQ(outs[n].state_in.gen[m].cell->value.vec(),
                outs[n - 1].state_out.gen[m].cell->value.vec());
      EXPECT_EQ(outs[n].state_in.inf[m].cell->value.vec(),
                outs[n - 1].state_out.inf[m].cell->value.vec());
    }
  }
  // Length mismatch is rejected.
  std::vector<Var<float>> short_queries(queries.begin(), queries.end() - 1);
  EXPECT_THROW(decode_sequence(g, cond, short_queries, targets,
                               RunMode::kTraining, pv, cfg, noise),
               std::invalid_argument);
}

TEST(DecodeSequence, GenerationDeterministicPerSeedAndDistinctAcrossSeeds) {
  const DecoderConfig cfg = small_cfg();
  const auto ps = make_params<float>(cfg, 79);
  const StepInputs in = random_inputs(cfg, 80);

  auto run = [&](std::uint64_t seed) {
    Graph<float> g;
    ParamVars<float> pv(g, ps, false);
    NoiseSource<float> noise{Rng(seed)};
    auto outs = decode_sequence<float>(g, {g.constant(in.r_star)},
                                       {g.constant(in.pose)}, {},
                                       RunMode::kGeneration, pv, cfg, noise);
    return outs[0].predicted->value;
  };
  const auto a = run(100);
  const auto b = run(100);
  EXPECT_EQ(a.vec(), b.vec());
  const auto c = run(101);
  double gap = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    gap += std::fabs(a[i] - c[i]);
  EXPECT_GT(gap, 1e-6);
}

// Decoder gradients through a one-step ELBO against the float64 oracle.
// Every parameter gets a small random nudge first: finite differences are
// undefined at the rectifier kinks that all-zero biases would sit on, and a
// generic point also keeps gradients non-degenerate.
TEST(Decoder, GradMatchesFiniteDifference) {
  DecoderConfig cfg = small_cfg();
  cfg.m_cores = 2;
  ParamStore<double> ps;
  Rng rng(81);
  init_decoder_params(ps, cfg, rng);
  for (auto& [name, tensor] : ps)
    for (std::size_t i = 0; i < tensor.size(); ++i)
      tensor[i] += rng.uniform(-0.05, 0.05);
  StepInputs fin = random_inputs(cfg, 82);
  const auto r_star = fin.r_star.cast<double>();
  const auto pose = fin.pose.cast<double>();
  const auto target = fin.target.cast<double>();

  auto forward = [&](Graph<double>& g, bool rg) {
    ParamVars<double> pv(g, ps, rg);
    // Fixed noise keeps the loss a deterministic function of parameters.
    NoiseSource<double> noise{Rng(83)};
    auto out = render_step(g, g.constant(r_star), g.constant(pose),
                           g.constant(target), init_state(g, cfg, 1),
                           RunMode::kTraining, pv, cfg, noise);
    auto loss = tgqn_loss<double>(g, {out}, {g.constant(target)}, 2.0, 1.3);
    return std::pair(loss.total, pv);
  };

  Graph<double> g;
  auto [root, pv] = forward(g, true);
  g.backward(root);
  // Central differences resolve the loss to roughly eps^(2/3) * |f|; the
  // comparison floor absorbs that noise for near-zero gradients.
  const double floor = 3.7e-5 * std::max(1.0, std::fabs(root->value[0]));

  Rng pick(84);
  const double h = 1e-6;
  for (auto& [name, tensor] : ps) {
    const std::size_t i =
        static_cast<std::size_t>(pick.uniform_int(0, tensor.size() - 1));
    const double keep = tensor[i];
    tensor[i] = keep + h;
    Graph<double> gp;
    const double fp = forward(gp, false).first->value[0];
    tensor[i] = keep - h;
    Graph<double> gm;
    const double fm = forward(gm, false).first->value[0];
    tensor[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    const double an = pv[name]->grad_ready ? pv[name]->grad[i] : 0.0;
    const double denom = std::max({std::fabs(fd), std::fabs(an), floor});
    EXPECT_LT(std::fabs(an - fd) / denom, 1e-5) << name << "[" << i << "]";
  }
}

}  // namespace
