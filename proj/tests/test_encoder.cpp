#include <gtest/gtest.h>

#include <cmath>

#include "tgqn/model/encoder.hpp"

using namespace tgqn;
using namespace tgqn::model;

namespace {

TEST(PoseVector, ZeroAngleIdentity) {
  scene::PoseSpec p;
  p.position = {0, 0, 0};
  p.yaw = 0;
  p.pitch = 0;
  const auto v = pose_to_vector<double>(p);
  ASSERT_EQ(v.dim(0), 7);
  EXPECT_DOUBLE_EQ(v[0], 0);
  EXPECT_DOUBLE_EQ(v[1], 0);
  EXPECT_DOUBLE_EQ(v[2], 0);
  EXPECT_DOUBLE_EQ(v[3], 1);
  EXPECT_DOUBLE_EQ(v[4], 0);
  EXPECT_DOUBLE_EQ(v[5], 1);
  EXPECT_DOUBLE_EQ(v[6], 0);
}

TEST(PoseVector, QuarterTurnYaw) {
  scene::PoseSpec p;
  p.position = {1, 2, 3};
  p.yaw = M_PI / 2;
  p.pitch = 0;
  const auto v = pose_to_vector<double>(p);
  EXPECT_NEAR(v[3], 0.0, 1e-9);
  EXPECT_NEAR(v[4], 1.0, 1e-9);
}

TEST(PoseVector, TrigIdentitySweep) {
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    scene::PoseSpec p;
    p.position = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    p.yaw = rng.uniform(-M_PI, M_PI);
    p.pitch = rng.uniform(-M_PI / 2, M_PI / 2);
    const auto v = pose_to_vector<double>(p);
    EXPECT_NEAR(v[3] * v[3] + v[4] * v[4], 1.0, 1e-9);
    EXPECT_NEAR(v[5] * v[5] + v[6] * v[6], 1.0, 1e-9);
  }
}

EncoderConfig small_cfg() {
  EncoderConfig cfg;
  cfg.image_size = 16;
  cfg.d = 32;
  cfg.base = 8;
  return cfg;
}

scene::Frame random_frame(Rng& rng, int size) {
  scene::Frame f({size, size, 3});
  for (std::size_t i = 0; i < f.size(); ++i)
    f[i] = static_cast<float>(rng.uniform());
  return f;
}

scene::PoseSpec random_pose(Rng& rng) {
  scene::PoseSpec p;
  p.position = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  p.yaw = rng.uniform(-M_PI, M_PI);
  p.pitch = rng.uniform(-0.4, 0.4);
  return p;
}

TEST(Encoder, DeterministicAndFinite) {
  const EncoderConfig cfg = small_cfg();
  Rng rng(31);
  ParamStore<float> ps;
  init_encoder_params(ps, cfg, rng);
  const scene::Frame f = random_frame(rng, cfg.image_size);
  const scene::PoseSpec pose = random_pose(rng);
  const auto a = encode_observation(f, pose, ps, cfg);
  const auto b = encode_observation(f, pose, ps, cfg);
  ASSERT_EQ(a.dim(0), cfg.d);
  for (int i = 0; i < cfg.d; ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_TRUE(std::isfinite(a[i]));
  }
}

TEST(Encoder, SinglePixelChangeMovesRepresentation) {
  const EncoderConfig cfg = small_cfg();
  Rng rng(32);
  ParamStore<float> ps;
  init_encoder_params(ps, cfg, rng);
  scene::Frame f = random_frame(rng, cfg.image_size);
  const scene::PoseSpec pose = random_pose(rng);
  const auto a = encode_observation(f, pose, ps, cfg);
  f.at(7, 9, 1) = f.at(7, 9, 1) > 0.5f ? 0.1f : 0.9f;
  const auto b = encode_observation(f, pose, ps, cfg);
  double diff = 0;
  for (int i = 0; i < cfg.d; ++i) diff += std::fabs(double(a[i]) - b[i]);
  EXPECT_GT(diff, 0.0);
}

TEST(Encoder, ShapeMismatchRejected) {
  const EncoderConfig cfg = small_cfg();
  Rng rng(33);
  ParamStore<float> ps;
  init_encoder_params(ps, cfg, rng);
  const scene::Frame wrong = random_frame(rng, cfg.image_size * 2);
  EXPECT_THROW(encode_observation(wrong, random_pose(rng), ps, cfg),
               std::invalid_argument);
}

// Analytic gradients of a scalar readout at working precision T against a
// float64 central-difference oracle over a sampled parameter subset. Float
// parameters are exactly representable in double, so the oracle evaluates
// the same function without finite-difference cancellation noise.
template <typename T>
void encoder_grad_check(double tol) {
  const EncoderConfig cfg = small_cfg();
  Rng rng(34);
  ParamStore<T> ps;
  init_encoder_params(ps, cfg, rng);
  Tensor<T> img({1, 3, cfg.image_size, cfg.image_size});
  rng.fill_uniform(img, 0.0, 1.0);
  Tensor<T> pose({1, kPoseDim});
  rng.fill_uniform(pose, -1.0, 1.0);
  Tensor<T> readout({1, cfg.d});
  rng.fill_normal(readout);

  Graph<T> g;
  ParamVars<T> pv(g, ps, true);
  auto rep = encode_views(g, pv, g.constant(img), g.constant(pose));
  auto root = sum_all(g, mul(g, rep, g.constant(readout)));
  g.backward(root);

  ParamStore<double> psd = ps.template cast<double>();
  const Tensor<double> imgd = img.template cast<double>();
  const Tensor<double> posed = pose.template cast<double>();
  const Tensor<double> readoutd = readout.template cast<double>();
  auto eval = [&]() {
    Graph<double> gd;
    ParamVars<double> pvd(gd, psd, false);
    auto repd = encode_views(gd, pvd, gd.constant(imgd), gd.constant(posed));
    return sum_all(gd, mul(gd, repd, gd.constant(readoutd)))->value[0];
  };

  // 10 parameters sampled across every stage.
  Rng pick(35);
  int checked = 0;
  const double h = 1e-6;
  for (auto& [name, tensor] : ps) {
    Tensor<double>& td = psd.get(name);
    const std::size_t i =
        static_cast<std::size_t>(pick.uniform_int(0, tensor.size() - 1));
    const double keep = td[i];
    td[i] = keep + h;
    const double fp = eval();
    td[i] = keep - h;
    const double fm = eval();
    td[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    const double an = pv[name]->grad[i];
    const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-5});
    EXPECT_LT(std::fabs(an - fd) / denom, tol) << name << "[" << i << "]";
    ++checked;
    if (checked >= 10) break;
  }
  EXPECT_GE(checked, 10);
}

TEST(Encoder, GradMatchesFiniteDifferenceFloat32) {
  encoder_grad_check<float>(1e-3);
}

TEST(Encoder, GradMatchesFiniteDifferenceFloat64) {
  encoder_grad_check<double>(1e-5);
}

TEST(AggregateSum, SingleElementIdentity) {
  Rng rng(36);
  Tensor<float> r({16});
  rng.fill_normal(r);
  const auto s = aggregate_sum<float>({r});
  for (int i = 0; i < 16; ++i) EXPECT_EQ(s[i], r[i]);
}

TEST(AggregateSum, AdditiveInverseGivesZero) {
  Rng rng(37);
  Tensor<float> r({16});
  rng.fill_normal(r);
  Tensor<float> neg({16});
  for (int i = 0; i < 16; ++i) neg[i] = -r[i];
  const auto s = aggregate_sum<float>({r, neg});
  for (int i = 0; i < 16; ++i) EXPECT_EQ(s[i], 0.0f);
}

TEST(AggregateSum, PermutationBitStableUpToEight) {
  Rng rng(38);
  for (int n = 2; n <= 8; ++n) {
    std::vector<Tensor<float>> reps;
    for (int k = 0; k < n; ++k) {
      Tensor<float> r({24});
      rng.fill_normal(r);
      reps.push_back(std::move(r));
    }
    const auto base = aggregate_sum(reps);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Tensor<float>> perm = reps;
      rng.shuffle(perm);
      const auto s = aggregate_sum(perm);
      for (int i = 0; i < 24; ++i)
        ASSERT_EQ(s[i], base[i]) << "n=" << n << " trial=" << trial;
    }
  }
}

TEST(AggregateSum, EmptyListRejected) {
  EXPECT_THROW(aggregate_sum<float>({}), std::invalid_argument);
}

}  // namespace
