#include <gtest/gtest.h>

#include <cmath>

#include "tgqn/core/ops.hpp"
#include "tgqn/core/param_store.hpp"
#include "tgqn/core/rng.hpp"

using tgqn::Graph;
using tgqn::Rng;
using tgqn::Tensor;

namespace {

// Central finite differences against analytic gradients for a scalar-valued
// function of several tensors.
template <typename Fn>
void grad_check(Fn&& build, std::vector<Tensor<double>*> inputs,
                double h = 1e-6, double tol = 1e-6) {
  // Analytic pass.
  Graph<double> g;
  std::vector<tgqn::Var<double>> leaves;
  for (auto* t : inputs) leaves.push_back(g.leaf(*t, true));
  auto root = build(g, leaves);
  g.backward(root);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& t = *inputs[k];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t[i];
      t[i] = keep + h;
      Graph<double> gp;
      std::vector<tgqn::Var<double>> lp;
      for (auto* q : inputs) lp.push_back(gp.leaf(*q, false));
      const double fp = build(gp, lp)->value[0];
      t[i] = keep - h;
      Graph<double> gm;
      std::vector<tgqn::Var<double>> lm;
      for (auto* q : inputs) lm.push_back(gm.leaf(*q, false));
      const double fm = build(gm, lm)->value[0];
      t[i] = keep;
      const double fd = (fp - fm) / (2 * h);
      const double an = leaves[k]->grad[i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
      EXPECT_NEAR(an, fd, tol * denom)
          << "input " << k << " element " << i;
    }
  }
}

TEST(Tensor, BasicsAndReshape) {
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  t.at(1, 2) = 5.0f;
  auto r = t.reshaped({3, 2});
  EXPECT_FLOAT_EQ(r.at(2, 1), 5.0f);
  EXPECT_THROW(t.reshaped({4, 2}), std::invalid_argument);
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.bits(), b.bits());
  Rng c = Rng(42).derive("x"), d = Rng(42).derive("x"), e = Rng(42).derive("y");
  EXPECT_EQ(c.bits(), d.bits());
  EXPECT_NE(Rng(42).derive("x").bits(), e.bits());
}

TEST(Rng, UniformAndNormalRanges) {
  Rng r(7);
  double mean = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
  for (int i = 0; i < n; ++i) mean += r.normal();
  mean /= n;
  EXPECT_NEAR(mean, 0.0, 0.05);
}

TEST(Ops, ConvMatchesNaiveLoops) {
  Rng rng(3);
  const int b = 2, c = 3, h = 5, w = 6, o = 4, k = 3, stride = 2, pad = 1;
  Tensor<double> x({b, c, h, w}), wt({o, c, k, k}), bias({o});
  rng.fill_normal(x);
  rng.fill_normal(wt);
  rng.fill_normal(bias);

  Graph<double> g;
  auto y = tgqn::conv2d(g, g.constant(x), g.constant(wt), g.constant(bias),
                        stride, pad);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  ASSERT_EQ(y->value.dim(2), oh);
  ASSERT_EQ(y->value.dim(3), ow);
  for (int bb = 0; bb < b; ++bb)
    for (int oo = 0; oo < o; ++oo)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias[oo];
          for (int cc = 0; cc < c; ++cc)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = oy * stride - pad + ki;
                const int ix = ox * stride - pad + kj;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x.at(bb, cc, iy, ix) * wt.at(oo, cc, ki, kj);
              }
          EXPECT_NEAR(y->value.at(bb, oo, oy, ox), acc, 1e-10);
        }
}

TEST(Ops, ConvTransposeMatchesNaiveLoops) {
  Rng rng(4);
  const int b = 2, c = 3, h = 3, w = 4, o = 2, k = 4, stride = 4;
  Tensor<double> x({b, c, h, w}), wt({c, o, k, k}), bias({o});
  rng.fill_normal(x);
  rng.fill_normal(wt);
  rng.fill_normal(bias);

  Graph<double> g;
  auto y = tgqn::conv_transpose2d(g, g.constant(x), g.constant(wt),
                                  g.constant(bias), stride);
  const int oh = (h - 1) * stride + k;
  const int ow = (w - 1) * stride + k;
  ASSERT_EQ(y->value.dim(2), oh);
  ASSERT_EQ(y->value.dim(3), ow);
  for (int bb = 0; bb < b; ++bb)
    for (int oo = 0; oo < o; ++oo)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = bias[oo];
          for (int cc = 0; cc < c; ++cc)
            for (int iy = 0; iy < h; ++iy)
              for (int ix = 0; ix < w; ++ix) {
                const int ki = yy - iy * stride;
                const int kj = xx - ix * stride;
                if (ki < 0 || ki >= k || kj < 0 || kj >= k) continue;
                acc += x.at(bb, cc, iy, ix) * wt.at(cc, oo, ki, kj);
              }
          EXPECT_NEAR(y->value.at(bb, oo, yy, xx), acc, 1e-10);
        }
}

TEST(Ops, GradElementwiseChain) {
  Rng rng(5);
  Tensor<double> a({3, 4}), b({3, 4});
  rng.fill_normal(a);
  rng.fill_normal(b);
  grad_check(
      [](Graph<double>& g, std::vector<tgqn::Var<double>>& in) {
        auto x = tgqn::mul(g, tgqn::sigmoid(g, in[0]), tgqn::tanh_op(g, in[1]));
        auto y = tgqn::add(g, tgqn::square(g, x), tgqn::relu(g, in[0]));
        return tgqn::sum_all(g, tgqn::exp_op(g, tgqn::scale(g, y, 0.3)));
      },
      {&a, &b});
}

TEST(Ops, GradLinear) {
  Rng rng(6);
  Tensor<double> x({3, 5}), w({5, 4}), b({4});
  rng.fill_normal(x);
  rng.fill_normal(w);
  rng.fill_normal(b);
  grad_check(
      [](Graph<double>& g, std::vector<tgqn::Var<double>>& in) {
        return tgqn::sum_all(
            g, tgqn::tanh_op(g, tgqn::linear(g, in[0], in[1], in[2])));
      },
      {&x, &w, &b});
}

TEST(Ops, GradConv2d) {
  Rng rng(7);
  Tensor<double> x({2, 2, 5, 5}), w({3, 2, 3, 3}), b({3});
  rng.fill_normal(x);
  rng.fill_normal(w);
  rng.fill_normal(b);
  grad_check(
      [](Graph<double>& g, std::vector<tgqn::Var<double>>& in) {
        auto y = tgqn::conv2d(g, in[0], in[1], in[2], 2, 1);
        return tgqn::sum_all(g, tgqn::sigmoid(g, y));
      },
      {&x, &w, &b});
}

TEST(Ops, GradConvTranspose2d) {
  Rng rng(8);
  Tensor<double> x({2, 3, 2, 2}), w({3, 2, 4, 4}), b({2});
  rng.fill_normal(x);
  rng.fill_normal(w);
  rng.fill_normal(b);
  grad_check(
      [](Graph<double>& g, std::vector<tgqn::Var<double>>& in) {
        auto y = tgqn::conv_transpose2d(g, in[0], in[1], in[2], 4);
        return tgqn::sum_all(g, tgqn::tanh_op(g, y));
      },
      {&x, &w, &b});
}

TEST(Ops, GradAttentionStack) {
  Rng rng(9);
  Tensor<double> q({2, 2, 3, 4}), k({2, 2, 3, 4}), v({2, 2, 3, 4});
  rng.fill_normal(q);
  rng.fill_normal(k);
  rng.fill_normal(v);
  Tensor<double> mask({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j <= i; ++j) mask.at(i, j) = 1.0;
  grad_check(
      [&mask](Graph<double>& g, std::vector<tgqn::Var<double>>& in) {
        auto s = tgqn::attn_scores(g, in[0], in[1], 0.5);
        auto a = tgqn::masked_softmax(g, s, mask);
        auto o = tgqn::attn_mix(g, a, in[2]);
        return tgqn::sum_all(g, tgqn::square(g, tgqn::merge_heads(g, o)));
      },
      {&q, &k, &v});
}

TEST(Ops, GradLayerNormAndPoolAndTile) {
  Rng rng(10);
  Tensor<double> x({3, 6}), gain({6}), off({6});
  rng.fill_normal(x);
  rng.fill_uniform(gain, 0.5, 1.5);
  rng.fill_normal(off);
  grad_check(
      [](Graph<double>& g, std::vector<tgqn::Var<double>>& in) {
        auto y = tgqn::layer_norm(g, in[0], in[1], in[2]);
        auto m = tgqn::tile_vec(g, y, 2, 2);
        return tgqn::sum_all(g, tgqn::square(g, tgqn::global_avg_pool(g, m)));
      },
      {&x, &gain, &off});
}

TEST(Ops, GradConcatSliceSumTokens) {
  Rng rng(11);
  Tensor<double> a({2, 2, 3, 3}), b({2, 1, 3, 3}), t({2, 3, 4});
  rng.fill_normal(a);
  rng.fill_normal(b);
  rng.fill_normal(t);
  grad_check(
      [](Graph<double>& g, std::vector<tgqn::Var<double>>& in) {
        auto c = tgqn::concat_ch(g, {in[0], in[1]});
        auto p = tgqn::global_avg_pool(g, c);  // (2,3)
        auto s = tgqn::slice_token(g, in[2], 1);
        auto su = tgqn::sum_tokens(g, in[2]);
        auto z = tgqn::add(g, s, su);
        return tgqn::add(g, tgqn::sum_all(g, tgqn::square(g, p)),
                         tgqn::sum_all(g, tgqn::square(g, z)));
      },
      {&a, &b, &t});
}

TEST(Ops, MaskedSoftmaxExactZeros) {
  Graph<float> g;
  Rng rng(12);
  Tensor<float> logits({1, 2, 3, 3});
  rng.fill_normal(logits);
  Tensor<float> mask({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j <= i; ++j) mask.at(i, j) = 1.0f;
  auto a = tgqn::masked_softmax(g, g.constant(logits), mask);
  for (int h = 0; h < 2; ++h)
    for (int i = 0; i < 3; ++i) {
      float sum = 0;
      for (int j = 0; j < 3; ++j) {
        const float v = a->value.at(0, h, i, j);
        if (j > i) EXPECT_EQ(v, 0.0f);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0f, 1e-6f);
    }
}

TEST(ParamStore, OrderAndInit) {
  Rng rng(13);
  tgqn::ParamStore<float> ps;
  ps.add_weight("b.w", {4, 9}, rng);
  ps.add_zeros("a.b", {4});
  std::vector<std::string> names;
  for (auto& [k, v] : ps) names.push_back(k);
  ASSERT_EQ(names.size(), 2u);
  EXPECT_EQ(names[0], "a.b");
  EXPECT_EQ(names[1], "b.w");
  const float bound = 1.0f / 3.0f;
  for (std::size_t i = 0; i < ps.get("b.w").size(); ++i) {
    EXPECT_LE(std::fabs(ps.get("b.w")[i]), bound);
  }
  EXPECT_THROW(ps.add_zeros("a.b", {1}), std::invalid_argument);
}

}  // namespace
