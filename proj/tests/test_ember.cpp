// Copyright 2026 The Memento Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "memento/ember.hpp"

using namespace memento;
using namespace memento::ember;

namespace {

Vector randn(std::mt19937_64& rng, Eigen::Index n, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

void jitter(Matrix& m, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> d(0.0, sd);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += d(rng);
}

void jitter(Vector& v, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> d(0.0, sd);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += d(rng);
}

// Moves every parameter away from its initial value so no gradient is
// trivially zero.
AffineModulator random_affine(std::size_t ctx, std::size_t d, std::size_t hidden, std::uint64_t seed) {
  AffineConfig cfg;
  cfg.context_dim = ctx;
  cfg.feature_dims = {d, d + 1};
  cfg.hidden = hidden;
  cfg.blocks = 2;
  cfg.seed = seed;
  auto m = make_affine(cfg);
  std::mt19937_64 rng(seed + 1);
  jitter(m.trunk.b_in, rng, 0.3);
  for (auto& b : m.trunk.blocks) {
    jitter(b.norm_gain, rng, 0.3);
    jitter(b.bias, rng, 0.3);
  }
  for (auto& h : m.heads) {
    jitter(h.w_out, rng, 0.3);
    jitter(h.b_out, rng, 0.3);
  }
  return m;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

// Central difference of <up, f(theta)> with respect to one scalar.
template <class F>
double central(double& theta, F f, double h = 1e-4) {
  const double keep = theta;
  theta = keep + h;
  const double plus = f();
  theta = keep - h;
  const double minus = f();
  theta = keep;
  return (plus - minus) / (2 * h);
}

}  // namespace

TEST(Affine, IdentityAtInitBitwise) {
  AffineConfig cfg;
  cfg.context_dim = 16;
  cfg.feature_dims = {8};
  auto m = make_affine(cfg);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    Vector c = randn(rng, 16, 3.0);
    Vector e = randn(rng, 8);
    Vector out = affine_forward(m, 0, c, e);
    for (Eigen::Index i = 0; i < 8; ++i) EXPECT_EQ(out(i), e(i));
  }
  EmberContext c{Embedding(16, 0.7f)};
  EXPECT_EQ(affine_forward(m, 0, c, Embedding{0.3f, -0.7f, 0, 0, 0, 0, 0, 0}),
            (Embedding{0.3f, -0.7f, 0, 0, 0, 0, 0, 0}));
}

TEST(Affine, ConstantHead) {
  AffineConfig cfg;
  cfg.context_dim = 4;
  cfg.feature_dims = {2};
  cfg.hidden = 8;
  auto m = make_affine(cfg);
  m.heads[0].b_out = Vector(4);
  m.heads[0].b_out << 2, 2, 1, 1;
  Vector e(2);
  e << 0.5, -1;
  std::mt19937_64 rng(3);
  Vector out = affine_forward(m, 0, randn(rng, 4), e);
  EXPECT_DOUBLE_EQ(out(0), 2.0);
  EXPECT_DOUBLE_EQ(out(1), -1.0);
  Vector up(2);
  up << 0.25, -3;
  auto g = affine_backward(m, 0, Vector::Ones(4), e, up);
  EXPECT_DOUBLE_EQ(g.input(0), 0.5);
  EXPECT_DOUBLE_EQ(g.input(1), -6.0);
}

TEST(Affine, IdentityInputGradientIsOnes) {
  AffineConfig cfg;
  cfg.context_dim = 6;
  cfg.feature_dims = {5};
  auto m = make_affine(cfg);
  std::mt19937_64 rng(4);
  auto g = affine_backward(m, 0, randn(rng, 6), randn(rng, 5), Vector::Ones(5));
  EXPECT_EQ(g.input, Vector::Ones(5));
}

// Independent scalar-loop forward: no Eigen products.
TEST(Affine, MatchesScalarLoop) {
  auto m = random_affine(6, 8, 16, 5);
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    Vector c = randn(rng, 6), e = randn(rng, 8);
    const auto& tr = m.trunk;
    const int h = static_cast<int>(tr.hidden());
    std::vector<double> x(h);
    for (int i = 0; i < h; ++i) {
      double s = tr.b_in(i);
      for (int j = 0; j < 6; ++j) s += tr.w_in(i, j) * c(j);
      x[i] = s;
    }
    for (const auto& b : tr.blocks) {
      double ms = 0;
      for (double v : x) ms += v * v;
      const double r = std::sqrt(ms / h + kRmsEpsilon);
      std::vector<double> nrm(h), nx(h);
      for (int i = 0; i < h; ++i) nrm[i] = b.norm_gain(i) * x[i] / r;
      for (int i = 0; i < h; ++i) {
        double z = b.bias(i);
        for (int j = 0; j < h; ++j) z += b.weight(i, j) * nrm[j];
        nx[i] = x[i] + z / (1 + std::exp(-z));
      }
      x = nx;
    }
    const auto& hd = m.heads[0];
    Vector out = affine_forward(m, 0, c, e);
    for (int i = 0; i < 8; ++i) {
      double g = hd.b_out(i), s = hd.b_out(8 + i);
      for (int j = 0; j < h; ++j) {
        g += hd.w_out(i, j) * x[j];
        s += hd.w_out(8 + i, j) * x[j];
      }
      EXPECT_NEAR(out(i), g * e(i) + s, 1e-6);
    }
  }
}

TEST(Affine, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = random_affine(5, 8, 16, 100 + seed);
    std::mt19937_64 rng(200 + seed);
    const std::size_t feature = seed % 2;
    const auto d = static_cast<Eigen::Index>(m.heads[feature].feature_dim());
    Vector c = randn(rng, 5), e = randn(rng, d), up = randn(rng, d);
    auto g = affine_backward(m, feature, c, e, up);
    auto f = [&] { return up.dot(affine_forward(m, feature, c, e)); };
    auto check = [&](double& theta, double analytic) {
      EXPECT_LE(rel_err(central(theta, f), analytic), 1e-4);
    };
    for (Eigen::Index i = 0; i < c.size(); ++i) check(c(i), g.context(i));
    for (Eigen::Index i = 0; i < e.size(); ++i) check(e(i), g.input(i));
    for (Eigen::Index i = 0; i < m.trunk.w_in.size(); ++i) check(m.trunk.w_in.data()[i], g.params.trunk.w_in.data()[i]);
    for (Eigen::Index i = 0; i < m.trunk.b_in.size(); ++i) check(m.trunk.b_in(i), g.params.trunk.b_in(i));
    for (std::size_t b = 0; b < m.trunk.blocks.size(); ++b) {
      auto& pb = m.trunk.blocks[b];
      auto& gb = g.params.trunk.blocks[b];
      for (Eigen::Index i = 0; i < pb.weight.size(); i += 3) check(pb.weight.data()[i], gb.weight.data()[i]);
      for (Eigen::Index i = 0; i < pb.bias.size(); ++i) check(pb.bias(i), gb.bias(i));
      for (Eigen::Index i = 0; i < pb.norm_gain.size(); ++i) check(pb.norm_gain(i), gb.norm_gain(i));
    }
    auto& ph = m.heads[feature];
    auto& gh = g.params.heads[feature];
    for (Eigen::Index i = 0; i < ph.w_out.size(); ++i) check(ph.w_out.data()[i], gh.w_out.data()[i]);
    for (Eigen::Index i = 0; i < ph.b_out.size(); ++i) check(ph.b_out(i), gh.b_out(i));
    EXPECT_TRUE(g.params.heads[1 - feature].w_out.isZero());
  }
}

TEST(Affine, Errors) {
  AffineConfig cfg;
  cfg.context_dim = 4;
  cfg.feature_dims = {3};
  auto m = make_affine(cfg);
  EXPECT_THROW(affine_forward(m, 0, Vector::Ones(5), Vector::Ones(3)), Error);
  EXPECT_THROW(affine_forward(m, 0, Vector::Ones(4), Vector::Ones(2)), Error);
  EXPECT_THROW(affine_forward(m, 1, Vector::Ones(4), Vector::Ones(3)), Error);
  EXPECT_THROW(affine_backward(m, 0, Vector::Ones(4), Vector::Ones(3), Vector::Ones(2)), Error);
}

TEST(Qnn, ZeroWeightsIdentity) {
  auto layer = make_qnn(8, 2);
  std::mt19937_64 rng(7);
  for (int t = 0; t < 100; ++t) {
    Vector x = randn(rng, 8, 5.0);
    EXPECT_EQ(qnn_forward(layer, x), x);
  }
  EXPECT_EQ(qnn_forward(layer, Vector::Zero(8)), Vector::Zero(8));
  auto g = qnn_backward(layer, randn(rng, 8), Vector::Ones(8));
  EXPECT_EQ(g.input, Vector::Ones(8));
}

TEST(Qnn, HandCase) {
  auto layer = make_qnn(2, 1);
  layer.gate << 1, 0, 1, -1;
  Vector x(2);
  x << 1, 2;
  Vector out = qnn_forward(layer, x);
  EXPECT_EQ(out(0), 2.0);
  EXPECT_EQ(out(1), 2.0);
}

TEST(Qnn, RandomZeroInputIsZero) {
  auto layer = make_qnn_random(8, 4, 0.5, 8);
  EXPECT_EQ(qnn_forward(layer, Vector::Zero(8)), Vector::Zero(8));
}

TEST(Qnn, ActiveGateGradientIsOuterProduct) {
  auto layer = make_qnn(2, 1);
  layer.gate << 0.5, 0.25, 0.75, 0.5;
  Vector x(2), up(2);
  x << 1, 2;
  up << 0.3, -0.7;
  auto g = qnn_backward(layer, x, up);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(g.gate(i, j), up(i) * x(i) * x(j), 1e-15);
  }
}

TEST(Qnn, GradientsMatchFiniteDifferences) {
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto layer = make_qnn_random(8, 2, 0.5, 300 + seed);
    std::mt19937_64 rng(400 + seed);
    Vector x = randn(rng, 8), up = randn(rng, 8);
    Vector pre = layer.gate * x;
    if ((pre.array().abs() < 1e-3).any()) continue;  // too close to a kink
    auto g = qnn_backward(layer, x, up);
    auto f = [&] { return up.dot(qnn_forward(layer, x)); };
    for (Eigen::Index i = 0; i < x.size(); ++i) EXPECT_LE(rel_err(central(x(i), f, 1e-6), g.input(i)), 1e-4);
    for (Eigen::Index i = 0; i < layer.gate.size(); ++i) {
      EXPECT_LE(rel_err(central(layer.gate.data()[i], f, 1e-6), g.gate.data()[i]), 1e-4);
    }
    ++checked;
  }
  EXPECT_GE(checked, 10u);
}

TEST(Qnn, HeadCost) {
  EXPECT_EQ(head_cost(make_qnn(8, 1)).gate_multiplies, 64u);
  for (std::size_t h : {1u, 2u, 4u, 8u}) {
    auto layer = make_qnn(8, h);
    auto c = head_cost(layer);
    EXPECT_EQ(c.gate_multiplies, 64u);
    EXPECT_EQ(c.full_width_multiplies, 64u * h);
    std::size_t counted = 0;
    qnn_forward(layer, Vector::Ones(8), &counted);
    EXPECT_EQ(counted, 64u);
  }
  EXPECT_EQ(head_cost(make_qnn(8, 2)).full_width_multiplies, 128u);
  EXPECT_EQ(head_cost(make_qnn(8, 8)).full_width_multiplies, 512u);
  EXPECT_THROW(make_qnn(8, 3), Error);
  EXPECT_THROW(qnn_forward(make_qnn(8, 2), Vector::Ones(7)), Error);
}

TEST(Pool, MeanOfDequantized) {
  std::vector<QuantizedEmbedding> docs = {quantize_norm_int8(Embedding{2, 0}), quantize_norm_int8(Embedding{0, 2})};
  auto c = pool_context(docs, 2);
  EXPECT_NEAR(c.c[0], 1.0, 1e-6);
  EXPECT_NEAR(c.c[1], 1.0, 1e-6);
  EXPECT_EQ(pool_context({}, 3).c, Embedding(3, 0.0f));
}

TEST(Checkpoint, RoundTrip) {
  auto m = random_affine(4, 6, 8, 9);
  auto q = make_qnn_random(8, 2, 0.5, 10);
  auto tensors = to_tensors(m);
  auto qt = to_tensors(q, "qnn");
  tensors.insert(tensors.end(), qt.begin(), qt.end());
  const auto dir = std::filesystem::temp_directory_path();
  const auto data = (dir / "memento_ckpt_test.bin").string();
  const auto manifest = (dir / "memento_ckpt_test.json").string();
  save_checkpoint(data, manifest, tensors);
  auto back = load_checkpoint(data, manifest);
  ASSERT_EQ(back.size(), tensors.size());
  auto m2 = affine_from_tensors(back);
  auto q2 = qnn_from_tensors(back, "qnn");
  std::mt19937_64 rng(11);
  Vector c = randn(rng, 4), e = randn(rng, 6), x = randn(rng, 8);
  // f32 storage
  EXPECT_LE((affine_forward(m2, 0, c, e) - affine_forward(m, 0, c, e)).norm(), 1e-5);
  EXPECT_LE((qnn_forward(q2, x) - qnn_forward(q, x)).norm(), 1e-5);
  EXPECT_EQ(q2.heads, 2u);
  std::filesystem::resize_file(data, 8);
  EXPECT_THROW(load_checkpoint(data, manifest), Error);
  std::remove(data.c_str());
  std::remove(manifest.c_str());
}
