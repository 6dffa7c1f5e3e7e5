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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "memento/mmr.hpp"
#include "memento/rehearsal.hpp"

using namespace memento;

namespace {

TrainingRow row(std::int64_t hour, std::uint8_t label, double loss, Embedding ue = {1, 0}, Embedding ae = {0, 1}) {
  TrainingRow r;
  r.user_id = "u" + std::to_string(hour % 5);
  r.ad_id = "a" + std::to_string(hour % 3);
  r.label = label;
  r.ts_hour = hour;
  r.feat_u = ue;
  r.feat_a = ae;
  r.user_emb = std::move(ue);
  r.ad_emb = std::move(ae);
  r.loss = loss;
  return r;
}

Embedding rand_emb(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0, 1);
  Embedding e(d);
  for (auto& x : e) x = static_cast<float>(n(rng));
  return e;
}

// Rows whose label follows sign(<feat_u, feat_a>) with some noise.
std::vector<TrainingRow> synthetic_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<TrainingRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    auto fu = rand_emb(rng, d), fa = rand_emb(rng, d);
    double dot = 0;
    for (std::size_t k = 0; k < d; ++k) dot += fu[k] * fa[k];
    const double p = 1 / (1 + std::exp(-dot));
    auto r = row(static_cast<std::int64_t>(i / 10), u(rng) < p, u(rng), fu, fa);
    r.user_id = "u" + std::to_string(i % 40);
    r.ad_id = "a" + std::to_string(i % 25);
    rows.push_back(r);
  }
  return rows;
}

std::vector<std::string> ids(const std::vector<TrainingRow>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r.user_id + "/" + std::to_string(r.ts_hour) + "/" + std::to_string(r.loss));
  return out;
}

}  // namespace

TEST(Rows, JsonlRoundTrip) {
  std::vector<TrainingRow> rows = {row(3, 1, 0), row(7, 0, 0)};
  std::stringstream ss;
  write_rows_jsonl(ss, rows);
  auto back = read_rows_jsonl(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].ts_hour, 7);
  EXPECT_EQ(back[0].label, 1);
  EXPECT_EQ(back[0].feat_a, rows[0].feat_a);
  EXPECT_THROW(parse_row_json(R"({"user":"u","ad":"a","label":2,"ts_hour":1,"feat_u":[1],"feat_a":[1]})"), Error);
  EXPECT_THROW(parse_row_json(R"({"user":"u","ad":"a","label":1,"ts_hour":-1,"feat_u":[1],"feat_a":[1]})"), Error);
}

TEST(TwoTowerTest, UntrainedThrows) {
  auto t = make_two_tower(2, 2, {});
  std::vector<TrainingRow> rows = {row(0, 1, 0)};
  try {
    embed_rows(rows, t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUntrainedTower);
  }
}

TEST(TwoTowerTest, IdenticalFeaturesIdenticalEmbeddings) {
  auto rows = synthetic_rows(500, 8, 1);
  auto t = train_two_tower(rows, {});
  std::vector<TrainingRow> pair = {row(0, 1, 0, rows[0].feat_u, rows[0].feat_a),
                                   row(5, 0, 0, rows[0].feat_u, rows[0].feat_a)};
  embed_rows(pair, t);
  EXPECT_EQ(pair[0].user_emb, pair[1].user_emb);
  EXPECT_EQ(pair[0].ad_emb, pair[1].ad_emb);
}

TEST(TwoTowerTest, ZeroWeightsEmbedToBias) {
  TwoTowerConfig cfg;
  cfg.hidden = 4;
  cfg.out_dim = 3;
  auto t = make_two_tower(2, 2, cfg);
  for (auto* tw : {&t.user, &t.ad}) {
    tw->w1.setZero();
    tw->w2.setZero();
    tw->b2 << 0.5, -1, 2;
  }
  t.trained = true;
  std::vector<TrainingRow> rows = {row(0, 1, 0, {3, 4}, {1, 1}), row(1, 0, 0, {-2, 9}, {0, 5})};
  embed_rows(rows, t);
  for (const auto& r : rows) {
    EXPECT_EQ(r.user_emb, (Embedding{0.5f, -1.0f, 2.0f}));
    EXPECT_EQ(r.ad_emb, (Embedding{0.5f, -1.0f, 2.0f}));
  }
}

TEST(TwoTowerTest, LearnsRanking) {
  auto rows = synthetic_rows(6000, 8, 2);
  TwoTowerConfig cfg;
  cfg.epochs = 3;
  auto t = train_two_tower(rows, cfg);
  auto test = synthetic_rows(2000, 8, 3);
  embed_rows(test, t);
  std::vector<double> s;
  std::vector<std::uint8_t> y;
  for (const auto& r : test) {
    double dot = 0;
    for (std::size_t k = 0; k < r.user_emb.size(); ++k) dot += r.user_emb[k] * r.ad_emb[k];
    s.push_back(dot);
    y.push_back(r.label);
  }
  EXPECT_GE(auc(s, y), 0.7);
}

TEST(Chunks, KeepAllWhenRetainLarge) {
  std::vector<TrainingRow> rows = {row(1, 1, 0.5, {2, 0}, {0, 2}), row(1, 0, 0.1, {0, 2}, {2, 0})};
  auto chunks = build_chunks(rows, 5);
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].rows.size(), 2u);
  EXPECT_EQ(chunks[0].user_centroid, (Embedding{1, 1}));
  EXPECT_EQ(chunks[0].ad_centroid, (Embedding{1, 1}));
}

TEST(Chunks, TopLossRule) {
  std::vector<TrainingRow> rows = {row(4, 1, 0.9), row(4, 0, 0.1)};
  auto chunks = build_chunks(rows, 1);
  ASSERT_EQ(chunks[0].rows.size(), 1u);
  EXPECT_EQ(chunks[0].rows[0].loss, 0.9);
}

// Sort-and-slice oracle written separately from the library.
TEST(Chunks, MatchesSortOracle) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<TrainingRow> rows;
  for (int h = 0; h < 60; ++h) {
    const int n = static_cast<int>(u(rng) * 12);
    for (int i = 0; i < n; ++i) rows.push_back(row(h, u(rng) < 0.3, std::round(u(rng) * 1000) / 1000));
  }
  const std::size_t r = 4;
  auto chunks = build_chunks(rows, r);
  std::map<std::int64_t, std::vector<std::size_t>> by_hour;
  for (std::size_t i = 0; i < rows.size(); ++i) by_hour[rows[i].ts_hour].push_back(i);
  ASSERT_EQ(chunks.size(), by_hour.size());
  std::size_t c = 0;
  for (auto& [hour, idx] : by_hour) {
    const std::size_t n = idx.size(), k = std::min(r, n);
    std::vector<std::size_t> pos, neg;
    for (auto i : idx) (rows[i].label ? pos : neg).push_back(i);
    auto by_loss = [&](std::vector<std::size_t>& v) {
      std::stable_sort(v.begin(), v.end(), [&](auto a, auto b) { return rows[a].loss > rows[b].loss; });
    };
    by_loss(pos);
    by_loss(neg);
    const std::size_t qp = k * pos.size() / n, qn = k * neg.size() / n;
    std::vector<std::size_t> keep(pos.begin(), pos.begin() + qp);
    keep.insert(keep.end(), neg.begin(), neg.begin() + qn);
    std::vector<std::size_t> rest(pos.begin() + qp, pos.end());
    rest.insert(rest.end(), neg.begin() + qn, neg.end());
    std::stable_sort(rest.begin(), rest.end(), [&](auto a, auto b) {
      if (rows[a].loss != rows[b].loss) return rows[a].loss > rows[b].loss;
      return a < b;
    });
    for (std::size_t i = 0; keep.size() < k; ++i) keep.push_back(rest[i]);
    std::sort(keep.begin(), keep.end());
    std::vector<TrainingRow> expect;
    for (auto i : keep) expect.push_back(rows[i]);
    EXPECT_EQ(chunks[c].hour, hour);
    EXPECT_EQ(ids(chunks[c].rows), ids(expect));
    ++c;
  }
}

TEST(Replay, ZeroFractionEmpty) {
  std::vector<TrainingRow> rows = {row(1, 1, 0.5), row(2, 0, 0.5)};
  auto chunks = build_chunks(rows, 2);
  ReplayOptions o;
  o.policy = ReplayPolicy::kMmr;
  o.fraction = 0.0;
  o.alpha = 1.0;
  EXPECT_TRUE(select_replay(chunks, chunks, o).rows.empty());
  o.policy = ReplayPolicy::kNone;
  o.fraction = 0.5;
  EXPECT_TRUE(select_replay(chunks, chunks, o).rows.empty());
}

TEST(Replay, IdenticalChunkPicked) {
  std::vector<TrainingRow> recent = {row(100, 1, 0.5, {1, 0}, {1, 0}), row(100, 0, 0.5, {1, 0}, {1, 0})};
  std::vector<TrainingRow> hist = {row(3, 1, 0.5, {0, 1}, {0, 1}), row(3, 0, 0.5, {0, 1}, {0, 1}),
                                   row(7, 1, 0.5, {1, 0}, {1, 0}), row(7, 0, 0.5, {1, 0}, {1, 0})};
  ReplayOptions o;
  o.policy = ReplayPolicy::kMmr;
  o.fraction = 1.0;
  o.alpha = 1.0;
  auto sel = select_replay(build_chunks(recent, 4), build_chunks(hist, 4), o);
  EXPECT_EQ(sel.budget, 2u);
  EXPECT_EQ(sel.chunk_hours, (std::vector<std::int64_t>{7}));
  ASSERT_EQ(sel.rows.size(), 2u);
  for (const auto& r : sel.rows) EXPECT_EQ(r.ts_hour, 7);
}

TEST(Replay, BudgetExceedsCorpus) {
  std::vector<TrainingRow> recent = {row(100, 1, 0.5), row(100, 0, 0.5), row(101, 0, 0.5)};
  std::vector<TrainingRow> hist = {row(1, 1, 0.5)};
  ReplayOptions o;
  o.policy = ReplayPolicy::kRandom;
  o.fraction = 1.0;
  try {
    select_replay(build_chunks(recent, 4), build_chunks(hist, 4), o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBudgetExceedsCorpus);
  }
}

TEST(Replay, MmrMatchesOracleOverCentroids) {
  std::mt19937_64 rng(5);
  std::vector<TrainingRow> hist, recent;
  for (int h = 0; h < 365; ++h) {
    for (int i = 0; i < 3; ++i) hist.push_back(row(h, i % 2, 0.1 * i, rand_emb(rng, 8), rand_emb(rng, 8)));
  }
  for (int h = 400; h < 420; ++h) {
    for (int i = 0; i < 4; ++i) recent.push_back(row(h, i % 2, 0.1, rand_emb(rng, 8), rand_emb(rng, 8)));
  }
  auto hc = build_chunks(hist, 3);
  auto rc = build_chunks(recent, 100);
  ReplayOptions o;
  o.policy = ReplayPolicy::kMmr;
  o.fraction = 0.25;
  o.alpha = 0.3;
  o.beta = 0.5;
  auto sel = select_replay(rc, hc, o);
  EXPECT_EQ(sel.budget, 20u);
  EXPECT_GE(sel.rows.size(), sel.budget);

  // Oracle: mean of recent centroids as the query, chunk hours as doc ids.
  Embedding qu(8, 0.0f), qa(8, 0.0f);
  for (const auto& c : rc) {
    for (int k = 0; k < 8; ++k) {
      qu[k] += c.user_centroid[k] / rc.size();
      qa[k] += c.ad_centroid[k] / rc.size();
    }
  }
  std::vector<MmrCandidate> cand;
  for (const auto& c : hc) cand.push_back({static_cast<DocId>(c.hour), c.user_centroid, c.ad_centroid});
  RetrievalQuery q{qu, qa, 0.3, 0.5, static_cast<double>(sel.chunk_hours.size()) / cand.size()};
  auto ref = mmr_oracle(q, cand).selected;
  ASSERT_EQ(ref.size(), sel.chunk_hours.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(static_cast<std::int64_t>(ref[i]), sel.chunk_hours[i]);
  // the last chunk was needed to reach the budget
  EXPECT_LT(sel.rows.size() - hc.front().rows.size(), sel.budget);
  EXPECT_TRUE(std::is_sorted(sel.rows.begin(), sel.rows.end(),
                             [](const auto& a, const auto& b) { return a.ts_hour < b.ts_hour; }));
}

TEST(Replay, RandomIsSeededAndExact) {
  std::mt19937_64 rng(6);
  std::vector<TrainingRow> hist, recent;
  for (int h = 0; h < 50; ++h) {
    for (int i = 0; i < 4; ++i) hist.push_back(row(h, i % 2, 0.1 * i, rand_emb(rng, 4), rand_emb(rng, 4)));
  }
  for (int i = 0; i < 30; ++i) recent.push_back(row(100 + i, i % 2, 0.1));
  ReplayOptions o;
  o.policy = ReplayPolicy::kRandom;
  o.fraction = 0.25;
  o.seed = 3;
  auto a = select_replay(build_chunks(recent, 9), build_chunks(hist, 4), o);
  auto b = select_replay(build_chunks(recent, 9), build_chunks(hist, 4), o);
  EXPECT_EQ(a.rows.size(), 8u);
  EXPECT_EQ(ids(a.rows), ids(b.rows));
  o.seed = 4;
  EXPECT_NE(ids(select_replay(build_chunks(recent, 9), build_chunks(hist, 4), o).rows), ids(a.rows));
}

TEST(Ranker, PredictsProbabilities) {
  RankerConfig cfg;
  cfg.dim = 8;
  ToyRanker m(cfg);
  auto rows = synthetic_rows(200, 8, 7);
  for (const auto& r : rows) {
    const double p = m.predict(r);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
  EXPECT_TRUE(m.user_table().empty());
  cfg.use_context = true;
  ToyRanker c(cfg);
  EXPECT_THROW(c.predict(rows[0]), Error);
}

TEST(Ranker, TrainingReducesLoss) {
  RankerConfig cfg;
  cfg.dim = 8;
  ToyRanker m(cfg);
  auto rows = synthetic_rows(4000, 8, 8);
  const double first = train_pass(m, rows);
  const double second = train_pass(m, rows);
  EXPECT_LT(second, first);
  std::vector<TrainingRow> shuffled = {rows[50], rows[0]};
  EXPECT_THROW(train_pass(m, shuffled), Error);
}

TEST(SecondPass, PlanValidation) {
  auto code = [](SecondPassPlan p) {
    try {
      validate_plan(p);
    } catch (const Error& e) {
      return e.code() == ErrorCode::kInvalidPlan;
    }
    return false;
  };
  SecondPassPlan p;
  EXPECT_FALSE(code(p));
  p.strategy = SecondPassStrategy::kShrink;
  p.shrink_factor = 0.0;
  EXPECT_TRUE(code(p));
  p.shrink_factor = 1.5;
  EXPECT_TRUE(code(p));
  p.shrink_factor = 1.0;
  p.lr_multiplier = 1.0;
  EXPECT_FALSE(code(p));
  p.lr_multiplier = 0.5;
  EXPECT_TRUE(code(p));
  p.lr_multiplier = 2.0;
  p.replay_fraction = 1.2;
  p.replay_policy = ReplayPolicy::kRandom;
  EXPECT_TRUE(code(p));
  p.replay_fraction = 0.25;
  p.replay_policy = ReplayPolicy::kNone;
  EXPECT_TRUE(code(p));
}

TEST(SecondPass, ShrinkOneIsBitwiseNoop) {
  RankerConfig cfg;
  cfg.dim = 8;
  ToyRanker a(cfg);
  auto rows = synthetic_rows(1000, 8, 9);
  train_pass(a, rows);
  ToyRanker b = a;
  SecondPassPlan p;
  p.strategy = SecondPassStrategy::kShrink;
  p.shrink_factor = 1.0;
  p.lr_multiplier = 1.0;
  b.shrink_sparse(1.0);
  for (const auto& [k, v] : a.user_table()) {
    const auto& w = b.user_table().at(k);
    EXPECT_EQ(std::memcmp(v.data(), w.data(), sizeof(double) * v.size()), 0);
  }
  // Shrink(1) + one pass equals a plain continued pass.
  auto more = synthetic_rows(300, 8, 10);
  for (auto& r : more) r.ts_hour += 1000;
  ToyRanker c = a;
  second_pass_train(a, more, {}, p);
  train_pass(c, more);
  for (const auto& r : more) EXPECT_EQ(a.predict(r), c.predict(r));
}

TEST(SecondPass, ResetRedrawsAndShrinkScales) {
  RankerConfig cfg;
  cfg.dim = 8;
  ToyRanker a(cfg);
  auto rows = synthetic_rows(500, 8, 11);
  train_pass(a, rows);
  ToyRanker s = a;
  s.shrink_sparse(0.1);
  for (const auto& [k, v] : a.user_table()) EXPECT_LE((s.user_table().at(k) - 0.1 * v).norm(), 1e-15);
  ToyRanker r = a;
  r.reset_sparse();
  EXPECT_EQ(r.sparse_generation(), a.sparse_generation() + 1);
  EXPECT_EQ(r.user_table().size(), a.user_table().size());
  double moved = 0;
  for (const auto& [k, v] : a.user_table()) moved += (r.user_table().at(k) - v).norm();
  EXPECT_GT(moved, 0.0);
}

TEST(SecondPass, MergesReplayByTime) {
  RankerConfig cfg;
  cfg.dim = 8;
  ToyRanker m(cfg);
  auto recent = synthetic_rows(100, 8, 12);
  for (auto& r : recent) r.ts_hour += 500;
  auto replay = synthetic_rows(30, 8, 13);
  SecondPassPlan p;
  p.replay_fraction = 0.3;
  p.replay_policy = ReplayPolicy::kRandom;
  auto res = second_pass_train(m, recent, replay, p);
  EXPECT_EQ(res.rows_trained, 130u);
  EXPECT_EQ(res.replay_rows, 30u);
  p.replay_policy = ReplayPolicy::kNone;
  p.replay_fraction = 0.0;
  EXPECT_THROW(second_pass_train(m, recent, replay, p), Error);
}

TEST(Forgetting, NeOnBothHoldouts) {
  RankerConfig cfg;
  cfg.dim = 8;
  ToyRanker m(cfg);
  // labels follow the user id here, which the ranker can learn
  auto by_user = [](std::size_t n, std::uint64_t seed) {
    auto r = synthetic_rows(n, 8, seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    for (std::size_t i = 0; i < r.size(); ++i) r[i].label = u(rng) < ((i % 40) < 20 ? 0.8 : 0.1);
    return r;
  };
  auto rows = by_user(3000, 14);
  train_pass(m, rows);
  auto old = by_user(400, 15), recent = by_user(400, 16);
  auto rep = eval_forgetting(m, old, recent);
  EXPECT_NEAR(rep.ne_old, normalized_entropy(predict_batch(m, old)), 1e-15);
  EXPECT_NEAR(rep.ne_recent, normalized_entropy(predict_batch(m, recent)), 1e-15);
  EXPECT_LT(rep.ne_old, 1.0);
  try {
    eval_forgetting(m, {}, recent);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyHoldout);
  }
}
