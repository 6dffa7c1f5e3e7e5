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
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <thread>

#include "memento/vindex.hpp"
#include "test_util.hpp"

using namespace memento;
using memento::testing::naive_cosine;
using memento::testing::random_vec;

namespace {

MementoDoc make_doc(DocId id, const Embedding& e) {
  MementoDoc d;
  d.doc_id = id;
  d.user_id = "u" + std::to_string(id % 17);
  d.source = SourceId{static_cast<std::uint32_t>(id % 3), "", static_cast<std::uint32_t>(e.size())};
  d.epoch_start_day = static_cast<std::int64_t>(id % 50) * 7;
  d.epoch_len_days = 7;
  d.embedding = quantize_norm_int8(e);
  d.day_count = 7;
  return d;
}

std::vector<MementoDoc> clustered(std::size_t n, std::size_t d, std::size_t centers, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Embedding> c;
  for (std::size_t i = 0; i < centers; ++i) c.push_back(random_vec(rng, d));
  std::vector<MementoDoc> docs;
  std::uniform_int_distribution<std::size_t> pick(0, centers - 1);
  for (std::size_t i = 0; i < n; ++i) {
    auto e = c[pick(rng)];
    auto noise = random_vec(rng, d, 0.35);
    for (std::size_t j = 0; j < d; ++j) e[j] += noise[j];
    docs.push_back(make_doc(1000 + i * 7, e));
  }
  return docs;
}

// Independent exact search over dequantized vectors.
std::vector<DocId> naive_topk(const std::vector<MementoDoc>& docs, const Embedding& q, std::size_t k) {
  // the scan quantizes the query as well
  const Embedding qq = dequantize(quantize_norm_int8(q));
  std::vector<std::pair<double, DocId>> s;
  for (const auto& d : docs) s.push_back({-naive_cosine(dequantize(d.embedding), qq), d.doc_id});
  std::sort(s.begin(), s.end());
  std::vector<DocId> out;
  for (std::size_t i = 0; i < std::min(k, s.size()); ++i) out.push_back(s[i].second);
  return out;
}

}  // namespace

TEST(Build, TwoSeparatedPoints) {
  std::vector<MementoDoc> docs = {make_doc(1, {10, 0.1f}), make_doc(2, {-0.2f, 9}), make_doc(3, {10, 0.2f}),
                                  make_doc(4, {-0.1f, 9})};
  BuildOptions o;
  o.n_clusters = 2;
  auto snap = build(docs, o);
  ASSERT_EQ(snap.n_clusters(), 2u);
  std::set<std::set<DocId>> groups;
  for (std::size_t c = 0; c < 2; ++c) {
    auto p = snap.posting(c);
    groups.insert(std::set<DocId>(p.begin(), p.end()));
  }
  EXPECT_EQ(groups, (std::set<std::set<DocId>>{{1, 3}, {2, 4}}));
}

TEST(Build, SingleCluster) {
  auto docs = clustered(50, 8, 3, 1);
  BuildOptions o;
  o.n_clusters = 1;
  auto snap = build(docs, o);
  ASSERT_EQ(snap.n_clusters(), 1u);
  EXPECT_EQ(snap.posting(0).size(), docs.size());
}

TEST(Build, EveryDocInOnePosting) {
  auto docs = clustered(500, 16, 8, 2);
  auto snap = build(docs, {});
  std::multiset<DocId> seen;
  for (std::size_t c = 0; c < snap.n_clusters(); ++c) {
    for (auto id : snap.posting(c)) {
      seen.insert(id);
      EXPECT_TRUE(snap.vector(id).has_value());
    }
  }
  EXPECT_EQ(seen.size(), docs.size());
  for (const auto& d : docs) EXPECT_EQ(seen.count(d.doc_id), 1u);
  EXPECT_EQ(snap.n_clusters(), 23u);  // ceil(sqrt(500))
}

TEST(Build, DeterministicBytes) {
  auto docs = clustered(300, 16, 5, 3);
  BuildOptions o;
  o.seed = 9;
  EXPECT_EQ(build(docs, o).serialize(), build(docs, o).serialize());
}

TEST(Build, ClampsClusterCount) {
  auto docs = clustered(5, 8, 2, 4);
  BuildOptions o;
  o.n_clusters = 50;
  EXPECT_EQ(build(docs, o).n_clusters(), 5u);
}

TEST(Build, Errors) {
  EXPECT_THROW(build(std::vector<MementoDoc>{}, {}), Error);
  std::vector<MementoDoc> mixed = {make_doc(1, {1, 0}), make_doc(2, {1, 0, 0})};
  try {
    build(mixed, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
  std::vector<MementoDoc> dup = {make_doc(1, {1, 0}), make_doc(1, {0, 1})};
  EXPECT_THROW(build(dup, {}), Error);
}

TEST(Knn, StoredDocFirst) {
  auto docs = clustered(400, 16, 6, 5);
  auto snap = build(docs, {});
  auto q = dequantize(docs[37].embedding);
  auto r = knn(snap, q, 5, snap.n_clusters());
  ASSERT_FALSE(r.empty());
  EXPECT_EQ(r[0].doc_id, docs[37].doc_id);
  EXPECT_NEAR(r[0].similarity, 1.0, 1e-6);
}

TEST(Knn, LargeKReturnsAllSorted) {
  auto docs = clustered(30, 8, 3, 6);
  auto snap = build(docs, {});
  auto r = knn(snap, Embedding{1, 0, 0, 0, 0, 0, 0, 1}, 100, snap.n_clusters());
  ASSERT_EQ(r.size(), 30u);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_GE(r[i - 1].similarity, r[i].similarity);
}

TEST(Knn, FullProbeEqualsFlatScan) {
  auto docs = clustered(2000, 32, 20, 7);
  auto snap = build(docs, {});
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    auto q = random_vec(rng, 32);
    EXPECT_EQ(knn(snap, q, 10, snap.n_clusters()), flat_scan(snap, q, 10));
  }
}

TEST(Knn, Errors) {
  auto snap = build(clustered(20, 8, 2, 9), {});
  EXPECT_THROW(knn(snap, Embedding(4, 1.0f), 3, 1), Error);
  EXPECT_THROW(knn(snap, Embedding(8, 1.0f), 0, 1), Error);
  EXPECT_THROW(knn(snap, Embedding(8, 1.0f), 3, 0), Error);
  EXPECT_THROW(flat_scan(snap, Embedding(4, 1.0f), 3), Error);
}

TEST(FlatScan, SingleDocAndAxes) {
  auto one = build(std::vector<MementoDoc>{make_doc(5, {1, 2, 3})}, {});
  auto r = flat_scan(one, Embedding{0, 0, 1}, 3);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].doc_id, 5u);
  std::vector<MementoDoc> axes;
  for (int i = 0; i < 4; ++i) {
    Embedding e(4, 0.0f);
    e[i] = 1;
    axes.push_back(make_doc(10 + i, e));
  }
  auto snap = build(axes, {});
  auto hits = flat_scan(snap, Embedding{0, 0, 2, 0}, 4);
  EXPECT_EQ(hits[0].doc_id, 12u);
  EXPECT_NEAR(hits[0].similarity, 1.0, 1e-12);
  for (std::size_t i = 1; i < 4; ++i) {
    EXPECT_NEAR(hits[i].similarity, 0.0, 1e-12);
    if (i > 1) EXPECT_LT(hits[i - 1].doc_id, hits[i].doc_id);
  }
}

TEST(FlatScan, MatchesNaive) {
  std::mt19937_64 rng(10);
  std::vector<MementoDoc> docs;
  for (int i = 0; i < 1000; ++i) docs.push_back(make_doc(i * 13 + 1, random_vec(rng, 24)));
  auto snap = build(docs, {});
  for (int t = 0; t < 20; ++t) {
    auto q = random_vec(rng, 24);
    auto hits = flat_scan(snap, q, 10);
    std::vector<DocId> ids;
    for (auto& h : hits) ids.push_back(h.doc_id);
    EXPECT_EQ(ids, naive_topk(docs, q, 10));
  }
}

TEST(Knn, RecallOnClusteredData) {
  auto docs = clustered(10000, 32, 64, 11);
  auto snap = build(docs, {});
  std::mt19937_64 rng(12);
  std::size_t hit = 0, total = 0;
  const std::size_t probe = snap.default_probe();
  for (int t = 0; t < 100; ++t) {
    auto q = dequantize(docs[rng() % docs.size()].embedding);
    auto noise = random_vec(rng, 32, 0.2);
    for (std::size_t j = 0; j < q.size(); ++j) q[j] += noise[j];
    auto exact = flat_scan(snap, q, 10);
    auto approx = knn(snap, q, 10, probe);
    std::set<DocId> a;
    for (auto& h : approx) a.insert(h.doc_id);
    for (auto& h : exact) hit += a.count(h.doc_id);
    total += exact.size();
  }
  EXPECT_GE(static_cast<double>(hit) / total, 0.9);
}

TEST(Snapshot, SaveLoadRoundTrip) {
  auto docs = clustered(200, 16, 4, 13);
  auto snap = build(docs, {});
  auto path = (std::filesystem::temp_directory_path() / "memento_snap_test.bin").string();
  snap.save(path);
  auto back = IndexSnapshot::load(path);
  EXPECT_EQ(back.serialize(), snap.serialize());
  EXPECT_EQ(back.checksum(), snap.checksum());
  EXPECT_EQ(back.compute_checksum(), back.checksum());
  auto pos = back.position_of(docs[3].doc_id);
  ASSERT_TRUE(pos.has_value());
  EXPECT_EQ(back.meta_at(*pos).user_id, docs[3].user_id);
  EXPECT_EQ(back.meta_at(*pos).epoch_start_day, docs[3].epoch_start_day);
  std::remove(path.c_str());
}

TEST(Snapshot, CorruptionDetected) {
  auto bytes = build(clustered(50, 8, 2, 14), {}).serialize();
  for (std::size_t at : {std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[at] ^= 0x01;
    try {
      IndexSnapshot::deserialize(bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kCorruptFile);
    }
  }
  EXPECT_THROW(IndexSnapshot::deserialize(bytes.substr(0, 20)), Error);
  try {
    IndexSnapshot::load("/nonexistent/dir/x.snap");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

TEST(Retrieve, FullShortlistEqualsMmr) {
  auto docs = clustered(300, 16, 5, 15);
  auto snap = build(docs, {});
  std::mt19937_64 rng(16);
  std::vector<QuantizedCandidate> all;
  for (auto& d : docs) all.push_back({d.doc_id, d.embedding, d.embedding});
  for (auto [a, b] : {std::pair{0.0, 0.0}, {0.3, 0.0}, {0.05, 0.8}}) {
    RetrievalQuery q{random_vec(rng, 16), random_vec(rng, 16), a, b, 0.25};
    EXPECT_EQ(retrieve_with_mmr(snap, q, docs.size()).selected, mmr_select_quantized(q, all).selected);
  }
}

TEST(Retrieve, SingleNearest) {
  auto docs = clustered(300, 16, 5, 17);
  auto snap = build(docs, {});
  std::mt19937_64 rng(18);
  auto u = random_vec(rng, 16);
  RetrievalQuery q{u, std::nullopt, 0.5, 0.0, 1.0};
  auto sel = retrieve_with_mmr(snap, q, 1, snap.n_clusters());
  ASSERT_EQ(sel.selected.size(), 1u);
  EXPECT_EQ(sel.selected[0], flat_scan(snap, u, 1)[0].doc_id);
}

TEST(Retrieve, ShortlistOverlap) {
  auto docs = clustered(2000, 16, 10, 19);
  auto snap = build(docs, {});
  std::vector<QuantizedCandidate> all;
  for (auto& d : docs) all.push_back({d.doc_id, d.embedding, d.embedding});
  std::mt19937_64 rng(20);
  std::size_t inter = 0, total = 0;
  for (auto [a, b] : {std::pair{0.3, 0.6}, {0.05, 0.8}, {0.5, 0.4}, {0.05, 0.95}}) {
    for (int t = 0; t < 5; ++t) {
      auto u = dequantize(docs[rng() % docs.size()].embedding);
      auto ad = dequantize(docs[rng() % docs.size()].embedding);
      // k = 10 out of the full corpus; shortlist 4k with the rate scaled to keep k
      RetrievalQuery full{u, ad, a, b, 10.0 / docs.size()};
      auto ref = mmr_select_quantized(full, all).selected;
      RetrievalQuery sq{u, ad, a, b, 10.0 / 40.0};
      auto got = retrieve_with_mmr(snap, sq, 40, snap.n_clusters()).selected;
      std::set<DocId> g(got.begin(), got.end());
      for (auto id : ref) inter += g.count(id);
      total += ref.size();
    }
  }
  EXPECT_GE(static_cast<double>(inter) / total, 0.95);
}

TEST(Store, VersionsIncreaseAndIsolation) {
  auto docs = clustered(100, 8, 3, 21);
  SnapshotStore store;
  EXPECT_EQ(store.current(), nullptr);
  BuildOptions o;
  o.version = 1;
  EXPECT_TRUE(store.publish(std::make_shared<const IndexSnapshot>(build(docs, o))));
  auto held = store.current();
  o.version = 2;
  docs.pop_back();
  EXPECT_TRUE(store.publish(std::make_shared<const IndexSnapshot>(build(docs, o))));
  EXPECT_EQ(store.current()->version(), 2u);
  EXPECT_EQ(held->version(), 1u);
  EXPECT_EQ(held->size(), 100u);
  EXPECT_EQ(held->compute_checksum(), held->checksum());
  o.version = 2;
  EXPECT_FALSE(store.publish(std::make_shared<const IndexSnapshot>(build(docs, o))));
}

TEST(Store, ConcurrentReadersSeeValidSnapshots) {
  auto docs = clustered(400, 8, 4, 22);
  SnapshotStore store;
  BuildOptions o;
  store.publish(std::make_shared<const IndexSnapshot>(build(docs, o)));
  std::atomic<bool> stop{false};
  std::atomic<std::size_t> bad{0}, queries{0};
  std::vector<std::thread> readers;
  for (int r = 0; r < 4; ++r) {
    readers.emplace_back([&, r] {
      std::mt19937_64 rng(r);
      std::uint64_t last = 0;
      while (!stop.load()) {
        auto s = store.current();
        if (s->compute_checksum() != s->checksum() || s->version() < last) ++bad;
        last = s->version();
        knn(*s, random_vec(rng, 8), 5, 2);
        ++queries;
      }
    });
  }
  for (std::uint64_t v = 2; v < 12; ++v) {
    o.version = v;
    o.seed = v;
    store.publish(std::make_shared<const IndexSnapshot>(build(docs, o)));
  }
  stop = true;
  for (auto& t : readers) t.join();
  EXPECT_EQ(bad.load(), 0u);
  EXPECT_GT(queries.load(), 0u);
  EXPECT_EQ(store.current()->version(), 11u);
}
