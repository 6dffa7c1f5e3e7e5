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

#include "memento/vindex.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>

#include "binary_io.hpp"

namespace memento {
namespace {

constexpr char kSnapshotMagic[4] = {'M', 'M', 'T', 'O'};
constexpr std::uint32_t kSnapshotFormat = 1;

bool hit_before(const KnnHit& a, const KnnHit& b) {
  return a.similarity > b.similarity ||
         (a.similarity == b.similarity && a.doc_id < b.doc_id);
}

KnnResult top_k(std::vector<KnnHit> hits, std::size_t k) {
  k = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k),
                    hits.end(), hit_before);
  hits.resize(k);
  return hits;
}

float squared_distance(const float* a, const float* b, std::size_t dim) {
  float s = 0.0f;
  for (std::size_t i = 0; i < dim; ++i) {
    const float d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Lloyd's k-means over the rows of `points` (n x dim). Returns centroids.
std::vector<float> kmeans(const std::vector<float>& points, std::size_t n,
                          std::size_t dim, std::size_t k, std::uint32_t iters,
                          std::mt19937_64& rng) {
  std::vector<float> centroids(k * dim, 0.0f);
  // k-means++ seeding.
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t chosen = pick(rng);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(chosen * dim), dim,
                centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d2 =
          squared_distance(&points[i * dim], &centroids[c * dim], dim);
      min_d2[i] = std::min(min_d2[i], d2);
      total += min_d2[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      chosen = pick(rng);
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng);
    chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= min_d2[i];
      if (target < 0.0) {
        chosen = i;
        break;
      }
    }
  }

  std::vector<std::uint32_t> assign(n, 0);
  std::vector<float> dist(n, 0.0f);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::uint32_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      float best = std::numeric_limits<float>::infinity();
      std::uint32_t best_c = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const float d = squared_distance(&points[i * dim], &centroids[c * dim], dim);
        if (d < best) {
          best = d;
          best_c = static_cast<std::uint32_t>(c);
        }
      }
      assign[i] = best_c;
      dist[i] = best;
    }
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < dim; ++j) {
        sums[assign[i] * dim + j] += points[i * dim + j];
      }
    }
    std::vector<std::size_t> by_distance;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (std::size_t j = 0; j < dim; ++j) {
          centroids[c * dim + j] =
              static_cast<float>(sums[c * dim + j] / static_cast<double>(counts[c]));
        }
        continue;
      }
      if (by_distance.empty()) {
        by_distance.resize(n);
        std::iota(by_distance.begin(), by_distance.end(), std::size_t{0});
        std::stable_sort(by_distance.begin(), by_distance.end(),
                         [&](std::size_t a, std::size_t b) {
                           return dist[a] > dist[b];
                         });
      }
      // Re-seed from the farthest point not yet used for re-seeding.
      const std::size_t p = by_distance.front();
      by_distance.erase(by_distance.begin());
      std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(p * dim), dim,
                  centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
      dist[p] = 0.0f;
    }
  }
  return centroids;
}

// Cluster order by descending query score, ties to the lower index.
std::vector<std::size_t> rank_clusters(const IndexSnapshot& s,
                                       const std::vector<double>& score) {
  std::vector<std::size_t> order(s.n_clusters());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

double float_cosine(std::span<const float> a, std::span<const float> b) {
  return cosine_with_norms(a, l2_norm(a), b, l2_norm(b));
}

}  // namespace

std::size_t IndexSnapshot::default_probe() const {
  return std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::ceil(std::sqrt(static_cast<double>(n_clusters())))));
}

std::span<const float> IndexSnapshot::centroid(std::size_t cluster) const {
  return std::span<const float>(centroids_).subspan(cluster * dim_, dim_);
}

std::span<const DocId> IndexSnapshot::posting(std::size_t cluster) const {
  return std::span<const DocId>(posting_ids_)
      .subspan(offsets_[cluster], offsets_[cluster + 1] - offsets_[cluster]);
}

std::span<const std::uint32_t> IndexSnapshot::posting_positions(
    std::size_t cluster) const {
  return std::span<const std::uint32_t>(posting_pos_)
      .subspan(offsets_[cluster], offsets_[cluster + 1] - offsets_[cluster]);
}

std::optional<std::size_t> IndexSnapshot::position_of(DocId id) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

std::span<const std::int8_t> IndexSnapshot::codes_at(std::size_t pos) const {
  return std::span<const std::int8_t>(codes_).subspan(pos * dim_, dim_);
}

QuantizedEmbedding IndexSnapshot::vector_at(std::size_t pos) const {
  auto codes = codes_at(pos);
  return QuantizedEmbedding{norms_[pos], {codes.begin(), codes.end()}};
}

std::optional<QuantizedEmbedding> IndexSnapshot::vector(DocId id) const {
  auto pos = position_of(id);
  if (!pos) return std::nullopt;
  return vector_at(*pos);
}

std::uint32_t IndexSnapshot::compute_checksum() const {
  uLong crc = crc32(0L, Z_NULL, 0);
  auto feed = [&crc](const void* p, std::size_t n) {
    crc = crc32(crc, static_cast<const Bytef*>(p), static_cast<uInt>(n));
  };
  feed(&version_, sizeof(version_));
  feed(centroids_.data(), centroids_.size() * sizeof(float));
  feed(offsets_.data(), offsets_.size() * sizeof(std::uint64_t));
  feed(posting_ids_.data(), posting_ids_.size() * sizeof(DocId));
  feed(ids_.data(), ids_.size() * sizeof(DocId));
  feed(norms_.data(), norms_.size() * sizeof(float));
  feed(codes_.data(), codes_.size());
  return static_cast<std::uint32_t>(crc);
}

void IndexSnapshot::finalize() {
  code_norms_.resize(ids_.size());
  for (std::size_t p = 0; p < ids_.size(); ++p) {
    code_norms_[p] = code_norm(codes_at(p));
  }
  posting_pos_.resize(posting_ids_.size());
  for (std::size_t i = 0; i < posting_ids_.size(); ++i) {
    posting_pos_[i] = static_cast<std::uint32_t>(*position_of(posting_ids_[i]));
  }
  checksum_ = compute_checksum();
}

IndexSnapshot build(std::span<const MementoDoc> docs,
                    const BuildOptions& options) {
  if (docs.empty()) {
    throw Error(ErrorCode::kEmptyCandidates, "cannot build an empty index");
  }
  const std::size_t dim = docs.front().embedding.dim();
  for (const auto& d : docs) {
    check_same_dim(d.embedding.dim(), dim, "index doc dimension");
  }
  const std::size_t n = docs.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return docs[a].doc_id < docs[b].doc_id;
  });
  for (std::size_t i = 1; i < n; ++i) {
    if (docs[order[i]].doc_id == docs[order[i - 1]].doc_id) {
      throw Error(ErrorCode::kDuplicateKey, "duplicate doc_id in index build");
    }
  }

  std::size_t k = options.n_clusters;
  if (k == 0) {
    k = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  }
  if (k > n) {
    std::cerr << "warning: n_clusters " << k << " exceeds " << n
              << " docs; clamping\n";
    k = n;
  }

  IndexSnapshot s;
  s.version_ = options.version;
  s.seed_ = options.seed;
  s.kmeans_iters_ = options.kmeans_iters;
  s.dim_ = dim;
  s.ids_.resize(n);
  s.norms_.resize(n);
  s.codes_.resize(n * dim);
  s.meta_.resize(n);
  std::vector<float> unit(n * dim, 0.0f);
  for (std::size_t p = 0; p < n; ++p) {
    const auto& d = docs[order[p]];
    s.ids_[p] = d.doc_id;
    s.norms_[p] = d.embedding.norm;
    std::copy(d.embedding.codes.begin(), d.embedding.codes.end(),
              s.codes_.begin() + static_cast<std::ptrdiff_t>(p * dim));
    s.meta_[p] = DocMeta{d.user_id, d.source.id, d.epoch_start_day};
    const double cn = code_norm(d.embedding.codes);
    if (cn > 0.0) {
      for (std::size_t j = 0; j < dim; ++j) {
        unit[p * dim + j] = static_cast<float>(d.embedding.codes[j] / cn);
      }
    }
  }

  std::mt19937_64 rng(options.seed);
  const std::size_t cap = std::max<std::size_t>(1, options.max_points_per_centroid) * k;
  std::vector<float> centroids;
  if (n > cap) {
    std::vector<std::size_t> sample(n);
    std::iota(sample.begin(), sample.end(), std::size_t{0});
    for (std::size_t i = 0; i < cap; ++i) {
      std::uniform_int_distribution<std::size_t> u(i, n - 1);
      std::swap(sample[i], sample[u(rng)]);
    }
    sample.resize(cap);
    std::sort(sample.begin(), sample.end());
    std::vector<float> train(cap * dim);
    for (std::size_t i = 0; i < cap; ++i) {
      std::copy_n(unit.begin() + static_cast<std::ptrdiff_t>(sample[i] * dim), dim,
                  train.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    centroids = kmeans(train, cap, dim, k, options.kmeans_iters, rng);
  } else {
    centroids = kmeans(unit, n, dim, k, options.kmeans_iters, rng);
  }

  std::vector<std::uint32_t> assign(n);
  std::vector<std::uint64_t> counts(k, 0);
  for (std::size_t p = 0; p < n; ++p) {
    float best = std::numeric_limits<float>::infinity();
    std::uint32_t best_c = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const float d = squared_distance(&unit[p * dim], &centroids[c * dim], dim);
      if (d < best) {
        best = d;
        best_c = static_cast<std::uint32_t>(c);
      }
    }
    assign[p] = best_c;
    ++counts[best_c];
  }
  s.centroids_ = std::move(centroids);
  s.offsets_.assign(k + 1, 0);
  for (std::size_t c = 0; c < k; ++c) s.offsets_[c + 1] = s.offsets_[c] + counts[c];
  s.posting_ids_.resize(n);
  std::vector<std::uint64_t> fill(s.offsets_.begin(), s.offsets_.end() - 1);
  for (std::size_t p = 0; p < n; ++p) {
    s.posting_ids_[fill[assign[p]]++] = s.ids_[p];
  }
  s.finalize();
  return s;
}

KnnResult knn(const IndexSnapshot& snapshot, std::span<const float> query,
              std::size_t k, std::size_t n_probe) {
  check_same_dim(query.size(), snapshot.dim(), "knn query");
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (n_probe < 1 || n_probe > snapshot.n_clusters()) {
    throw Error(ErrorCode::kInvalidArgument, "n_probe out of range");
  }
  const auto q = quantize_norm_int8(query);
  const double qn = code_norm(q.codes);

  std::vector<double> score(snapshot.n_clusters());
  for (std::size_t c = 0; c < score.size(); ++c) {
    score[c] = float_cosine(query, snapshot.centroid(c));
  }
  const auto clusters = rank_clusters(snapshot, score);

  std::vector<KnnHit> hits;
  for (std::size_t i = 0; i < n_probe; ++i) {
    for (std::uint32_t p : snapshot.posting_positions(clusters[i])) {
      hits.push_back({snapshot.doc_id_at(p),
                      quantized_cosine(snapshot.codes_at(p),
                                       snapshot.code_norm_at(p), q.codes, qn)});
    }
  }
  return top_k(std::move(hits), k);
}

KnnResult flat_scan(const IndexSnapshot& snapshot, std::span<const float> query,
                    std::size_t k) {
  check_same_dim(query.size(), snapshot.dim(), "flat_scan query");
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  const auto q = quantize_norm_int8(query);
  const double qn = code_norm(q.codes);
  std::vector<KnnHit> hits(snapshot.size());
  for (std::size_t p = 0; p < snapshot.size(); ++p) {
    hits[p] = {snapshot.doc_id_at(p),
               quantized_cosine(snapshot.codes_at(p), snapshot.code_norm_at(p),
                                q.codes, qn)};
  }
  return top_k(std::move(hits), k);
}

MmrSelection retrieve_with_mmr(const IndexSnapshot& snapshot,
                               const RetrievalQuery& query,
                               std::size_t candidate_k, std::size_t n_probe) {
  validate_query(query);
  if (candidate_k < 1) {
    throw Error(ErrorCode::kInvalidArgument, "candidate_k must be >= 1");
  }
  check_same_dim(query.user_emb.size(), snapshot.dim(), "query user_emb");
  if (query.ad_emb) {
    check_same_dim(query.ad_emb->size(), snapshot.dim(), "query ad_emb");
  }
  if (n_probe == 0) n_probe = snapshot.default_probe();
  n_probe = std::min(n_probe, snapshot.n_clusters());

  const bool weighted = query.alpha + query.beta > 0.0;
  const double wu = weighted ? query.alpha : 1.0;
  const double wa = weighted ? query.beta : 0.0;

  const auto uq = quantize_norm_int8(query.user_emb);
  const double uqn = code_norm(uq.codes);
  QuantizedEmbedding aq;
  double aqn = 0.0;
  if (wa != 0.0) {
    aq = quantize_norm_int8(*query.ad_emb);
    aqn = code_norm(aq.codes);
  }
  auto doc_score = [&](std::size_t p) {
    const auto codes = snapshot.codes_at(p);
    const double cn = snapshot.code_norm_at(p);
    double s = wu * quantized_cosine(codes, cn, uq.codes, uqn);
    if (wa != 0.0) s += wa * quantized_cosine(codes, cn, aq.codes, aqn);
    return s;
  };

  std::vector<KnnHit> hits;
  if (candidate_k >= snapshot.size()) {
    hits.resize(snapshot.size());
    for (std::size_t p = 0; p < snapshot.size(); ++p) {
      hits[p] = {snapshot.doc_id_at(p), 0.0};
    }
  } else {
    std::vector<double> score(snapshot.n_clusters());
    for (std::size_t c = 0; c < score.size(); ++c) {
      const auto cen = snapshot.centroid(c);
      score[c] = wu * float_cosine(query.user_emb, cen);
      if (wa != 0.0) score[c] += wa * float_cosine(*query.ad_emb, cen);
    }
    const auto clusters = rank_clusters(snapshot, score);
    for (std::size_t i = 0; i < n_probe; ++i) {
      for (std::uint32_t p : snapshot.posting_positions(clusters[i])) {
        hits.push_back({snapshot.doc_id_at(p), doc_score(p)});
      }
    }
    hits = top_k(std::move(hits), candidate_k);
  }

  std::vector<QuantizedCandidate> shortlist;
  shortlist.reserve(hits.size());
  for (const auto& h : hits) {
    shortlist.push_back(
        {h.doc_id, snapshot.vector_at(*snapshot.position_of(h.doc_id)), std::nullopt});
  }
  return mmr_select_quantized(query, shortlist);
}

std::string IndexSnapshot::serialize() const {
  detail::ByteWriter w;
  w.put_bytes(std::string_view(kSnapshotMagic, 4));
  w.put(kSnapshotFormat);
  w.put(static_cast<std::uint32_t>(dim_));
  w.put(static_cast<std::uint64_t>(ids_.size()));
  w.put(static_cast<std::uint32_t>(n_clusters()));
  w.put(seed_);
  w.put_span<float>(centroids_);
  w.put_span<std::uint64_t>(offsets_);
  w.put_span<std::uint64_t>(posting_ids_);
  for (std::size_t p = 0; p < ids_.size(); ++p) {
    w.put(norms_[p]);
    w.put_span<std::int8_t>(codes_at(p));
  }
  w.put(version_);
  w.put(kmeans_iters_);
  for (const auto& m : meta_) {
    w.put_string(m.user_id);
    w.put(m.source);
    w.put(m.epoch_start_day);
  }
  w.seal();
  return w.take();
}

IndexSnapshot IndexSnapshot::deserialize(std::string_view bytes) {
  detail::ByteReader r(detail::verify_crc_trailer(bytes));
  if (r.get_bytes(4) != std::string_view(kSnapshotMagic, 4)) {
    throw Error(ErrorCode::kCorruptFile, "bad snapshot magic");
  }
  if (r.get<std::uint32_t>() != kSnapshotFormat) {
    throw Error(ErrorCode::kCorruptFile, "unsupported snapshot format");
  }
  IndexSnapshot s;
  s.dim_ = r.get<std::uint32_t>();
  const auto n = r.get<std::uint64_t>();
  const auto k = r.get<std::uint32_t>();
  s.seed_ = r.get<std::uint64_t>();
  const std::size_t row = sizeof(float) + s.dim_;
  if (k == 0 || n == 0 || r.remaining() / row < n ||
      r.remaining() / sizeof(float) / std::max<std::size_t>(s.dim_, 1) < k) {
    throw Error(ErrorCode::kCorruptFile, "snapshot header out of range");
  }
  s.centroids_.resize(static_cast<std::size_t>(k) * s.dim_);
  r.get_span<float>(s.centroids_);
  s.offsets_.resize(k + 1);
  r.get_span<std::uint64_t>(s.offsets_);
  if (s.offsets_.front() != 0 || s.offsets_.back() != n ||
      !std::is_sorted(s.offsets_.begin(), s.offsets_.end())) {
    throw Error(ErrorCode::kCorruptFile, "bad posting offsets");
  }
  s.posting_ids_.resize(n);
  r.get_span<std::uint64_t>(s.posting_ids_);
  s.ids_ = s.posting_ids_;
  std::sort(s.ids_.begin(), s.ids_.end());
  if (std::adjacent_find(s.ids_.begin(), s.ids_.end()) != s.ids_.end()) {
    throw Error(ErrorCode::kCorruptFile, "doc listed in two postings");
  }
  s.norms_.resize(n);
  s.codes_.resize(n * s.dim_);
  for (std::size_t p = 0; p < n; ++p) {
    s.norms_[p] = r.get<float>();
    r.get_span<std::int8_t>(std::span<std::int8_t>(s.codes_).subspan(p * s.dim_, s.dim_));
  }
  s.version_ = r.get<std::uint64_t>();
  s.kmeans_iters_ = r.get<std::uint32_t>();
  s.meta_.resize(n);
  for (auto& m : s.meta_) {
    m.user_id = r.get_string();
    m.source = r.get<std::uint32_t>();
    m.epoch_start_day = r.get<std::int64_t>();
  }
  if (r.remaining() != 0) {
    throw Error(ErrorCode::kCorruptFile, "trailing bytes in snapshot");
  }
  s.finalize();
  return s;
}

void IndexSnapshot::save(const std::string& path) const {
  detail::write_file(path, serialize());
}

IndexSnapshot IndexSnapshot::load(const std::string& path) {
  return deserialize(detail::read_file(path));
}

bool SnapshotStore::publish(std::shared_ptr<const IndexSnapshot> snapshot) {
  if (!snapshot) return false;
  std::lock_guard lock(mu_);
  if (current_ && snapshot->version() <= current_->version()) return false;
  current_ = std::move(snapshot);
  return true;
}

std::shared_ptr<const IndexSnapshot> SnapshotStore::current() const {
  std::lock_guard lock(mu_);
  return current_;
}

}  // namespace memento
