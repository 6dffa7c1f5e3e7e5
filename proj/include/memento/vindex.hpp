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

// Single-node IVF index over NormInt8 documents.
//
// Snapshots are immutable once built or loaded. Serving code holds them
// through shared_ptr<const IndexSnapshot>; SnapshotStore swaps in a newer one
// atomically while older readers keep whatever they already hold.
//
// Snapshot file layout (all little-endian):
//   "MMTO" | u32 format | u32 dim | u64 n_docs | u32 n_clusters | u64 seed
//   centroids      f32[n_clusters * dim]
//   offsets        u64[n_clusters + 1]
//   postings       u64[n_docs]                 doc ids, per cluster
//   vectors        n_docs x (f32 norm, i8[dim]) ascending doc id
//   metadata       u64 snapshot version, u32 kmeans_iters, then per doc in
//                  ascending doc id: u32 len + user bytes, u32 source,
//                  i64 epoch_start_day
//   u32 CRC32 of all preceding bytes

#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "memento/chunker.hpp"
#include "memento/core.hpp"
#include "memento/mmr.hpp"

namespace memento {

struct DocMeta {
  std::string user_id;
  std::uint32_t source = 0;
  std::int64_t epoch_start_day = 0;

  friend bool operator==(const DocMeta&, const DocMeta&) = default;
};

struct BuildOptions {
  // 0 selects ceil(sqrt(n_docs)).
  std::size_t n_clusters = 0;
  std::uint32_t kmeans_iters = 10;
  std::uint64_t seed = 0;
  std::uint64_t version = 1;
  // Lloyd iterations run on at most this many points per centroid (seeded
  // subsample); every doc is assigned at the end.
  std::size_t max_points_per_centroid = 256;
};

struct KnnHit {
  DocId doc_id = 0;
  double similarity = 0.0;
  friend bool operator==(const KnnHit&, const KnnHit&) = default;
};
using KnnResult = std::vector<KnnHit>;

class IndexSnapshot {
 public:
  std::uint64_t version() const { return version_; }
  std::uint64_t seed() const { return seed_; }
  std::uint32_t kmeans_iters() const { return kmeans_iters_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  std::size_t n_clusters() const { return offsets_.size() - 1; }
  std::size_t default_probe() const;

  std::span<const float> centroid(std::size_t cluster) const;
  std::span<const DocId> posting(std::size_t cluster) const;
  // Same postings as doc positions.
  std::span<const std::uint32_t> posting_positions(std::size_t cluster) const;

  // Positions index docs in ascending doc id order.
  std::optional<std::size_t> position_of(DocId id) const;
  DocId doc_id_at(std::size_t pos) const { return ids_[pos]; }
  std::span<const std::int8_t> codes_at(std::size_t pos) const;
  float norm_at(std::size_t pos) const { return norms_[pos]; }
  double code_norm_at(std::size_t pos) const { return code_norms_[pos]; }
  const DocMeta& meta_at(std::size_t pos) const { return meta_[pos]; }
  QuantizedEmbedding vector_at(std::size_t pos) const;
  std::optional<QuantizedEmbedding> vector(DocId id) const;

  // CRC32 over the searchable content, fixed at construction.
  std::uint32_t checksum() const { return checksum_; }
  std::uint32_t compute_checksum() const;

  std::string serialize() const;
  static IndexSnapshot deserialize(std::string_view bytes);
  void save(const std::string& path) const;
  static IndexSnapshot load(const std::string& path);

  friend IndexSnapshot build(std::span<const MementoDoc> docs,
                             const BuildOptions& options);

 private:
  IndexSnapshot() = default;
  void finalize();

  std::uint64_t version_ = 0;
  std::uint64_t seed_ = 0;
  std::uint32_t kmeans_iters_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> centroids_;          // n_clusters x dim
  std::vector<std::uint64_t> offsets_;    // n_clusters + 1
  std::vector<DocId> posting_ids_;        // n_docs
  std::vector<std::uint32_t> posting_pos_;  // n_docs
  std::vector<DocId> ids_;                // ascending
  std::vector<float> norms_;
  std::vector<std::int8_t> codes_;        // n_docs x dim
  std::vector<double> code_norms_;
  std::vector<DocMeta> meta_;
  std::uint32_t checksum_ = 0;
};

// k-means (seeded k-means++ init, Lloyd iterations) over unit-normalized
// dequantized embeddings. Empty clusters are re-seeded from the point farthest
// from its centroid. n_clusters > |docs| is clamped with a warning on stderr.
IndexSnapshot build(std::span<const MementoDoc> docs,
                    const BuildOptions& options = {});

// Scans the n_probe centroids closest in cosine to the query. n_probe equal to
// n_clusters is an exact search.
KnnResult knn(const IndexSnapshot& snapshot, std::span<const float> query,
              std::size_t k, std::size_t n_probe);

// Exact top-k by quantized cosine over every stored vector.
KnnResult flat_scan(const IndexSnapshot& snapshot, std::span<const float> query,
                    std::size_t k);

// Two-stage retrieval: a shortlist of candidate_k docs ranked by
// alpha * user-side + beta * ad-side cosine (user-side only when both weights
// are 0), then MMR over the shortlist with the query's filter rate. When
// candidate_k >= size() every doc is shortlisted. n_probe = 0 uses
// default_probe().
MmrSelection retrieve_with_mmr(const IndexSnapshot& snapshot,
                               const RetrievalQuery& query,
                               std::size_t candidate_k, std::size_t n_probe = 0);

// Holds the latest published snapshot. current() only copies a shared_ptr
// under a short lock, so it never waits on a build in progress.
class SnapshotStore {
 public:
  // Returns false (and keeps the current snapshot) unless the new version is
  // strictly greater than the published one.
  bool publish(std::shared_ptr<const IndexSnapshot> snapshot);
  std::shared_ptr<const IndexSnapshot> current() const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const IndexSnapshot> current_;
};

}  // namespace memento
