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

// Temporal chunking of daily per-source embeddings into quantized documents.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memento/core.hpp"

namespace memento {

struct DailyEmbedding {
  std::string user_id;
  SourceId source;
  std::int64_t day = 0;
  Embedding embedding;
};

// One retrievable unit of history: a (user, source, epoch window) aggregate.
struct MementoDoc {
  DocId doc_id = 0;
  std::string user_id;
  SourceId source;
  std::int64_t epoch_start_day = 0;
  std::int32_t epoch_len_days = 1;
  QuantizedEmbedding embedding;
  std::int32_t day_count = 0;

  std::int64_t epoch_end_day() const { return epoch_start_day + epoch_len_days; }
  friend bool operator==(const MementoDoc&, const MementoDoc&) = default;
};

enum class Aggregation { kMean };

// Stable FNV-1a hash of (user_id, source id, epoch_start_day).
DocId make_doc_id(std::string_view user_id, std::uint32_t source_id,
                  std::int64_t epoch_start_day);

// Groups dailies into windows [k*L, (k+1)*L) aligned to day 0 and emits one
// doc per non-empty (user, source, window), sorted by
// (user_id, source id, epoch_start_day). Missing days are left out of the
// mean. The output is independent of input order.
std::vector<MementoDoc> chunk(std::span<const DailyEmbedding> dailies,
                              std::int32_t epoch_len_days,
                              Aggregation aggregation = Aggregation::kMean);

struct SourceSimilarity {
  SourceId source;
  double adjacent_day_mean = 0.0;
  std::size_t adjacent_pairs = 0;
  // Mean cosine over all same-user day pairs inside one epoch window; empty
  // when no window holds two days.
  std::optional<double> within_epoch_mean;
  std::size_t within_epoch_pairs = 0;
};

// Per-source cosine statistics used to pick an epoch length. Sorted by
// source id. Throws kInsufficientData if a source has fewer than two days or
// no adjacent-day pair.
std::vector<SourceSimilarity> chunk_similarity_report(
    std::span<const DailyEmbedding> dailies, std::int32_t epoch_len_days);

// JSONL: {"user": str, "source": int, "day": int, "emb": [floats]}.
DailyEmbedding parse_daily_json(std::string_view line);
std::vector<DailyEmbedding> read_dailies_jsonl(std::istream& in);
void write_dailies_jsonl(std::ostream& out,
                         std::span<const DailyEmbedding> dailies);

// Binary doc block: "MMTD", u32 version, u64 count, records, CRC32 trailer.
std::string encode_doc_block(std::span<const MementoDoc> docs);
std::vector<MementoDoc> decode_doc_block(std::string_view bytes);

}  // namespace memento
