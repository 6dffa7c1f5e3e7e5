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

// Greedy Maximal Marginal Relevance with separate user-side and ad-side
// relevance terms.
//
// Each step picks, among the not-yet-selected candidates,
//
//   argmax  alpha * cos(D.user, Q.user) + beta * cos(D.ad, Q.ad)
//           - (1 - alpha - beta) * max_{S in selected} cos(D.user, S.user)
//
// with the redundancy term taken as 0 while nothing is selected, and ties
// going to the smallest doc id. k = ceil(filter_rate * |candidates|) picks
// are made.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "memento/chunker.hpp"
#include "memento/core.hpp"

namespace memento {

struct RetrievalQuery {
  Embedding user_emb;
  std::optional<Embedding> ad_emb;
  double alpha = 0.0;
  double beta = 0.0;
  double filter_rate = 1.0;

  double diversity_weight() const;
};

// A candidate in exact (float) space. `ad_side` is the vector compared with
// the query's ad embedding; when absent the user-side vector is used.
struct MmrCandidate {
  DocId doc_id = 0;
  Embedding user_side;
  std::optional<Embedding> ad_side;
};

// Candidate over stored codes; same convention for the optional ad side.
struct QuantizedCandidate {
  DocId doc_id = 0;
  QuantizedEmbedding user_side;
  std::optional<QuantizedEmbedding> ad_side;
};

struct MmrSelection {
  std::vector<DocId> selected;
  std::vector<double> scores;
  // Number of cosine evaluations performed (instrumentation).
  std::size_t similarity_evaluations = 0;
};

// Validates weights and filter rate. Throws kInvalidWeights or
// kMissingAdEmbedding.
void validate_query(const RetrievalQuery& query);

// ceil(filter_rate * n), at least 1 and at most n.
std::size_t selection_size(double filter_rate, std::size_t n);

// Incremental implementation: O(n) relevance evaluations up front and one
// similarity per remaining candidate per step.
MmrSelection mmr_select(const RetrievalQuery& query,
                        std::span<const MmrCandidate> candidates);

// Same contract computed on NormInt8 codes. The query embeddings are
// quantized with quantize_norm_int8 first.
MmrSelection mmr_select_quantized(const RetrievalQuery& query,
                                  std::span<const QuantizedCandidate> candidates);
MmrSelection mmr_select_quantized(const RetrievalQuery& query,
                                  std::span<const MementoDoc> candidates);

// Reference implementation: re-evaluates every similarity at every step with
// the cosine_similarity arithmetic and no cached similarities. Intended for tests, n <= 1e4.
MmrSelection mmr_oracle(const RetrievalQuery& query,
                        std::span<const MmrCandidate> candidates);

}  // namespace memento
