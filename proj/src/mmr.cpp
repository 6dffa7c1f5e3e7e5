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

#include "memento/mmr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace memento {
namespace {

constexpr double kWeightTolerance = 1e-12;

template <typename Candidate>
void check_unique_ids(std::span<const Candidate> candidates) {
  std::vector<DocId> ids;
  ids.reserve(candidates.size());
  for (const auto& c : candidates) ids.push_back(c.doc_id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw Error(ErrorCode::kDuplicateKey, "duplicate candidate doc_id");
  }
}

template <typename Candidate, typename Vec>
void check_candidates(const RetrievalQuery& query,
                      std::span<const Candidate> candidates, const Vec& user_q,
                      const Vec* ad_q) {
  if (candidates.empty()) {
    throw Error(ErrorCode::kEmptyCandidates, "no candidates");
  }
  for (const auto& c : candidates) {
    check_same_dim(c.user_side.size(), user_q.size(), "candidate user side");
    if (ad_q != nullptr) {
      const auto& side = c.ad_side ? *c.ad_side : c.user_side;
      check_same_dim(side.size(), ad_q->size(), "candidate ad side");
    }
  }
  check_unique_ids(candidates);
  (void)query;
}

bool better(double score, DocId id, double best_score, DocId best_id) {
  return score > best_score || (score == best_score && id < best_id);
}

// Shared greedy loop. `pair(i, j)` is the user-side similarity between
// candidates i and j; `relevance[i]` is the precomputed query term.
template <typename PairSim>
MmrSelection greedy(std::span<const DocId> ids, std::span<const double> relevance,
                    double diversity, std::size_t k, PairSim&& pair,
                    std::size_t evaluations) {
  const std::size_t n = ids.size();
  std::vector<double> max_sim(n, -std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  MmrSelection out;
  out.selected.reserve(k);
  out.scores.reserve(k);
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t best = n;
    double best_score = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double redundancy = (step == 0 || diversity == 0.0) ? 0.0 : max_sim[i];
      const double score = relevance[i] - diversity * redundancy;
      if (best == n || better(score, ids[i], best_score, ids[best])) {
        best = i;
        best_score = score;
      }
    }
    taken[best] = 1;
    out.selected.push_back(ids[best]);
    out.scores.push_back(best_score);
    if (diversity == 0.0 || step + 1 == k) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      max_sim[i] = std::max(max_sim[i], pair(i, best));
      ++evaluations;
    }
  }
  out.similarity_evaluations = evaluations;
  return out;
}

}  // namespace

double RetrievalQuery::diversity_weight() const {
  const double w = 1.0 - alpha - beta;
  return std::abs(w) <= kWeightTolerance ? 0.0 : w;
}

void validate_query(const RetrievalQuery& query) {
  if (!(query.alpha >= 0.0) || !(query.beta >= 0.0) ||
      query.alpha + query.beta > 1.0 + kWeightTolerance) {
    throw Error(ErrorCode::kInvalidWeights,
                "need alpha >= 0, beta >= 0, alpha + beta <= 1");
  }
  if (!(query.filter_rate > 0.0 && query.filter_rate <= 1.0)) {
    throw Error(ErrorCode::kInvalidWeights, "filter_rate must be in (0, 1]");
  }
  if (query.beta > 0.0 && !query.ad_emb) {
    throw Error(ErrorCode::kMissingAdEmbedding, "beta > 0 needs ad_emb");
  }
  check_finite(query.user_emb);
  if (query.ad_emb) check_finite(*query.ad_emb);
}

std::size_t selection_size(double filter_rate, std::size_t n) {
  // The epsilon keeps products like 0.3 * 10 = 3.0000000000000004 at 3.
  const double raw = std::ceil(filter_rate * static_cast<double>(n) - 1e-9);
  const auto k = static_cast<std::size_t>(std::max(raw, 1.0));
  return std::min(k, n);
}

MmrSelection mmr_select(const RetrievalQuery& query,
                        std::span<const MmrCandidate> candidates) {
  validate_query(query);
  const Embedding* ad_q = query.ad_emb ? &*query.ad_emb : nullptr;
  check_candidates(query, candidates, query.user_emb, ad_q);
  for (const auto& c : candidates) {
    check_finite(c.user_side);
    if (c.ad_side) check_finite(*c.ad_side);
  }

  const std::size_t n = candidates.size();
  const std::size_t k = selection_size(query.filter_rate, n);
  const double diversity = query.diversity_weight();

  std::vector<DocId> ids(n);
  std::vector<double> user_norm(n);
  std::vector<double> relevance(n);
  const double uq_norm = l2_norm(query.user_emb);
  const double aq_norm = ad_q ? l2_norm(*ad_q) : 0.0;
  std::size_t evals = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = candidates[i];
    ids[i] = c.doc_id;
    user_norm[i] = l2_norm(c.user_side);
    double su = 0.0;
    double sa = 0.0;
    if (query.alpha != 0.0) {
      su = cosine_with_norms(c.user_side, user_norm[i], query.user_emb, uq_norm);
      ++evals;
    }
    if (query.beta != 0.0) {
      const auto& side = c.ad_side ? *c.ad_side : c.user_side;
      const double side_norm = c.ad_side ? l2_norm(side) : user_norm[i];
      sa = cosine_with_norms(side, side_norm, *ad_q, aq_norm);
      ++evals;
    }
    relevance[i] = query.alpha * su + query.beta * sa;
  }
  return greedy(
      ids, relevance, diversity, k,
      [&](std::size_t i, std::size_t j) {
        return cosine_with_norms(candidates[i].user_side, user_norm[i],
                                 candidates[j].user_side, user_norm[j]);
      },
      evals);
}

MmrSelection mmr_select_quantized(
    const RetrievalQuery& query, std::span<const QuantizedCandidate> candidates) {
  validate_query(query);
  const auto uq = quantize_norm_int8(query.user_emb);
  std::optional<QuantizedEmbedding> aq;
  if (query.ad_emb) aq = quantize_norm_int8(*query.ad_emb);
  if (candidates.empty()) {
    throw Error(ErrorCode::kEmptyCandidates, "no candidates");
  }
  for (const auto& c : candidates) {
    check_same_dim(c.user_side.dim(), uq.dim(), "candidate user side");
    if (aq) {
      check_same_dim((c.ad_side ? *c.ad_side : c.user_side).dim(), aq->dim(),
                     "candidate ad side");
    }
  }
  check_unique_ids(candidates);

  const std::size_t n = candidates.size();
  const std::size_t k = selection_size(query.filter_rate, n);
  const double diversity = query.diversity_weight();

  // A zero-norm vector has all-zero codes, so its code norm is 0 and every
  // cosine against it is 0, matching the exact-space convention.
  const double uq_norm = code_norm(uq.codes);
  const double aq_norm = aq ? code_norm(aq->codes) : 0.0;
  std::vector<DocId> ids(n);
  std::vector<double> user_norm(n);
  std::vector<double> relevance(n);
  std::size_t evals = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = candidates[i];
    ids[i] = c.doc_id;
    user_norm[i] = code_norm(c.user_side.codes);
    double su = 0.0;
    double sa = 0.0;
    if (query.alpha != 0.0) {
      su = quantized_cosine(c.user_side.codes, user_norm[i], uq.codes, uq_norm);
      ++evals;
    }
    if (query.beta != 0.0) {
      const auto& side = c.ad_side ? *c.ad_side : c.user_side;
      const double side_norm = c.ad_side ? code_norm(side.codes) : user_norm[i];
      sa = quantized_cosine(side.codes, side_norm, aq->codes, aq_norm);
      ++evals;
    }
    relevance[i] = query.alpha * su + query.beta * sa;
  }
  return greedy(
      ids, relevance, diversity, k,
      [&](std::size_t i, std::size_t j) {
        return quantized_cosine(candidates[i].user_side.codes, user_norm[i],
                                candidates[j].user_side.codes, user_norm[j]);
      },
      evals);
}

MmrSelection mmr_select_quantized(const RetrievalQuery& query,
                                  std::span<const MementoDoc> candidates) {
  std::vector<QuantizedCandidate> qc;
  qc.reserve(candidates.size());
  for (const auto& d : candidates) {
    qc.push_back({d.doc_id, d.embedding, std::nullopt});
  }
  return mmr_select_quantized(query, qc);
}

MmrSelection mmr_oracle(const RetrievalQuery& query,
                        std::span<const MmrCandidate> candidates) {
  validate_query(query);
  const Embedding* ad_q = query.ad_emb ? &*query.ad_emb : nullptr;
  check_candidates(query, candidates, query.user_emb, ad_q);
  check_finite(query.user_emb);
  if (ad_q != nullptr) check_finite(*ad_q);
  for (const auto& c : candidates) {
    check_finite(c.user_side);
    if (c.ad_side) check_finite(*c.ad_side);
  }
  const std::size_t n = candidates.size();
  const std::size_t k = selection_size(query.filter_rate, n);
  const double diversity = query.diversity_weight();

  // same arithmetic as cosine_similarity, minus the per-call checks
  std::vector<double> un(n), an(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = candidates[i];
    un[i] = l2_norm(c.user_side);
    an[i] = c.ad_side ? l2_norm(*c.ad_side) : un[i];
  }
  const double qn = l2_norm(query.user_emb);
  const double adn = ad_q ? l2_norm(*ad_q) : 0.0;

  MmrSelection out;
  std::vector<std::size_t> chosen;
  std::vector<char> taken(n, 0);
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t best = n;
    double best_score = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const auto& c = candidates[i];
      const double su = cosine_with_norms(c.user_side, un[i], query.user_emb, qn);
      double sa = 0.0;
      if (ad_q != nullptr) {
        sa = cosine_with_norms(c.ad_side ? *c.ad_side : c.user_side, an[i], *ad_q, adn);
      }
      out.similarity_evaluations += ad_q ? 2 : 1;
      double redundancy = 0.0;
      if (!chosen.empty()) {
        redundancy = -std::numeric_limits<double>::infinity();
        for (std::size_t j : chosen) {
          redundancy = std::max(
              redundancy,
              cosine_with_norms(c.user_side, un[i], candidates[j].user_side, un[j]));
          ++out.similarity_evaluations;
        }
      }
      const double score =
          query.alpha * su + query.beta * sa - diversity * redundancy;
      if (best == n || score > best_score ||
          (score == best_score && c.doc_id < candidates[best].doc_id)) {
        best = i;
        best_score = score;
      }
    }
    taken[best] = 1;
    chosen.push_back(best);
    out.selected.push_back(candidates[best].doc_id);
    out.scores.push_back(best_score);
  }
  return out;
}

}  // namespace memento
