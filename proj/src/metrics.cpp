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

#include "memento/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace memento {

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    comp_ += (sum_ - t) + x;
  } else {
    comp_ += (x - t) + sum_;
  }
  sum_ = t;
}

void CompensatedSum::merge(const CompensatedSum& other) {
  add(other.sum_);
  add(other.comp_);
}

double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

double example_log_loss(double p, bool label) {
  const double q = clamp_probability(p);
  return label ? -std::log(q) : -std::log1p(-q);
}

double log_loss(const PredictionBatch& batch) {
  if (batch.size() == 0) throw Error(ErrorCode::kEmptyBatch, "empty batch");
  if (batch.probabilities.size() != batch.labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "probabilities vs labels");
  }
  CompensatedSum sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    sum.add(example_log_loss(batch.probabilities[i], batch.labels[i] != 0));
  }
  return sum.value() / static_cast<double>(batch.size());
}

double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -(p * std::log(p) + (1.0 - p) * std::log1p(-p));
}

double normalized_entropy(const PredictionBatch& batch) {
  if (batch.size() == 0) throw Error(ErrorCode::kEmptyBatch, "empty batch");
  std::size_t positives = 0;
  for (auto y : batch.labels) positives += y != 0;
  if (positives == 0 || positives == batch.size()) {
    throw Error(ErrorCode::kDegenerateLabels, "labels are all equal");
  }
  const double rate =
      static_cast<double>(positives) / static_cast<double>(batch.size());
  return log_loss(batch) / binary_entropy(rate);
}

double relative_ne(double candidate_ne, double baseline_ne) {
  if (!(baseline_ne > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "baseline NE must be positive");
  }
  return 100.0 * (candidate_ne - baseline_ne) / baseline_ne;
}

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "scores vs labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with average ranks for ties.
  double rank_sum = 0.0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]]) {
        rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorCode::kDegenerateLabels, "AUC needs both classes");
  }
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

}  // namespace memento
