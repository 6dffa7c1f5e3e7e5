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

// Normalized Entropy: mean log-loss divided by the entropy of the empirical
// positive rate. Natural log; probabilities are clamped to
// [kProbabilityClamp, 1 - kProbabilityClamp] before taking logs.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "memento/error.hpp"

namespace memento {

inline constexpr double kProbabilityClamp = 1e-7;

struct PredictionBatch {
  std::vector<double> probabilities;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  void add(double p, bool label) {
    probabilities.push_back(p);
    labels.push_back(label ? 1 : 0);
  }
};

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x);
  void merge(const CompensatedSum& other);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double clamp_probability(double p);

// Per-example log-loss of one prediction (clamped).
double example_log_loss(double p, bool label);

// Mean log-loss. Throws kEmptyBatch.
double log_loss(const PredictionBatch& batch);

// Throws kEmptyBatch or kDegenerateLabels (all labels equal).
double normalized_entropy(const PredictionBatch& batch);

// Binary entropy of a rate, natural log.
double binary_entropy(double p);

// 100 * (candidate - baseline) / baseline; negative means improvement.
double relative_ne(double candidate_ne, double baseline_ne);

// Area under the ROC curve with tied scores counted as one half.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

}  // namespace memento
