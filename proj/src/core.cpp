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

#include "memento/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace memento {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInvalidWeights: return "InvalidWeights";
    case ErrorCode::kMissingAdEmbedding: return "MissingAdEmbedding";
    case ErrorCode::kEmptyCandidates: return "EmptyCandidates";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kDuplicateKey: return "DuplicateKey";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kDegenerateLabels: return "DegenerateLabels";
    case ErrorCode::kUntrainedTower: return "UntrainedTower";
    case ErrorCode::kBudgetExceedsCorpus: return "BudgetExceedsCorpus";
    case ErrorCode::kInvalidPlan: return "InvalidPlan";
    case ErrorCode::kEmptyHoldout: return "EmptyHoldout";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

void check_finite(std::span<const float> v) {
  for (float x : v) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::kNonFinite, "embedding has a NaN/Inf component");
    }
  }
}

void check_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": " + std::to_string(a) + " vs " +
                    std::to_string(b));
  }
}

double squared_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return s;
}

double l2_norm(std::span<const float> v) { return std::sqrt(squared_norm(v)); }

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i]) * b[i];
  }
  return s;
}

double finish_cosine(double dot_ab, double norm_a, double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  return std::clamp(dot_ab / (norm_a * norm_b), -1.0, 1.0);
}

}  // namespace

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  check_same_dim(a.size(), b.size(), "cosine_similarity");
  check_finite(a);
  check_finite(b);
  return finish_cosine(dot(a, b), l2_norm(a), l2_norm(b));
}

double cosine_with_norms(std::span<const float> a, double norm_a,
                         std::span<const float> b, double norm_b) {
  return finish_cosine(dot(a, b), norm_a, norm_b);
}

QuantizedEmbedding quantize_norm_int8(std::span<const float> v) {
  check_finite(v);
  QuantizedEmbedding q;
  q.codes.assign(v.size(), 0);
  const double norm = l2_norm(v);
  q.norm = static_cast<float>(norm);
  if (norm == 0.0) return q;
  for (std::size_t i = 0; i < v.size(); ++i) {
    // std::round is half-away-from-zero.
    const double code = std::round(kCodeScale * (v[i] / norm));
    q.codes[i] = static_cast<std::int8_t>(
        std::clamp(code, -double{kCodeScale}, double{kCodeScale}));
  }
  return q;
}

Embedding dequantize(const QuantizedEmbedding& q) {
  Embedding out(q.codes.size());
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(q.norm) * q.codes[i] /
                                kCodeScale);
  }
  return out;
}

std::int64_t code_dot(std::span<const std::int8_t> a,
                      std::span<const std::int8_t> b) {
  // 32-bit partial sums are exact for d <= 2^31 / 127^2 (~133k).
  std::int32_t s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<std::int32_t>(a[i]) * static_cast<std::int32_t>(b[i]);
  }
  return s;
}

double code_norm(std::span<const std::int8_t> codes) {
  return std::sqrt(static_cast<double>(code_dot(codes, codes)));
}

double quantized_cosine(std::span<const std::int8_t> a, double code_norm_a,
                        std::span<const std::int8_t> b, double code_norm_b) {
  return finish_cosine(static_cast<double>(code_dot(a, b)), code_norm_a,
                       code_norm_b);
}

double quantized_cosine(const QuantizedEmbedding& a,
                        const QuantizedEmbedding& b) {
  check_same_dim(a.dim(), b.dim(), "quantized_cosine");
  if (a.norm == 0.0f || b.norm == 0.0f) return 0.0;
  return quantized_cosine(a.codes, code_norm(a.codes), b.codes,
                          code_norm(b.codes));
}

double float_equivalents_f32(std::size_t dim) { return static_cast<double>(dim); }

double float_equivalents_norm_int8(std::size_t dim) {
  return static_cast<double>(dim) / 4.0 + 1.0;
}

}  // namespace memento
