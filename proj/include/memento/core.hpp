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

// Value types and similarity math shared by every module.
//
// NormInt8 layout: a vector v is stored as its L2 norm (f32) plus d signed
// codes of the unit direction, codes[i] = round(127 * v[i] / |v|) with
// round-half-away-from-zero, clamped to [-127, 127]. -128 is never produced.
// A zero vector is stored as norm 0 with all-zero codes.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "memento/error.hpp"

namespace memento {

using Embedding = std::vector<float>;
using DocId = std::uint64_t;

inline constexpr int kCodeScale = 127;

struct QuantizedEmbedding {
  float norm = 0.0f;
  std::vector<std::int8_t> codes;

  std::size_t dim() const { return codes.size(); }
  friend bool operator==(const QuantizedEmbedding&,
                         const QuantizedEmbedding&) = default;
};

struct SourceId {
  std::uint32_t id = 0;
  std::string name;
  std::uint32_t dimension = 0;

  friend bool operator==(const SourceId&, const SourceId&) = default;
};

enum class SimilarityKind { kUserUser, kUserAd };

// Throws kNonFinite if any component is NaN or Inf.
void check_finite(std::span<const float> v);

// Throws kDimensionMismatch when the sizes differ.
void check_same_dim(std::size_t a, std::size_t b, const char* what);

// Sum of squares accumulated in double, in index order.
double squared_norm(std::span<const float> v);
double l2_norm(std::span<const float> v);

// <a,b> / (|a||b|), clamped to [-1, 1]. Returns 0 when either norm is 0.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Same value as cosine_similarity(a, b) given the precomputed l2 norms of a
// and b; the arithmetic is ordered identically, so results are bit-equal.
double cosine_with_norms(std::span<const float> a, double norm_a,
                         std::span<const float> b, double norm_b);

QuantizedEmbedding quantize_norm_int8(std::span<const float> v);
Embedding dequantize(const QuantizedEmbedding& q);

// Integer dot product of two code vectors.
std::int64_t code_dot(std::span<const std::int8_t> a,
                      std::span<const std::int8_t> b);
double code_norm(std::span<const std::int8_t> codes);

// Cosine computed on the stored codes: one integer dot product and one
// scalar division. Matches cosine(dequantize(a), dequantize(b)) to 1e-6.
double quantized_cosine(const QuantizedEmbedding& a,
                        const QuantizedEmbedding& b);
double quantized_cosine(std::span<const std::int8_t> a, double code_norm_a,
                        std::span<const std::int8_t> b, double code_norm_b);

// Float-equivalent storage of one vector: d for f32, d/4 + 1 for NormInt8.
double float_equivalents_f32(std::size_t dim);
double float_equivalents_norm_int8(std::size_t dim);

}  // namespace memento
