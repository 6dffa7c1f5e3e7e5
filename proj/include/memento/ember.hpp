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

// Context-conditioned feature modulation layers.
//
// Affine: a shared trunk maps the retrieved-history context c to a hidden
// state; each modulated feature has its own output head producing per-dimension
// scale and shift, applied as  e' = gamma(c) * e + shift(c).
//
//   x0      = W_in c + b_in
//   x_{l+1} = x_l + silu(W_l rmsnorm(x_l; g_l) + b_l)
//   [gamma; shift] = W_out x_L + b_out
//
// W_out starts at zero and b_out at (1, 0), so a fresh head is exactly the
// identity on e.
//
// Quadratic: per head h with slice X^h of width K/H,
//   out^h = X^h * relu(W^h X) + X^h
// where W^h is (K/H) x K and reads the full input.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "memento/core.hpp"

namespace memento::ember {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kRmsEpsilon = 1e-6;

struct EmberContext {
  Embedding c;
};

// Mean of the dequantized documents; zero vector of `dim` when empty.
EmberContext pool_context(std::span<const QuantizedEmbedding> docs,
                          std::size_t dim);

struct ResidualBlock {
  Vector norm_gain;
  Matrix weight;
  Vector bias;
};

struct AffineTrunk {
  Matrix w_in;
  Vector b_in;
  std::vector<ResidualBlock> blocks;

  std::size_t context_dim() const { return static_cast<std::size_t>(w_in.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w_in.rows()); }
};

// Output projection for one modulated feature of width d: rows [0, d) give
// gamma, rows [d, 2d) give the shift.
struct AffineHead {
  Matrix w_out;
  Vector b_out;

  std::size_t feature_dim() const { return static_cast<std::size_t>(b_out.size() / 2); }
};

struct AffineModulator {
  AffineTrunk trunk;
  std::vector<AffineHead> heads;
};

struct AffineConfig {
  std::size_t context_dim = 32;
  std::vector<std::size_t> feature_dims = {32};
  std::size_t hidden = 64;
  std::size_t blocks = 2;
  std::uint64_t seed = 0;
};

// Trunk weights ~ N(0, 1/fan_in), gains 1, biases 0, heads at identity.
AffineModulator make_affine(const AffineConfig& config);

// Same shapes, all zero. Used as a gradient accumulator.
AffineModulator zeros_like(const AffineModulator& m);

struct Modulation {
  Vector gamma;
  Vector shift;
};

Modulation affine_parameters(const AffineModulator& m, std::size_t feature,
                             const Vector& c);

Vector affine_forward(const AffineModulator& m, std::size_t feature,
                      const Vector& c, const Vector& e);
Embedding affine_forward(const AffineModulator& m, std::size_t feature,
                         const EmberContext& c, const Embedding& e);

struct AffineGrads {
  AffineModulator params;  // only the trunk and head `feature` are non-zero
  Vector context;
  Vector input;
};

// Gradients of <upstream, affine_forward(m, feature, c, e)>.
AffineGrads affine_backward(const AffineModulator& m, std::size_t feature,
                            const Vector& c, const Vector& e,
                            const Vector& upstream);

// In-place p += scale * g over every parameter.
void axpy(AffineModulator& p, double scale, const AffineModulator& g);

struct QnnLayer {
  std::size_t heads = 1;
  // K x K; rows [h*K/H, (h+1)*K/H) hold W^h.
  Matrix gate;

  std::size_t width() const { return static_cast<std::size_t>(gate.cols()); }
  std::size_t head_width() const { return width() / heads; }
};

// Throws kInvalidArgument unless K % H == 0.
QnnLayer make_qnn(std::size_t width, std::size_t heads);
QnnLayer make_qnn_random(std::size_t width, std::size_t heads, double scale,
                         std::uint64_t seed);

// `multiplies`, when given, is incremented by the gate multiply count.
Vector qnn_forward(const QnnLayer& layer, const Vector& x,
                   std::size_t* multiplies = nullptr);

struct QnnGrads {
  Matrix gate;
  Vector input;
};

// ReLU derivative is taken as 0 at exactly 0.
QnnGrads qnn_backward(const QnnLayer& layer, const Vector& x,
                      const Vector& upstream);

struct HeadCost {
  // Multiplies in the gate of this layer: H * (K/H) * K = K^2.
  std::size_t gate_multiplies = 0;
  // Multiplies if each of the H heads produced a full-width K x K gate.
  std::size_t full_width_multiplies = 0;
};

HeadCost head_cost(const QnnLayer& layer);

// Flat f32 checkpoint with a JSON manifest of names, shapes and byte offsets.
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

std::vector<NamedTensor> to_tensors(const AffineModulator& m);
AffineModulator affine_from_tensors(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> to_tensors(const QnnLayer& layer, const std::string& prefix);
QnnLayer qnn_from_tensors(std::span<const NamedTensor> tensors,
                          const std::string& prefix);

void save_checkpoint(const std::string& data_path, const std::string& manifest_path,
                     std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& data_path,
                                         const std::string& manifest_path);

Vector to_vector(std::span<const float> v);
Embedding to_embedding(const Vector& v);

}  // namespace memento::ember
