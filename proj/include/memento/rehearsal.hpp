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

// Data rehearsal: row embeddings, loss-based hourly chunking, replay
// selection and the second training pass of a small ranking model.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "memento/core.hpp"
#include "memento/ember.hpp"
#include "memento/metrics.hpp"

namespace memento {

struct TrainingRow {
  std::string user_id;
  std::string ad_id;
  std::uint8_t label = 0;
  std::int64_t ts_hour = 0;
  Embedding feat_u;
  Embedding feat_a;
  Embedding user_emb;
  Embedding ad_emb;
  double loss = 0.0;
};

// JSONL: {"user", "ad", "label", "ts_hour", "feat_u", "feat_a"}.
TrainingRow parse_row_json(std::string_view line);
std::vector<TrainingRow> read_rows_jsonl(std::istream& in);
void write_rows_jsonl(std::ostream& out, std::span<const TrainingRow> rows);

// Two-tower row embedder. Each tower is W2 relu(W1 f + b1) + b2; the score
// of a pair is <user, ad> + bias.

struct Tower {
  ember::Matrix w1;
  ember::Vector b1;
  ember::Matrix w2;
  ember::Vector b2;

  ember::Vector forward(const ember::Vector& f) const;
};

struct TwoTowerConfig {
  std::size_t hidden = 32;
  std::size_t out_dim = 32;
  std::size_t epochs = 2;
  double lr = 0.02;
  std::uint64_t seed = 7;
};

struct TwoTower {
  Tower user;
  Tower ad;
  double bias = 0.0;
  bool trained = false;

  double score(const Embedding& feat_u, const Embedding& feat_a) const;
};

TwoTower make_two_tower(std::size_t user_feat_dim, std::size_t ad_feat_dim,
                        const TwoTowerConfig& config);

// Logistic loss on the dot-product score, SGD over rows in the given order.
TwoTower train_two_tower(std::span<const TrainingRow> rows,
                         const TwoTowerConfig& config);

// Fills user_emb / ad_emb. Throws kUntrainedTower.
void embed_rows(std::span<TrainingRow> rows, const TwoTower& towers);

struct RowChunk {
  std::int64_t hour = 0;
  std::vector<TrainingRow> rows;
  Embedding user_centroid;
  Embedding ad_centroid;
};

// Per hour keep k = min(retain_per_hour, n) rows. Each class first gets
// floor(k * n_class / n) of its highest-loss rows; leftover slots go to the
// highest-loss remaining rows of either class. Ties keep input order.
std::vector<RowChunk> build_chunks(std::span<const TrainingRow> rows,
                                   std::size_t retain_per_hour);

enum class ReplayPolicy { kNone, kRandom, kMmr };

struct ReplayOptions {
  ReplayPolicy policy = ReplayPolicy::kNone;
  double fraction = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
};

struct ReplaySelection {
  std::vector<TrainingRow> rows;
  std::vector<std::int64_t> chunk_hours;  // greedy order, Mmr only
  std::size_t budget = 0;
};

std::size_t replay_budget(double fraction, std::size_t recent_rows);

// Mmr emits whole chunks in greedy order until the budget is reached; Random
// samples exactly `budget` rows from the historical chunks. Output is sorted
// by ts_hour. Throws kBudgetExceedsCorpus.
ReplaySelection select_replay(std::span<const RowChunk> recent,
                              std::span<const RowChunk> historical,
                              const ReplayOptions& options);

// Toy ranker: sparse user/ad tables, the raw ad features and optionally a
// history context c. Pairwise dot products of those vectors feed a small MLP.
//
//   s = pairwise dots of {u, a, x_ad [, c]}
//   logit = b + w_lin . s + w2 . relu(W1 s + b1)
//
// Ember modes modulate the user table vector by c before the dots.

enum class EmberMode { kNone, kAffine, kQuadratic, kBoth };

struct RankerConfig {
  std::size_t dim = 32;
  std::size_t hidden = 8;
  double init_std = 0.05;
  double lr = 0.05;
  bool use_context = false;
  EmberMode ember = EmberMode::kNone;
  std::size_t ember_hidden = 32;
  std::size_t ember_blocks = 2;
  std::size_t qnn_heads = 2;
  double ember_lr = 0.005;
  std::uint64_t seed = 11;
};

class ToyRanker {
 public:
  explicit ToyRanker(const RankerConfig& config);

  const RankerConfig& config() const { return config_; }

  // `context` is required iff config().use_context.
  double predict(const TrainingRow& row, const ember::Vector* context = nullptr) const;

  // One SGD step; returns the log-loss of the prediction made before it.
  double train_step(const TrainingRow& row, const ember::Vector* context,
                    double sparse_lr_multiplier = 1.0);

  // Re-draws every sparse entry (and any entry created later) from a fresh
  // seeded stream.
  void reset_sparse();
  void shrink_sparse(double factor);

  using Table = std::unordered_map<std::string, ember::Vector>;
  const Table& user_table() const { return users_; }
  const Table& ad_table() const { return ads_; }
  std::uint64_t sparse_generation() const { return generation_; }

 private:
  struct Pass;
  ember::Vector init_entry(char tag, std::string_view key) const;
  Pass run(const ember::Vector& u, const ember::Vector& a, const ember::Vector& x,
           const ember::Vector* c) const;

  RankerConfig config_;
  std::uint64_t generation_ = 0;
  Table users_;
  Table ads_;
  ember::Vector w_lin_;
  ember::Matrix w1_;
  ember::Vector b1_;
  ember::Vector w2_;
  double bias_ = 0.0;
  std::optional<ember::AffineModulator> affine_;
  std::optional<ember::QnnLayer> qnn_;
};

// Rows must be in non-decreasing ts_hour order (kInvalidArgument otherwise).
// `contexts` is empty or parallel to `rows`. Writes the pre-update loss of
// each row into `losses` when given; returns their mean.
double train_pass(ToyRanker& model, std::span<const TrainingRow> rows,
                  std::span<const ember::Vector> contexts = {},
                  double sparse_lr_multiplier = 1.0,
                  std::vector<double>* losses = nullptr);

PredictionBatch predict_batch(const ToyRanker& model, std::span<const TrainingRow> rows,
                              std::span<const ember::Vector> contexts = {});

enum class SecondPassStrategy { kReset, kShrink };

struct SecondPassPlan {
  SecondPassStrategy strategy = SecondPassStrategy::kReset;
  double shrink_factor = 0.1;
  double lr_multiplier = 2.0;
  double replay_fraction = 0.0;
  ReplayPolicy replay_policy = ReplayPolicy::kNone;
};

// Throws kInvalidPlan.
void validate_plan(const SecondPassPlan& plan);

struct SecondPassResult {
  std::size_t rows_trained = 0;
  std::size_t replay_rows = 0;
  double mean_train_loss = 0.0;
};

// Applies the strategy, then one pass over recent and replay rows merged by
// ts_hour (recent first on equal hours). Sparse steps use
// lr * plan.lr_multiplier; dense steps keep lr.
SecondPassResult second_pass_train(ToyRanker& model,
                                   std::span<const TrainingRow> recent_rows,
                                   std::span<const TrainingRow> replay_rows,
                                   const SecondPassPlan& plan);

struct ForgettingReport {
  double ne_old = 0.0;
  double ne_recent = 0.0;
};

// Throws kEmptyHoldout.
ForgettingReport eval_forgetting(const ToyRanker& model,
                                 std::span<const TrainingRow> holdout_old,
                                 std::span<const TrainingRow> holdout_recent);

}  // namespace memento
