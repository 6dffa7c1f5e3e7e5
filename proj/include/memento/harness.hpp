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

// Synthetic non-stationary corpus and the experiment runners.
//
// Interests live in topic space. Every user has a home topic m_u and AR(1)
// topic weights
//   w_u(t) = rho * w_u(t-1) + sqrt(1 - rho^2) * drift_scale * xi_t
// with xi_t standard normal per topic. A "seasonal" user also prefers one
// seasonal topic s_u while the season is on:
//   i_u(t) = T_{m_u} + sum_k w_uk(t) T_k + strength * [in_season(t)] * T_{s_u}
// Daily source embeddings are i_u(t) plus per-source noise. A row shows ad j
// to user u on day t with click probability
//   p = sigmoid(label_bias + label_scale * <i_u(t), a_j>).

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "memento/chunker.hpp"
#include "memento/rehearsal.hpp"

namespace memento {

struct GeneratorConfig {
  std::uint32_t n_users = 2000;
  std::uint32_t n_sources = 4;
  std::uint32_t n_days = 365;
  std::uint32_t dim = 32;
  double interest_drift = 0.99;
  double drift_scale = 0.7;
  std::uint32_t seasonal_period_days = 330;
  std::uint32_t season_length_days = 120;
  std::uint32_t season_phase_days = 0;
  double seasonal_strength = 1.0;
  double cohort_mix = 0.5;
  double noise_scale = 0.5;
  std::uint32_t n_topics = 16;
  std::uint32_t n_seasonal_topics = 4;
  std::uint32_t n_ads = 200;
  double ad_jitter = 0.3;
  double seasonal_ad_boost = 4.0;
  double rows_per_user_day = 0.7;
  double label_bias = -2.0;
  double label_scale = 3.0;
  double feature_noise = 0.3;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 1;
};

// Throws kInvalidConfig.
void validate(const GeneratorConfig& cfg);

bool in_season(const GeneratorConfig& cfg, std::int64_t day);

// Static parts of the world: topics, ads and user cohorts.
struct World {
  GeneratorConfig cfg;
  std::vector<Embedding> topics;
  std::vector<Embedding> ads;
  std::vector<std::uint32_t> ad_topic;
  std::vector<std::uint32_t> user_topic;
  std::vector<std::optional<std::uint32_t>> user_season_topic;
};

World make_world(const GeneratorConfig& cfg);

std::string user_name(std::uint32_t u);
std::string ad_name(std::uint32_t a);

// Interest of user u for every day, row-major n_days x dim.
std::vector<double> user_interest(const World& world, std::uint32_t u);

// Daily embeddings of one user, ordered by (source, day).
std::vector<DailyEmbedding> user_dailies(const World& world, std::uint32_t u,
                                         const std::vector<double>& interest);

struct LabeledRows {
  std::vector<TrainingRow> rows;
  std::vector<double> p_true;
  std::vector<std::uint32_t> user;  // user index per row
};

struct Corpus {
  World world;
  std::vector<DailyEmbedding> dailies;  // empty unless requested
  LabeledRows train;
  LabeledRows holdout_old;    // days [0, n_days / 3)
  LabeledRows holdout_recent; // days [0.9 n_days, n_days)
};

Corpus generate_corpus(const GeneratorConfig& cfg, bool with_dailies = true);

// Expected NE of the true probabilities: sum H(p_i) / (N * H(mean p)).
double bayes_ne(const std::vector<double>& p_true);
// NE of the true probabilities against the sampled labels.
double oracle_ne(const LabeledRows& rows);

// ---------------------------------------------------------------------------
// Experiments.

struct MmrSetting {
  double rate = 0.5;
  double alpha = 0.0;
  double beta = 0.0;
};

// "MMR@0.25 {0.05, 0.8}"
std::string mmr_label(const MmrSetting& s);

// Both variants see only the last R days for each R in budgets_days. LastN
// pools every doc in that window; RAG selects a fixed number of docs from it,
// the doc count of a context_days window.
struct RetentionSettings {
  std::vector<std::uint32_t> budgets_days = {30, 90, 180, 365};
  std::uint32_t context_days = 30;
  std::int32_t epoch_len_days = 7;
  double alpha = 0.2;
  double beta = 0.8;
  bool negative_control = true;
};

struct GridSettings {
  std::int32_t epoch_len_days = 7;
  std::vector<MmrSetting> configs = {
      {0.5, 0.0, 0.0},   {0.5, 0.3, 0.0},  {0.5, 0.7, 0.0},   {0.5, 0.0, 0.4},
      {0.25, 0.0, 0.0},  {0.25, 0.1, 0.5}, {0.25, 0.05, 0.8}, {0.25, 0.0, 0.95}};
  bool negative_control = false;
};

struct AblationSettings {
  std::uint32_t lite_sources = 1;
  double filter_rate = 0.5;
  double alpha = 0.1;
  double beta = 0.5;
  std::size_t shortlist = 64;
  std::int32_t epoch_len_days = 7;
};

struct DataMementoSettings {
  std::uint32_t recent_days = 35;
  double replay_fraction = 0.25;
  std::size_t retain_per_hour = 4;
  double shrink_factor = 0.1;
  double lr_multiplier = 2.0;
  double alpha = 0.3;
  double beta = 0.5;
  TwoTowerConfig two_tower;
  bool negative_control = false;
};

enum class ExperimentKind { kRetentionScaling, kMmrGrid, kRepMementoAblation, kDataMementoGrid };

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::kMmrGrid;
  GeneratorConfig generator;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::size_t threads = 0;  // 0: hardware concurrency
  RankerConfig ranker;
  RetentionSettings retention;
  GridSettings mmr_grid;
  AblationSettings rep_ablation;
  DataMementoSettings data_memento;
};

// Accepts "RetentionScaling" / "retention_scaling" style names.
ExperimentKind parse_experiment_kind(const std::string& name);
std::string experiment_name(ExperimentKind kind);

// Strict parse: unknown keys anywhere throw kInvalidConfig.
ExperimentSpec parse_spec(const nlohmann::json& config, ExperimentKind kind);
GeneratorConfig parse_generator(const nlohmann::json& config);
nlohmann::json to_json(const ExperimentSpec& spec);
nlohmann::json to_json(const GeneratorConfig& cfg);

struct EpochNe {
  std::string epoch;
  double ne_old = 0.0;
  double ne_recent = 0.0;
};

struct ReportRecord {
  std::string experiment;
  std::string variant;
  std::string corpus;  // "seasonal" or "control"
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<EpochNe> epochs;
  double wall_clock_s = 0.0;  // kept out of the JSON report

  double metric(const std::string& name) const;
};

struct Assertion {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentReport {
  std::string experiment;
  ExperimentSpec spec;
  std::vector<ReportRecord> records;
  std::vector<Assertion> assertions;

  bool all_passed() const;
  // Mean and sample std of a metric over seeds for one (variant, corpus).
  std::pair<double, double> mean_std(const std::string& variant, const std::string& metric,
                                     const std::string& corpus = "seasonal") const;
};

ExperimentReport run_retention_scaling(const ExperimentSpec& spec);
ExperimentReport run_mmr_grid(const ExperimentSpec& spec);
ExperimentReport run_rep_memento_ablation(const ExperimentSpec& spec);
ExperimentReport run_data_memento_grid(const ExperimentSpec& spec);
ExperimentReport run_experiment(const ExperimentSpec& spec);

// Deterministic JSON (no timing).
nlohmann::json report_json(const ExperimentReport& report);
// experiment,variant,corpus,seed,epoch,ne_old,ne_recent
std::string report_csv(const ExperimentReport& report);
nlohmann::json timings_json(const ExperimentReport& report);
std::string render_markdown(const nlohmann::json& report);

}  // namespace memento
