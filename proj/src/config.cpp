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

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "memento/harness.hpp"

namespace memento {
namespace {

using nlohmann::json;

// Reads fields out of one JSON object and rejects any key nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::kInvalidConfig, path_ + " must be an object");
  }
  Fields(const Fields&) = delete;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidConfig, where(key) + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw Error(ErrorCode::kInvalidConfig, "unknown key " + where(it.key()));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_generator(const json& j, GeneratorConfig& g, const std::string& path) {
  Fields f(j, path);
  f.get("n_users", g.n_users);
  f.get("n_sources", g.n_sources);
  f.get("n_days", g.n_days);
  f.get("dim", g.dim);
  f.get("interest_drift", g.interest_drift);
  f.get("drift_scale", g.drift_scale);
  f.get("seasonal_period_days", g.seasonal_period_days);
  f.get("season_length_days", g.season_length_days);
  f.get("season_phase_days", g.season_phase_days);
  f.get("seasonal_strength", g.seasonal_strength);
  f.get("cohort_mix", g.cohort_mix);
  f.get("noise_scale", g.noise_scale);
  f.get("n_topics", g.n_topics);
  f.get("n_seasonal_topics", g.n_seasonal_topics);
  f.get("n_ads", g.n_ads);
  f.get("ad_jitter", g.ad_jitter);
  f.get("seasonal_ad_boost", g.seasonal_ad_boost);
  f.get("rows_per_user_day", g.rows_per_user_day);
  f.get("label_bias", g.label_bias);
  f.get("label_scale", g.label_scale);
  f.get("feature_noise", g.feature_noise);
  f.get("holdout_fraction", g.holdout_fraction);
  f.get("seed", g.seed);
  f.finish();
  validate(g);
}

void read_ranker(const json& j, RankerConfig& r) {
  Fields f(j, "ranker");
  f.get("hidden", r.hidden);
  f.get("init_std", r.init_std);
  f.get("lr", r.lr);
  f.get("ember_hidden", r.ember_hidden);
  f.get("ember_blocks", r.ember_blocks);
  f.get("qnn_heads", r.qnn_heads);
  f.get("ember_lr", r.ember_lr);
  f.get("seed", r.seed);
  f.finish();
  if (r.hidden == 0 || !(r.lr > 0.0) || !(r.init_std > 0.0) || !(r.ember_lr >= 0.0) ||
      r.ember_hidden == 0 || r.qnn_heads == 0) {
    throw Error(ErrorCode::kInvalidConfig, "ranker settings out of range");
  }
}

void read_mmr_setting(const json& j, MmrSetting& m, const std::string& path) {
  Fields f(j, path);
  f.get("rate", m.rate);
  f.get("alpha", m.alpha);
  f.get("beta", m.beta);
  f.finish();
}

void read_two_tower(const json& j, TwoTowerConfig& t) {
  Fields f(j, "data_memento.two_tower");
  f.get("hidden", t.hidden);
  f.get("out_dim", t.out_dim);
  f.get("epochs", t.epochs);
  f.get("lr", t.lr);
  f.get("seed", t.seed);
  f.finish();
}

json mmr_json(const MmrSetting& m) { return {{"rate", m.rate}, {"alpha", m.alpha}, {"beta", m.beta}}; }

}  // namespace

ExperimentKind parse_experiment_kind(const std::string& name) {
  std::string n;
  for (char c : name) {
    if (c != '_' && c != '-') n.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (n == "retentionscaling") return ExperimentKind::kRetentionScaling;
  if (n == "mmrgrid") return ExperimentKind::kMmrGrid;
  if (n == "repmementoablation") return ExperimentKind::kRepMementoAblation;
  if (n == "datamementogrid") return ExperimentKind::kDataMementoGrid;
  throw Error(ErrorCode::kInvalidConfig, "unknown experiment " + name);
}

std::string experiment_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kRetentionScaling:
      return "RetentionScaling";
    case ExperimentKind::kMmrGrid:
      return "MmrGrid";
    case ExperimentKind::kRepMementoAblation:
      return "RepMementoAblation";
    case ExperimentKind::kDataMementoGrid:
      return "DataMementoGrid";
  }
  return "?";
}

GeneratorConfig parse_generator(const json& config) {
  GeneratorConfig g;
  Fields top(config, "");
  // A generator-only file and a full experiment config are both accepted.
  if (const auto* gen = top.sub("generator")) {
    for (const char* k : {"experiment", "seeds", "threads", "ranker", "retention", "mmr_grid",
                          "rep_ablation", "data_memento"}) {
      top.sub(k);
    }
    top.finish();
    read_generator(*gen, g, "generator");
    return g;
  }
  read_generator(config, g, "");
  return g;
}

ExperimentSpec parse_spec(const json& config, ExperimentKind kind) {
  ExperimentSpec s;
  s.kind = kind;
  Fields f(config, "");
  if (const auto* e = f.sub("experiment")) {
    if (!e->is_string() || parse_experiment_kind(e->get<std::string>()) != kind) {
      throw Error(ErrorCode::kInvalidConfig, "config names a different experiment");
    }
  }
  if (const auto* g = f.sub("generator")) read_generator(*g, s.generator, "generator");
  f.get("seeds", s.seeds);
  f.get("threads", s.threads);
  if (const auto* r = f.sub("ranker")) read_ranker(*r, s.ranker);
  if (const auto* r = f.sub("retention")) {
    Fields rf(*r, "retention");
    rf.get("budgets_days", s.retention.budgets_days);
    rf.get("context_days", s.retention.context_days);
    rf.get("epoch_len_days", s.retention.epoch_len_days);
    rf.get("alpha", s.retention.alpha);
    rf.get("beta", s.retention.beta);
    rf.get("negative_control", s.retention.negative_control);
    rf.finish();
  }
  if (const auto* r = f.sub("mmr_grid")) {
    Fields rf(*r, "mmr_grid");
    rf.get("epoch_len_days", s.mmr_grid.epoch_len_days);
    rf.get("negative_control", s.mmr_grid.negative_control);
    if (const auto* c = rf.sub("configs")) {
      if (!c->is_array()) throw Error(ErrorCode::kInvalidConfig, "mmr_grid.configs must be an array");
      s.mmr_grid.configs.clear();
      for (std::size_t i = 0; i < c->size(); ++i) {
        MmrSetting m;
        read_mmr_setting((*c)[i], m, "mmr_grid.configs[" + std::to_string(i) + "]");
        s.mmr_grid.configs.push_back(m);
      }
    }
    rf.finish();
  }
  if (const auto* r = f.sub("rep_ablation")) {
    Fields rf(*r, "rep_ablation");
    rf.get("lite_sources", s.rep_ablation.lite_sources);
    rf.get("filter_rate", s.rep_ablation.filter_rate);
    rf.get("alpha", s.rep_ablation.alpha);
    rf.get("beta", s.rep_ablation.beta);
    rf.get("shortlist", s.rep_ablation.shortlist);
    rf.get("epoch_len_days", s.rep_ablation.epoch_len_days);
    rf.finish();
  }
  if (const auto* r = f.sub("data_memento")) {
    Fields rf(*r, "data_memento");
    auto& d = s.data_memento;
    rf.get("recent_days", d.recent_days);
    rf.get("replay_fraction", d.replay_fraction);
    rf.get("retain_per_hour", d.retain_per_hour);
    rf.get("shrink_factor", d.shrink_factor);
    rf.get("lr_multiplier", d.lr_multiplier);
    rf.get("alpha", d.alpha);
    rf.get("beta", d.beta);
    rf.get("negative_control", d.negative_control);
    if (const auto* t = rf.sub("two_tower")) read_two_tower(*t, d.two_tower);
    rf.finish();
  }
  f.finish();
  if (s.seeds.empty()) throw Error(ErrorCode::kInvalidConfig, "seeds must not be empty");
  return s;
}

json to_json(const GeneratorConfig& g) {
  return {{"n_users", g.n_users},
          {"n_sources", g.n_sources},
          {"n_days", g.n_days},
          {"dim", g.dim},
          {"interest_drift", g.interest_drift},
          {"drift_scale", g.drift_scale},
          {"seasonal_period_days", g.seasonal_period_days},
          {"season_length_days", g.season_length_days},
          {"season_phase_days", g.season_phase_days},
          {"seasonal_strength", g.seasonal_strength},
          {"cohort_mix", g.cohort_mix},
          {"noise_scale", g.noise_scale},
          {"n_topics", g.n_topics},
          {"n_seasonal_topics", g.n_seasonal_topics},
          {"n_ads", g.n_ads},
          {"ad_jitter", g.ad_jitter},
          {"seasonal_ad_boost", g.seasonal_ad_boost},
          {"rows_per_user_day", g.rows_per_user_day},
          {"label_bias", g.label_bias},
          {"label_scale", g.label_scale},
          {"feature_noise", g.feature_noise},
          {"holdout_fraction", g.holdout_fraction},
          {"seed", g.seed}};
}

json to_json(const ExperimentSpec& s) {
  json grid = json::array();
  for (const auto& m : s.mmr_grid.configs) grid.push_back(mmr_json(m));
  const auto& d = s.data_memento;
  return {
      {"experiment", experiment_name(s.kind)},
      {"generator", to_json(s.generator)},
      {"seeds", s.seeds},
      {"threads", s.threads},
      {"ranker",
       {{"hidden", s.ranker.hidden},
        {"init_std", s.ranker.init_std},
        {"lr", s.ranker.lr},
        {"ember_hidden", s.ranker.ember_hidden},
        {"ember_blocks", s.ranker.ember_blocks},
        {"qnn_heads", s.ranker.qnn_heads},
        {"ember_lr", s.ranker.ember_lr},
        {"seed", s.ranker.seed}}},
      {"retention",
       {{"budgets_days", s.retention.budgets_days},
        {"context_days", s.retention.context_days},
        {"epoch_len_days", s.retention.epoch_len_days},
        {"alpha", s.retention.alpha},
        {"beta", s.retention.beta},
        {"negative_control", s.retention.negative_control}}},
      {"mmr_grid",
       {{"epoch_len_days", s.mmr_grid.epoch_len_days},
        {"configs", grid},
        {"negative_control", s.mmr_grid.negative_control}}},
      {"rep_ablation",
       {{"lite_sources", s.rep_ablation.lite_sources},
        {"filter_rate", s.rep_ablation.filter_rate},
        {"alpha", s.rep_ablation.alpha},
        {"beta", s.rep_ablation.beta},
        {"shortlist", s.rep_ablation.shortlist},
        {"epoch_len_days", s.rep_ablation.epoch_len_days}}},
      {"data_memento",
       {{"recent_days", d.recent_days},
        {"replay_fraction", d.replay_fraction},
        {"retain_per_hour", d.retain_per_hour},
        {"shrink_factor", d.shrink_factor},
        {"lr_multiplier", d.lr_multiplier},
        {"alpha", d.alpha},
        {"beta", d.beta},
        {"negative_control", d.negative_control},
        {"two_tower",
         {{"hidden", d.two_tower.hidden},
          {"out_dim", d.two_tower.out_dim},
          {"epochs", d.two_tower.epochs},
          {"lr", d.two_tower.lr},
          {"seed", d.two_tower.seed}}}}}};
}

}  // namespace memento
