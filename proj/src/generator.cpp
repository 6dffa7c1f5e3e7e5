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
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "memento/harness.hpp"
#include "memento/metrics.hpp"

namespace memento {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return std::mt19937_64(splitmix(splitmix(seed) ^ splitmix(a * 0x100000001b3ULL + b)));
}

Embedding unit_gaussian(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double ss = 0.0;
  for (auto& x : v) {
    x = n(rng);
    ss += x * x;
  }
  const double inv = 1.0 / std::sqrt(ss);
  Embedding out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kInvalidConfig, what);
}

void permute(LabeledRows& r, const std::vector<std::size_t>& order) {
  LabeledRows out;
  out.rows.reserve(order.size());
  for (auto i : order) {
    out.rows.push_back(std::move(r.rows[i]));
    out.p_true.push_back(r.p_true[i]);
    out.user.push_back(r.user[i]);
  }
  r = std::move(out);
}

void sort_by_time(LabeledRows& r) {
  std::vector<std::size_t> order(r.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return r.rows[a].ts_hour < r.rows[b].ts_hour;
  });
  permute(r, order);
}

}  // namespace

void validate(const GeneratorConfig& c) {
  require(c.n_users > 0 && c.n_sources > 0 && c.n_days > 0 && c.dim > 0,
          "n_users, n_sources, n_days and dim must be positive");
  require(c.n_topics > 0 && c.n_ads > 0, "n_topics and n_ads must be positive");
  require(c.interest_drift >= 0.0 && c.interest_drift <= 1.0, "interest_drift must be in [0, 1]");
  require(c.drift_scale >= 0.0, "drift_scale must be non-negative");
  require(c.cohort_mix >= 0.0 && c.cohort_mix <= 1.0, "cohort_mix must be in [0, 1]");
  require(c.seasonal_period_days > 0, "seasonal_period_days must be positive");
  require(c.season_length_days <= c.seasonal_period_days,
          "season_length_days must not exceed seasonal_period_days");
  require(c.n_seasonal_topics <= c.n_topics, "n_seasonal_topics exceeds n_topics");
  require(c.cohort_mix == 0.0 || c.n_seasonal_topics > 0,
          "seasonal users need at least one seasonal topic");
  require(c.noise_scale >= 0.0 && c.feature_noise >= 0.0 && c.ad_jitter >= 0.0,
          "noise scales must be non-negative");
  require(c.seasonal_ad_boost > 0.0, "seasonal_ad_boost must be positive");
  require(c.rows_per_user_day > 0.0, "rows_per_user_day must be positive");
  require(c.holdout_fraction >= 0.0 && c.holdout_fraction < 1.0,
          "holdout_fraction must be in [0, 1)");
  require(std::isfinite(c.label_bias) && std::isfinite(c.label_scale) &&
              std::isfinite(c.seasonal_strength),
          "label parameters must be finite");
}

bool in_season(const GeneratorConfig& cfg, std::int64_t day) {
  const std::int64_t p = cfg.seasonal_period_days;
  const std::int64_t phase = ((day - cfg.season_phase_days) % p + p) % p;
  return phase < static_cast<std::int64_t>(cfg.season_length_days);
}

std::string user_name(std::uint32_t u) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "u%06u", u);
  return buf;
}

std::string ad_name(std::uint32_t a) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "a%05u", a);
  return buf;
}

World make_world(const GeneratorConfig& cfg) {
  validate(cfg);
  World w;
  w.cfg = cfg;
  auto rng = stream(cfg.seed, 0);
  for (std::uint32_t k = 0; k < cfg.n_topics; ++k) w.topics.push_back(unit_gaussian(cfg.dim, rng));
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.dim)));
  for (std::uint32_t j = 0; j < cfg.n_ads; ++j) {
    const std::uint32_t t = j % cfg.n_topics;
    std::vector<double> v(cfg.dim);
    double ss = 0.0;
    for (std::uint32_t i = 0; i < cfg.dim; ++i) {
      v[i] = w.topics[t][i] + cfg.ad_jitter * n(rng);
      ss += v[i] * v[i];
    }
    Embedding a(cfg.dim);
    for (std::uint32_t i = 0; i < cfg.dim; ++i) a[i] = static_cast<float>(v[i] / std::sqrt(ss));
    w.ads.push_back(std::move(a));
    w.ad_topic.push_back(t);
  }
  const std::uint32_t regular = cfg.n_topics - cfg.n_seasonal_topics;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
    // Draw every variate regardless of cohort so that cohort_mix only flips
    // membership and leaves the rest of the world unchanged.
    const double home = u01(rng);
    const double member = u01(rng);
    const double season = u01(rng);
    if (regular > 0) {
      w.user_topic.push_back(cfg.n_seasonal_topics +
                             std::min(regular - 1, static_cast<std::uint32_t>(home * regular)));
    } else {
      w.user_topic.push_back(std::min(cfg.n_topics - 1, static_cast<std::uint32_t>(home * cfg.n_topics)));
    }
    if (member < cfg.cohort_mix) {
      w.user_season_topic.push_back(std::min(
          cfg.n_seasonal_topics - 1, static_cast<std::uint32_t>(season * cfg.n_seasonal_topics)));
    } else {
      w.user_season_topic.push_back(std::nullopt);
    }
  }
  return w;
}

std::vector<double> user_interest(const World& world, std::uint32_t u) {
  const auto& c = world.cfg;
  const std::size_t k = c.n_topics;
  const std::size_t d = c.dim;
  auto rng = stream(c.seed, 1 + 4ULL * u);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> weights(k);
  for (auto& x : weights) x = c.drift_scale * n(rng);
  const double rho = c.interest_drift;
  const double innov = std::sqrt(std::max(0.0, 1.0 - rho * rho)) * c.drift_scale;
  std::vector<double> out(static_cast<std::size_t>(c.n_days) * d, 0.0);
  for (std::uint32_t t = 0; t < c.n_days; ++t) {
    if (t > 0) {
      for (auto& x : weights) x = rho * x + innov * n(rng);
    }
    double* row = out.data() + static_cast<std::size_t>(t) * d;
    for (std::size_t j = 0; j < k; ++j) {
      double coef = weights[j];
      if (j == world.user_topic[u]) coef += 1.0;
      if (world.user_season_topic[u] && *world.user_season_topic[u] == j && in_season(c, t)) {
        coef += c.seasonal_strength;
      }
      if (coef == 0.0) continue;
      for (std::size_t i = 0; i < d; ++i) row[i] += coef * world.topics[j][i];
    }
  }
  return out;
}

std::vector<DailyEmbedding> user_dailies(const World& world, std::uint32_t u,
                                         const std::vector<double>& interest) {
  const auto& c = world.cfg;
  const std::size_t d = c.dim;
  std::vector<DailyEmbedding> out;
  out.reserve(static_cast<std::size_t>(c.n_sources) * c.n_days);
  const auto name = user_name(u);
  const double sd = c.noise_scale / std::sqrt(static_cast<double>(d));
  for (std::uint32_t s = 0; s < c.n_sources; ++s) {
    auto rng = stream(c.seed, 2 + 4ULL * u, s);
    std::normal_distribution<double> n(0.0, 1.0);
    const SourceId source{s, "source-" + std::to_string(s), c.dim};
    for (std::uint32_t t = 0; t < c.n_days; ++t) {
      Embedding e(d);
      const double* row = interest.data() + static_cast<std::size_t>(t) * d;
      for (std::size_t i = 0; i < d; ++i) {
        const double noise = sd == 0.0 ? 0.0 : sd * n(rng);
        e[i] = static_cast<float>(row[i] + noise);
      }
      out.push_back({name, source, t, std::move(e)});
    }
  }
  return out;
}

Corpus generate_corpus(const GeneratorConfig& cfg, bool with_dailies) {
  Corpus corpus;
  corpus.world = make_world(cfg);
  const auto& w = corpus.world;
  const std::size_t d = cfg.dim;

  // Ad sampling weights in and out of season. Without seasonal users the
  // ad mix is flat all year.
  std::vector<double> off(cfg.n_ads, 1.0), on(cfg.n_ads, 1.0);
  for (std::uint32_t j = 0; j < cfg.n_ads; ++j) {
    if (cfg.cohort_mix > 0.0 && w.ad_topic[j] < cfg.n_seasonal_topics) {
      on[j] = cfg.seasonal_ad_boost;
    }
  }
  std::discrete_distribution<std::uint32_t> pick_off(off.begin(), off.end());
  std::discrete_distribution<std::uint32_t> pick_on(on.begin(), on.end());

  const double fsd = cfg.feature_noise / std::sqrt(static_cast<double>(d));
  for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
    const auto interest = user_interest(w, u);
    if (with_dailies) {
      auto dailies = user_dailies(w, u, interest);
      std::move(dailies.begin(), dailies.end(), std::back_inserter(corpus.dailies));
    }
    auto rng = stream(cfg.seed, 3 + 4ULL * u);
    std::poisson_distribution<int> count(cfg.rows_per_user_day);
    std::uniform_int_distribution<int> hour(0, 23);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto name = user_name(u);
    for (std::uint32_t t = 0; t < cfg.n_days; ++t) {
      const int m = count(rng);
      const double* row = interest.data() + static_cast<std::size_t>(t) * d;
      for (int r = 0; r < m; ++r) {
        const std::uint32_t ad = in_season(cfg, t) ? pick_on(rng) : pick_off(rng);
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += row[i] * w.ads[ad][i];
        const double p = 1.0 / (1.0 + std::exp(-(cfg.label_bias + cfg.label_scale * dot)));
        TrainingRow tr;
        tr.user_id = name;
        tr.ad_id = ad_name(ad);
        tr.ts_hour = 24 * static_cast<std::int64_t>(t) + hour(rng);
        tr.label = u01(rng) < p ? 1 : 0;
        tr.feat_u.resize(d);
        for (std::size_t i = 0; i < d; ++i) {
          tr.feat_u[i] = static_cast<float>(row[i] + (fsd == 0.0 ? 0.0 : fsd * n(rng)));
        }
        tr.feat_a = w.ads[ad];
        const bool old = 3ULL * t < cfg.n_days;
        const bool recent = 10ULL * t >= 9ULL * cfg.n_days;
        const bool held = (old || recent) && u01(rng) < cfg.holdout_fraction;
        LabeledRows& dst = !held ? corpus.train : (old ? corpus.holdout_old : corpus.holdout_recent);
        dst.rows.push_back(std::move(tr));
        dst.p_true.push_back(p);
        dst.user.push_back(u);
      }
    }
  }
  sort_by_time(corpus.train);
  sort_by_time(corpus.holdout_old);
  sort_by_time(corpus.holdout_recent);
  return corpus;
}

double bayes_ne(const std::vector<double>& p_true) {
  if (p_true.empty()) throw Error(ErrorCode::kEmptyBatch, "no rows");
  CompensatedSum h, mean;
  for (double p : p_true) {
    h.add(binary_entropy(p));
    mean.add(p);
  }
  const double n = static_cast<double>(p_true.size());
  return (h.value() / n) / binary_entropy(mean.value() / n);
}

double oracle_ne(const LabeledRows& rows) {
  PredictionBatch b;
  for (std::size_t i = 0; i < rows.rows.size(); ++i) b.add(rows.p_true[i], rows.rows[i].label != 0);
  return normalized_entropy(b);
}

}  // namespace memento
