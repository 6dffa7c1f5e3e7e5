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

#include "memento/rehearsal.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include <nlohmann/json.hpp>

#include "memento/mmr.hpp"

namespace memento {
namespace {

using ember::Matrix;
using ember::Vector;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = n(rng);
  }
  return m;
}

std::uint64_t fnv1a(char tag, std::string_view key) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  mix(static_cast<unsigned char>(tag));
  for (char c : key) mix(static_cast<unsigned char>(c));
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Tower make_tower(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  Tower t;
  t.w1 = gaussian(hidden, in, std::sqrt(2.0 / static_cast<double>(in)), rng);
  t.b1 = Vector::Zero(static_cast<Eigen::Index>(hidden));
  t.w2 = gaussian(out, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  t.b2 = Vector::Zero(static_cast<Eigen::Index>(out));
  return t;
}

// Backprop of <upstream, tower(f)> followed by an SGD step.
void tower_step(Tower& t, const Vector& f, const Vector& hidden, const Vector& upstream,
                double lr) {
  Vector dh = t.w2.transpose() * upstream;
  for (Eigen::Index i = 0; i < dh.size(); ++i) {
    if (hidden(i) <= 0.0) dh(i) = 0.0;
  }
  t.w2 -= lr * upstream * hidden.transpose();
  t.b2 -= lr * upstream;
  t.w1 -= lr * dh * f.transpose();
  t.b1 -= lr * dh;
}

Vector tower_hidden(const Tower& t, const Vector& f) {
  return (t.w1 * f + t.b1).cwiseMax(0.0);
}

Embedding mean_of(const std::vector<const Embedding*>& vs) {
  if (vs.empty() || vs.front()->empty()) return {};
  const std::size_t d = vs.front()->size();
  std::vector<double> sum(d, 0.0);
  for (const auto* v : vs) {
    check_same_dim(v->size(), d, "chunk centroid");
    for (std::size_t i = 0; i < d; ++i) sum[i] += (*v)[i];
  }
  Embedding out(d);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = static_cast<float>(sum[i] / static_cast<double>(vs.size()));
  }
  return out;
}

}  // namespace

TrainingRow parse_row_json(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad row JSON: ") + e.what());
  }
  TrainingRow row;
  try {
    row.user_id = j.at("user").get<std::string>();
    row.ad_id = j.at("ad").get<std::string>();
    const int label = j.at("label").get<int>();
    if (label != 0 && label != 1) {
      throw Error(ErrorCode::kInvalidArgument, "label must be 0 or 1");
    }
    row.label = static_cast<std::uint8_t>(label);
    row.ts_hour = j.at("ts_hour").get<std::int64_t>();
    row.feat_u = j.at("feat_u").get<Embedding>();
    row.feat_a = j.at("feat_a").get<Embedding>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad row record: ") + e.what());
  }
  if (row.ts_hour < 0) throw Error(ErrorCode::kInvalidArgument, "negative ts_hour");
  check_finite(row.feat_u);
  check_finite(row.feat_a);
  return row;
}

std::vector<TrainingRow> read_rows_jsonl(std::istream& in) {
  std::vector<TrainingRow> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_row_json(line));
  }
  return out;
}

void write_rows_jsonl(std::ostream& out, std::span<const TrainingRow> rows) {
  for (const auto& r : rows) {
    nlohmann::json j = {{"user", r.user_id},     {"ad", r.ad_id},
                        {"label", r.label},      {"ts_hour", r.ts_hour},
                        {"feat_u", r.feat_u},    {"feat_a", r.feat_a}};
    out << j.dump() << '\n';
  }
}

Vector Tower::forward(const Vector& f) const {
  check_same_dim(static_cast<std::size_t>(f.size()), static_cast<std::size_t>(w1.cols()),
                 "tower input");
  return w2 * tower_hidden(*this, f) + b2;
}

double TwoTower::score(const Embedding& feat_u, const Embedding& feat_a) const {
  return user.forward(ember::to_vector(feat_u)).dot(ad.forward(ember::to_vector(feat_a))) +
         bias;
}

TwoTower make_two_tower(std::size_t user_feat_dim, std::size_t ad_feat_dim,
                        const TwoTowerConfig& config) {
  if (user_feat_dim == 0 || ad_feat_dim == 0 || config.hidden == 0 || config.out_dim == 0) {
    throw Error(ErrorCode::kInvalidArgument, "empty two-tower shape");
  }
  std::mt19937_64 rng(config.seed);
  TwoTower t;
  t.user = make_tower(user_feat_dim, config.hidden, config.out_dim, rng);
  t.ad = make_tower(ad_feat_dim, config.hidden, config.out_dim, rng);
  return t;
}

TwoTower train_two_tower(std::span<const TrainingRow> rows, const TwoTowerConfig& config) {
  if (rows.empty()) throw Error(ErrorCode::kEmptyBatch, "no rows to train the towers");
  TwoTower t = make_two_tower(rows.front().feat_u.size(), rows.front().feat_a.size(), config);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& r : rows) {
      const Vector fu = ember::to_vector(r.feat_u);
      const Vector fa = ember::to_vector(r.feat_a);
      const Vector hu = tower_hidden(t.user, fu);
      const Vector ha = tower_hidden(t.ad, fa);
      const Vector u = t.user.w2 * hu + t.user.b2;
      const Vector a = t.ad.w2 * ha + t.ad.b2;
      const double g = sigmoid(u.dot(a) + t.bias) - static_cast<double>(r.label);
      tower_step(t.user, fu, hu, g * a, config.lr);
      tower_step(t.ad, fa, ha, g * u, config.lr);
      t.bias -= config.lr * g;
    }
  }
  t.trained = true;
  return t;
}

void embed_rows(std::span<TrainingRow> rows, const TwoTower& towers) {
  if (!towers.trained) throw Error(ErrorCode::kUntrainedTower, "two-tower model is not trained");
  for (auto& r : rows) {
    r.user_emb = ember::to_embedding(towers.user.forward(ember::to_vector(r.feat_u)));
    r.ad_emb = ember::to_embedding(towers.ad.forward(ember::to_vector(r.feat_a)));
  }
}

std::vector<RowChunk> build_chunks(std::span<const TrainingRow> rows,
                                   std::size_t retain_per_hour) {
  if (retain_per_hour == 0) {
    throw Error(ErrorCode::kInvalidArgument, "retain_per_hour must be positive");
  }
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rows[a].ts_hour < rows[b].ts_hour;
  });

  auto by_loss = [&](std::size_t a, std::size_t b) {
    if (rows[a].loss != rows[b].loss) return rows[a].loss > rows[b].loss;
    return a < b;
  };

  std::vector<RowChunk> chunks;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    const auto hour = rows[order[i]].ts_hour;
    std::vector<std::size_t> pos, neg;
    while (j < order.size() && rows[order[j]].ts_hour == hour) {
      (rows[order[j]].label ? pos : neg).push_back(order[j]);
      ++j;
    }
    const std::size_t n = j - i;
    const std::size_t k = std::min(retain_per_hour, n);
    std::sort(pos.begin(), pos.end(), by_loss);
    std::sort(neg.begin(), neg.end(), by_loss);
    const std::size_t q_pos = k * pos.size() / n;
    const std::size_t q_neg = k * neg.size() / n;
    std::vector<std::size_t> keep(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(q_pos));
    keep.insert(keep.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(q_neg));
    std::vector<std::size_t> rest(pos.begin() + static_cast<std::ptrdiff_t>(q_pos), pos.end());
    rest.insert(rest.end(), neg.begin() + static_cast<std::ptrdiff_t>(q_neg), neg.end());
    std::sort(rest.begin(), rest.end(), by_loss);
    rest.resize(k - q_pos - q_neg);
    keep.insert(keep.end(), rest.begin(), rest.end());
    std::sort(keep.begin(), keep.end());

    RowChunk chunk;
    chunk.hour = hour;
    std::vector<const Embedding*> us, as;
    for (auto idx : keep) {
      chunk.rows.push_back(rows[idx]);
      us.push_back(&rows[idx].user_emb);
      as.push_back(&rows[idx].ad_emb);
    }
    chunk.user_centroid = mean_of(us);
    chunk.ad_centroid = mean_of(as);
    chunks.push_back(std::move(chunk));
    i = j;
  }
  return chunks;
}

std::size_t replay_budget(double fraction, std::size_t recent_rows) {
  if (!(fraction >= 0.0) || fraction > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "replay fraction must be in [0, 1]");
  }
  if (fraction == 0.0) return 0;
  return static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(recent_rows) - 1e-9));
}

ReplaySelection select_replay(std::span<const RowChunk> recent,
                              std::span<const RowChunk> historical,
                              const ReplayOptions& options) {
  ReplaySelection out;
  if (options.policy == ReplayPolicy::kNone) return out;
  std::size_t n_recent = 0;
  for (const auto& c : recent) n_recent += c.rows.size();
  std::size_t n_hist = 0;
  for (const auto& c : historical) n_hist += c.rows.size();
  out.budget = replay_budget(options.fraction, n_recent);
  if (out.budget == 0) return out;
  if (out.budget > n_hist) {
    throw Error(ErrorCode::kBudgetExceedsCorpus, "replay budget exceeds historical rows");
  }

  if (options.policy == ReplayPolicy::kRandom) {
    std::vector<const TrainingRow*> pool;
    pool.reserve(n_hist);
    for (const auto& c : historical) {
      for (const auto& r : c.rows) pool.push_back(&r);
    }
    std::vector<const TrainingRow*> picked;
    std::mt19937_64 rng(options.seed);
    std::sample(pool.begin(), pool.end(), std::back_inserter(picked), out.budget, rng);
    for (const auto* r : picked) out.rows.push_back(*r);
  } else {
    if (recent.empty()) throw Error(ErrorCode::kEmptyCandidates, "no recent chunks");
    std::vector<const Embedding*> us, as;
    for (const auto& c : recent) {
      us.push_back(&c.user_centroid);
      as.push_back(&c.ad_centroid);
    }
    RetrievalQuery q;
    q.user_emb = mean_of(us);
    q.ad_emb = mean_of(as);
    q.alpha = options.alpha;
    q.beta = options.beta;

    std::vector<MmrCandidate> cands;
    std::vector<std::size_t> by_id;  // doc position -> chunk index
    for (std::size_t i = 0; i < historical.size(); ++i) {
      if (historical[i].rows.empty()) continue;
      cands.push_back({static_cast<DocId>(historical[i].hour), historical[i].user_centroid,
                       historical[i].ad_centroid});
    }
    std::unordered_map<DocId, std::size_t> index;
    for (std::size_t i = 0; i < historical.size(); ++i) {
      index[static_cast<DocId>(historical[i].hour)] = i;
    }
    // The greedy sequence for k picks is a prefix of the one for k' > k, so
    // growing k until the budget is covered gives the same result as running
    // to completion.
    std::size_t max_rows = 1;
    for (const auto& c : historical) max_rows = std::max(max_rows, c.rows.size());
    std::size_t k = std::min(cands.size(), (out.budget + max_rows - 1) / max_rows);
    while (true) {
      q.filter_rate = static_cast<double>(k) / static_cast<double>(cands.size());
      const auto sel = mmr_select(q, cands);
      std::size_t rows = 0;
      std::size_t used = 0;
      while (used < sel.selected.size() && rows < out.budget) {
        rows += historical[index.at(sel.selected[used])].rows.size();
        ++used;
      }
      if (rows >= out.budget || k == cands.size()) {
        for (std::size_t s = 0; s < used; ++s) {
          out.chunk_hours.push_back(static_cast<std::int64_t>(sel.selected[s]));
        }
        break;
      }
      k = std::min(cands.size(), 2 * k);
    }
    std::vector<std::int64_t> hours = out.chunk_hours;
    std::sort(hours.begin(), hours.end());
    for (auto h : hours) {
      const auto& c = historical[index.at(static_cast<DocId>(h))];
      out.rows.insert(out.rows.end(), c.rows.begin(), c.rows.end());
    }
  }
  std::stable_sort(out.rows.begin(), out.rows.end(),
                   [](const TrainingRow& a, const TrainingRow& b) { return a.ts_hour < b.ts_hour; });
  return out;
}

// ---------------------------------------------------------------------------

struct ToyRanker::Pass {
  Vector u0;       // table entry
  Vector u1;       // after affine
  Vector qnn_in;   // [u1; c]
  std::vector<Vector> v;
  Vector s;
  Vector z1;
  Vector h;
  double logit = 0.0;
};

ToyRanker::ToyRanker(const RankerConfig& config) : config_(config) {
  if (config.dim == 0 || config.hidden == 0) {
    throw Error(ErrorCode::kInvalidArgument, "empty ranker shape");
  }
  if (config.ember != EmberMode::kNone && !config.use_context) {
    throw Error(ErrorCode::kInvalidArgument, "Ember layers need a context");
  }
  const std::size_t n_vec = config.use_context ? 4 : 3;
  const auto n_dots = static_cast<Eigen::Index>(n_vec * (n_vec - 1) / 2);
  std::mt19937_64 rng(config.seed);
  w_lin_ = Vector::Zero(n_dots);
  w1_ = gaussian(config.hidden, static_cast<std::size_t>(n_dots), 0.5, rng);
  b1_ = Vector::Zero(static_cast<Eigen::Index>(config.hidden));
  w2_ = gaussian(config.hidden, 1, 0.1, rng).col(0);
  if (config.ember == EmberMode::kAffine || config.ember == EmberMode::kBoth) {
    ember::AffineConfig ac;
    ac.context_dim = config.dim;
    ac.feature_dims = {config.dim};
    ac.hidden = config.ember_hidden;
    ac.blocks = config.ember_blocks;
    ac.seed = config.seed + 1;
    affine_ = ember::make_affine(ac);
  }
  if (config.ember == EmberMode::kQuadratic || config.ember == EmberMode::kBoth) {
    // Not zero: relu'(0) = 0 would leave the gate without gradient forever.
    qnn_ = ember::make_qnn_random(2 * config.dim, config.qnn_heads, config.init_std,
                                  config.seed + 2);
  }
}

Vector ToyRanker::init_entry(char tag, std::string_view key) const {
  std::mt19937_64 rng(splitmix(config_.seed ^ splitmix(generation_ + 1) ^ fnv1a(tag, key)));
  std::normal_distribution<double> n(0.0, config_.init_std);
  Vector v(static_cast<Eigen::Index>(config_.dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = n(rng);
  return v;
}

ToyRanker::Pass ToyRanker::run(const Vector& u, const Vector& a, const Vector& x,
                               const Vector* c) const {
  check_same_dim(static_cast<std::size_t>(x.size()), config_.dim, "ranker ad features");
  Pass p;
  p.u0 = u;
  p.u1 = affine_ ? ember::affine_forward(*affine_, 0, *c, u) : u;
  p.v = {p.u1, a, x};
  if (c) {
    check_same_dim(static_cast<std::size_t>(c->size()), config_.dim, "ranker context");
    p.v.push_back(*c);
    if (qnn_) {
      p.qnn_in.resize(2 * c->size());
      p.qnn_in << p.u1, *c;
      const Vector out = ember::qnn_forward(*qnn_, p.qnn_in);
      p.v[0] = out.head(c->size());
      p.v[3] = out.tail(c->size());
    }
  }
  p.s.resize(static_cast<Eigen::Index>(p.v.size() * (p.v.size() - 1) / 2));
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    for (std::size_t j = i + 1; j < p.v.size(); ++j) p.s(k++) = p.v[i].dot(p.v[j]);
  }
  p.z1 = w1_ * p.s + b1_;
  p.h = p.z1.cwiseMax(0.0);
  p.logit = bias_ + w_lin_.dot(p.s) + w2_.dot(p.h);
  return p;
}

double ToyRanker::predict(const TrainingRow& row, const Vector* context) const {
  if (config_.use_context != (context != nullptr)) {
    throw Error(ErrorCode::kInvalidArgument, "context presence does not match the model");
  }
  auto find = [this](const Table& t, char tag, const std::string& key) {
    auto it = t.find(key);
    return it != t.end() ? it->second : init_entry(tag, key);
  };
  const auto p = run(find(users_, 'u', row.user_id), find(ads_, 'a', row.ad_id),
                     ember::to_vector(row.feat_a), context);
  return sigmoid(p.logit);
}

double ToyRanker::train_step(const TrainingRow& row, const Vector* context,
                             double sparse_lr_multiplier) {
  if (config_.use_context != (context != nullptr)) {
    throw Error(ErrorCode::kInvalidArgument, "context presence does not match the model");
  }
  auto entry = [this](Table& t, char tag, const std::string& key) -> Vector& {
    auto it = t.find(key);
    if (it == t.end()) it = t.emplace(key, init_entry(tag, key)).first;
    return it->second;
  };
  Vector& u = entry(users_, 'u', row.user_id);
  Vector& a = entry(ads_, 'a', row.ad_id);
  const auto p = run(u, a, ember::to_vector(row.feat_a), context);
  const double prob = sigmoid(p.logit);
  const double loss = example_log_loss(prob, row.label != 0);
  const double g = prob - static_cast<double>(row.label);

  Vector dh = g * w2_;
  for (Eigen::Index i = 0; i < dh.size(); ++i) {
    if (p.z1(i) <= 0.0) dh(i) = 0.0;
  }
  const Vector ds = g * w_lin_ + w1_.transpose() * dh;
  std::vector<Vector> dv(p.v.size(), Vector::Zero(static_cast<Eigen::Index>(config_.dim)));
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    for (std::size_t j = i + 1; j < p.v.size(); ++j, ++k) {
      dv[i] += ds(k) * p.v[j];
      dv[j] += ds(k) * p.v[i];
    }
  }

  const double lr = config_.lr;
  const double elr = config_.ember_lr;
  Vector du1 = dv[0];
  if (qnn_) {
    Vector up(p.qnn_in.size());
    up << dv[0], dv[3];
    const auto qg = ember::qnn_backward(*qnn_, p.qnn_in, up);
    du1 = qg.input.head(static_cast<Eigen::Index>(config_.dim));
    qnn_->gate -= elr * qg.gate;
  }
  Vector du0 = du1;
  if (affine_) {
    const auto ag = ember::affine_backward(*affine_, 0, *context, p.u0, du1);
    du0 = ag.input;
    ember::axpy(*affine_, -elr, ag.params);
  }

  bias_ -= lr * g;
  w_lin_ -= lr * g * p.s;
  w2_ -= lr * g * p.h;
  w1_ -= lr * dh * p.s.transpose();
  b1_ -= lr * dh;
  const double slr = lr * sparse_lr_multiplier;
  u -= slr * du0;
  a -= slr * dv[1];
  return loss;
}

void ToyRanker::reset_sparse() {
  ++generation_;
  for (auto& [key, v] : users_) v = init_entry('u', key);
  for (auto& [key, v] : ads_) v = init_entry('a', key);
}

void ToyRanker::shrink_sparse(double factor) {
  for (auto& [key, v] : users_) v *= factor;
  for (auto& [key, v] : ads_) v *= factor;
}

double train_pass(ToyRanker& model, std::span<const TrainingRow> rows,
                  std::span<const Vector> contexts, double sparse_lr_multiplier,
                  std::vector<double>* losses) {
  if (!contexts.empty() && contexts.size() != rows.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "contexts vs rows");
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].ts_hour < rows[i - 1].ts_hour) {
      throw Error(ErrorCode::kInvalidArgument, "rows are not in time order");
    }
  }
  if (losses) losses->assign(rows.size(), 0.0);
  CompensatedSum sum;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double l = model.train_step(rows[i], contexts.empty() ? nullptr : &contexts[i],
                                      sparse_lr_multiplier);
    sum.add(l);
    if (losses) (*losses)[i] = l;
  }
  return rows.empty() ? 0.0 : sum.value() / static_cast<double>(rows.size());
}

PredictionBatch predict_batch(const ToyRanker& model, std::span<const TrainingRow> rows,
                              std::span<const Vector> contexts) {
  if (!contexts.empty() && contexts.size() != rows.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "contexts vs rows");
  }
  PredictionBatch b;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    b.add(model.predict(rows[i], contexts.empty() ? nullptr : &contexts[i]), rows[i].label != 0);
  }
  return b;
}

void validate_plan(const SecondPassPlan& plan) {
  if (plan.strategy == SecondPassStrategy::kShrink &&
      !(plan.shrink_factor > 0.0 && plan.shrink_factor <= 1.0)) {
    throw Error(ErrorCode::kInvalidPlan, "shrink factor must be in (0, 1]");
  }
  if (!(plan.lr_multiplier >= 1.0) || !std::isfinite(plan.lr_multiplier)) {
    throw Error(ErrorCode::kInvalidPlan, "lr_multiplier must be >= 1");
  }
  if (!(plan.replay_fraction >= 0.0 && plan.replay_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidPlan, "replay_fraction must be in [0, 1]");
  }
  if (plan.replay_policy == ReplayPolicy::kNone && plan.replay_fraction != 0.0) {
    throw Error(ErrorCode::kInvalidPlan, "replay_fraction set without a replay policy");
  }
}

SecondPassResult second_pass_train(ToyRanker& model, std::span<const TrainingRow> recent_rows,
                                   std::span<const TrainingRow> replay_rows,
                                   const SecondPassPlan& plan) {
  validate_plan(plan);
  if (plan.replay_policy == ReplayPolicy::kNone && !replay_rows.empty()) {
    throw Error(ErrorCode::kInvalidPlan, "replay rows given without a replay policy");
  }
  if (model.config().use_context) {
    throw Error(ErrorCode::kInvalidPlan, "second pass runs on context-free rankers");
  }
  if (plan.strategy == SecondPassStrategy::kReset) {
    model.reset_sparse();
  } else {
    model.shrink_sparse(plan.shrink_factor);
  }
  std::vector<TrainingRow> merged;
  merged.reserve(recent_rows.size() + replay_rows.size());
  std::merge(recent_rows.begin(), recent_rows.end(), replay_rows.begin(), replay_rows.end(),
             std::back_inserter(merged),
             [](const TrainingRow& a, const TrainingRow& b) { return a.ts_hour < b.ts_hour; });
  SecondPassResult r;
  r.rows_trained = merged.size();
  r.replay_rows = replay_rows.size();
  r.mean_train_loss = train_pass(model, merged, {}, plan.lr_multiplier);
  return r;
}

ForgettingReport eval_forgetting(const ToyRanker& model, std::span<const TrainingRow> holdout_old,
                                 std::span<const TrainingRow> holdout_recent) {
  if (holdout_old.empty() || holdout_recent.empty()) {
    throw Error(ErrorCode::kEmptyHoldout, "holdout is empty");
  }
  return {normalized_entropy(predict_batch(model, holdout_old)),
          normalized_entropy(predict_batch(model, holdout_recent))};
}

}  // namespace memento
