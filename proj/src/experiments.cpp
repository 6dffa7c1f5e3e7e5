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
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <thread>
#include <unordered_map>

#include "memento/harness.hpp"
#include "memento/metrics.hpp"
#include "memento/mmr.hpp"

namespace memento {
namespace {

using ember::Vector;
using Clock = std::chrono::steady_clock;

constexpr const char* kSeasonal = "seasonal";
constexpr const char* kControl = "control";

// History documents of every user, ordered by (epoch_end_day, source).
struct DocStore {
  std::int32_t epoch_len = 7;
  bool quantized = true;
  std::size_t dim = 0;
  std::vector<std::vector<MementoDoc>> qdocs;
  std::vector<std::vector<MmrCandidate>> fdocs;
  std::vector<std::vector<Embedding>> vecs;  // what gets pooled
  std::vector<std::vector<std::int64_t>> ends;
  std::vector<std::unordered_map<DocId, std::size_t>> pos;
  double floats_per_user = 0.0;
};

DocStore build_doc_store(const World& world, std::uint32_t n_sources, std::int32_t epoch_len,
                         bool quantized) {
  if (!quantized && epoch_len != 1) {
    throw Error(ErrorCode::kInvalidConfig, "unquantized history is kept at daily granularity");
  }
  if (n_sources == 0 || n_sources > world.cfg.n_sources) {
    throw Error(ErrorCode::kInvalidConfig, "source subset out of range");
  }
  DocStore store;
  store.epoch_len = epoch_len;
  store.quantized = quantized;
  store.dim = world.cfg.dim;
  const std::uint32_t n_users = world.cfg.n_users;
  store.qdocs.resize(n_users);
  store.fdocs.resize(n_users);
  store.vecs.resize(n_users);
  store.ends.resize(n_users);
  store.pos.resize(n_users);
  double total = 0.0;
  for (std::uint32_t u = 0; u < n_users; ++u) {
    auto dailies = user_dailies(world, u, user_interest(world, u));
    std::erase_if(dailies, [&](const DailyEmbedding& d) { return d.source.id >= n_sources; });
    struct Item {
      std::int64_t end;
      std::uint32_t source;
      std::size_t idx;
    };
    std::vector<Item> items;
    if (quantized) {
      auto docs = chunk(dailies, epoch_len);
      for (std::size_t i = 0; i < docs.size(); ++i) {
        items.push_back({docs[i].epoch_end_day(), docs[i].source.id, i});
      }
      std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        return std::tie(a.end, a.source) < std::tie(b.end, b.source);
      });
      for (const auto& it : items) {
        store.vecs[u].push_back(dequantize(docs[it.idx].embedding));
        store.ends[u].push_back(it.end);
        store.qdocs[u].push_back(std::move(docs[it.idx]));
        total += static_cast<double>(float_equivalents_norm_int8(store.dim));
      }
    } else {
      for (std::size_t i = 0; i < dailies.size(); ++i) {
        items.push_back({dailies[i].day + 1, dailies[i].source.id, i});
      }
      std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        return std::tie(a.end, a.source) < std::tie(b.end, b.source);
      });
      for (const auto& it : items) {
        auto& d = dailies[it.idx];
        store.fdocs[u].push_back(
            {make_doc_id(d.user_id, d.source.id, d.day), d.embedding, std::nullopt});
        store.vecs[u].push_back(std::move(d.embedding));
        store.ends[u].push_back(it.end);
        total += static_cast<double>(float_equivalents_f32(store.dim));
      }
    }
    for (std::size_t i = 0; i < store.ends[u].size(); ++i) {
      const DocId id = quantized ? store.qdocs[u][i].doc_id : store.fdocs[u][i].doc_id;
      store.pos[u][id] = i;
    }
  }
  store.floats_per_user = total / static_cast<double>(n_users);
  return store;
}

struct ContextSpec {
  enum class Kind { kLastN, kRag, kMmr } kind = Kind::kMmr;
  std::uint32_t lastn_days = 0;
  std::size_t rag_docs = 0;
  MmrSetting mmr;
  std::size_t shortlist = 0;
};

struct ContextStats {
  double mean_docs = 0.0;
  double sims_per_query = 0.0;
};

Vector mean_vector(const std::vector<Embedding>& vecs, std::span<const std::size_t> idx,
                   std::size_t dim) {
  Vector out = Vector::Zero(static_cast<Eigen::Index>(dim));
  if (idx.empty()) return out;
  for (auto i : idx) {
    for (std::size_t k = 0; k < dim; ++k) out(static_cast<Eigen::Index>(k)) += vecs[i][k];
  }
  return out / static_cast<double>(idx.size());
}

std::vector<Vector> compute_contexts(const DocStore& store, const LabeledRows& rows,
                                     const ContextSpec& spec, ContextStats* stats) {
  std::vector<Vector> out;
  out.reserve(rows.rows.size());
  double docs_total = 0.0, sims_total = 0.0;
  std::vector<std::size_t> chosen;
  for (std::size_t r = 0; r < rows.rows.size(); ++r) {
    const auto& row = rows.rows[r];
    const std::uint32_t u = rows.user[r];
    const auto& ends = store.ends[u];
    const std::int64_t day = row.ts_hour / 24;
    const std::size_t n =
        static_cast<std::size_t>(std::upper_bound(ends.begin(), ends.end(), day) - ends.begin());
    chosen.clear();
    if (n == 0) {
      out.push_back(Vector::Zero(static_cast<Eigen::Index>(store.dim)));
      continue;
    }
    const std::int64_t latest = ends[n - 1];
    const std::size_t latest_lo = static_cast<std::size_t>(
        std::lower_bound(ends.begin(), ends.begin() + static_cast<std::ptrdiff_t>(n), latest) -
        ends.begin());

    // LastN and RAG both see only the last lastn_days of history.
    std::size_t lo = 0;
    if (spec.kind != ContextSpec::Kind::kMmr && spec.lastn_days > 0) {
      const std::int64_t epochs =
          (static_cast<std::int64_t>(spec.lastn_days) + store.epoch_len - 1) / store.epoch_len;
      const std::int64_t threshold = latest - epochs * store.epoch_len;
      lo = static_cast<std::size_t>(
          std::upper_bound(ends.begin(), ends.begin() + static_cast<std::ptrdiff_t>(n), threshold) -
          ends.begin());
    }
    if (spec.kind == ContextSpec::Kind::kLastN ||
        (spec.kind == ContextSpec::Kind::kRag && spec.rag_docs >= n - lo)) {
      for (std::size_t i = lo; i < n; ++i) chosen.push_back(i);
    } else {
      RetrievalQuery q;
      // The user side of the query is the latest available epoch.
      std::vector<std::size_t> latest_idx(n - latest_lo);
      std::iota(latest_idx.begin(), latest_idx.end(), latest_lo);
      q.user_emb = ember::to_embedding(mean_vector(store.vecs[u], latest_idx, store.dim));
      q.ad_emb = row.feat_a;
      q.alpha = spec.mmr.alpha;
      q.beta = spec.mmr.beta;

      // Optional relevance shortlist before the greedy pass.
      std::vector<std::size_t> cand(n - lo);
      std::iota(cand.begin(), cand.end(), lo);
      if (spec.shortlist > 0 && cand.size() > spec.shortlist) {
        const bool no_rel = q.alpha + q.beta == 0.0;
        std::vector<double> score(n);
        for (std::size_t i = lo; i < n; ++i) {
          const auto& v = store.vecs[u][i];
          if (no_rel) {
            score[i] = cosine_similarity(v, q.user_emb);
            sims_total += 1.0;
          } else {
            score[i] = 0.0;
            if (q.alpha > 0.0) score[i] += q.alpha * cosine_similarity(v, q.user_emb);
            if (q.beta > 0.0) score[i] += q.beta * cosine_similarity(v, *q.ad_emb);
            sims_total += (q.alpha > 0.0) + (q.beta > 0.0);
          }
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(spec.shortlist),
                          cand.end(), [&](std::size_t a, std::size_t b) {
                            if (score[a] != score[b]) return score[a] > score[b];
                            return a < b;
                          });
        cand.resize(spec.shortlist);
        std::sort(cand.begin(), cand.end());
      }
      const std::size_t m = cand.size();
      q.filter_rate = spec.kind == ContextSpec::Kind::kRag
                          ? static_cast<double>(spec.rag_docs) / static_cast<double>(m)
                          : spec.mmr.rate;
      q.filter_rate = std::min(q.filter_rate, 1.0);
      MmrSelection sel;
      const bool full = m == n - lo;
      if (store.quantized) {
        if (full) {
          sel = mmr_select_quantized(q, std::span<const MementoDoc>(store.qdocs[u].data() + lo, m));
        } else {
          std::vector<MementoDoc> sub;
          for (auto i : cand) sub.push_back(store.qdocs[u][i]);
          sel = mmr_select_quantized(q, std::span<const MementoDoc>(sub));
        }
      } else {
        if (full) {
          sel = mmr_select(q, std::span<const MmrCandidate>(store.fdocs[u].data() + lo, m));
        } else {
          std::vector<MmrCandidate> sub;
          for (auto i : cand) sub.push_back(store.fdocs[u][i]);
          sel = mmr_select(q, std::span<const MmrCandidate>(sub));
        }
      }
      sims_total += static_cast<double>(sel.similarity_evaluations);
      for (auto id : sel.selected) chosen.push_back(store.pos[u].at(id));
      std::sort(chosen.begin(), chosen.end());
    }
    docs_total += static_cast<double>(chosen.size());
    out.push_back(mean_vector(store.vecs[u], chosen, store.dim));
  }
  if (stats) {
    const double n = std::max<double>(1.0, static_cast<double>(rows.rows.size()));
    stats->mean_docs = docs_total / n;
    stats->sims_per_query = sims_total / n;
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

RankerConfig ranker_for(const ExperimentSpec& spec, std::uint64_t seed, bool use_context,
                        EmberMode ember = EmberMode::kNone) {
  RankerConfig rc = spec.ranker;
  rc.dim = spec.generator.dim;
  rc.use_context = use_context;
  rc.ember = ember;
  rc.seed = spec.ranker.seed + 1000 * seed;
  return rc;
}

GeneratorConfig generator_for(const ExperimentSpec& spec, std::uint64_t seed, bool control) {
  GeneratorConfig g = spec.generator;
  g.seed = seed;
  if (control) g.cohort_mix = 0.0;
  return g;
}

struct HoldoutContexts {
  std::vector<Vector> train, old, recent;
};

HoldoutContexts contexts_for(const DocStore& store, const Corpus& corpus, const ContextSpec& cs,
                             ContextStats* stats) {
  HoldoutContexts h;
  h.train = compute_contexts(store, corpus.train, cs, nullptr);
  h.old = compute_contexts(store, corpus.holdout_old, cs, nullptr);
  h.recent = compute_contexts(store, corpus.holdout_recent, cs, stats);
  return h;
}

struct Job {
  std::uint64_t seed = 0;
  bool control = false;
};

std::vector<Job> make_jobs(const ExperimentSpec& spec, bool with_control) {
  if (spec.seeds.empty()) throw Error(ErrorCode::kInvalidConfig, "no seeds");
  std::vector<Job> jobs;
  for (auto s : spec.seeds) {
    jobs.push_back({s, false});
    if (with_control) jobs.push_back({s, true});
  }
  return jobs;
}

// Runs jobs on worker threads; results are returned in job order so the
// report does not depend on scheduling.
std::vector<ReportRecord> run_jobs(
    const ExperimentSpec& spec, const std::vector<Job>& jobs,
    const std::function<std::vector<ReportRecord>(const Job&)>& fn) {
  std::size_t threads = spec.threads ? spec.threads : std::thread::hardware_concurrency();
  threads = std::clamp<std::size_t>(threads, 1, jobs.size());
  std::vector<std::vector<ReportRecord>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = fn(jobs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<ReportRecord> out;
  for (auto& r : results) std::move(r.begin(), r.end(), std::back_inserter(out));
  return out;
}

struct Evaluated {
  double ne_recent = 0.0;
  double ne_old = 0.0;
  double train_loss = 0.0;
};

Evaluated train_and_eval(ToyRanker& model, const Corpus& corpus, const HoldoutContexts* ctx) {
  Evaluated e;
  const std::span<const Vector> none;
  e.train_loss = train_pass(model, corpus.train.rows, ctx ? std::span<const Vector>(ctx->train) : none);
  e.ne_recent = normalized_entropy(
      predict_batch(model, corpus.holdout_recent.rows, ctx ? std::span<const Vector>(ctx->recent) : none));
  e.ne_old = normalized_entropy(
      predict_batch(model, corpus.holdout_old.rows, ctx ? std::span<const Vector>(ctx->old) : none));
  return e;
}

ReportRecord make_record(const std::string& experiment, const std::string& variant, const Job& job,
                         const Corpus& corpus) {
  ReportRecord r;
  r.experiment = experiment;
  r.variant = variant;
  r.corpus = job.control ? kControl : kSeasonal;
  r.seed = job.seed;
  r.metrics = {{"oracle_ne_recent", oracle_ne(corpus.holdout_recent)},
               {"oracle_ne_old", oracle_ne(corpus.holdout_old)},
               {"bayes_ne_recent", bayes_ne(corpus.holdout_recent.p_true)},
               {"bayes_ne_old", bayes_ne(corpus.holdout_old.p_true)}};
  return r;
}

void put(ReportRecord& r, const std::string& name, double v) { r.metrics.emplace_back(name, v); }

void put_eval(ReportRecord& r, const Evaluated& e, const std::string& epoch = "pass1") {
  put(r, "ne_recent", e.ne_recent);
  put(r, "ne_old", e.ne_old);
  put(r, "train_loss", e.train_loss);
  r.epochs.push_back({epoch, e.ne_old, e.ne_recent});
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check(ExperimentReport& rep, const std::string& name, bool ok, const std::string& detail) {
  rep.assertions.push_back({name, ok, detail});
}

std::string pm(const std::pair<double, double>& ms) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f+-%.6f", ms.first, ms.second);
  return buf;
}

// Per-seed differences a - b on one corpus; mean and sample std.
std::pair<double, double> paired_diff(const ExperimentReport& rep, const std::string& a,
                                      const std::string& b, const std::string& metric,
                                      const std::string& corpus) {
  std::vector<double> d;
  for (auto seed : rep.spec.seeds) {
    double va = std::numeric_limits<double>::quiet_NaN(), vb = va;
    for (const auto& r : rep.records) {
      if (r.seed != seed || r.corpus != corpus) continue;
      if (r.variant == a) va = r.metric(metric);
      if (r.variant == b) vb = r.metric(metric);
    }
    d.push_back(va - vb);
  }
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = d.size() > 1 ? std::sqrt(ss / static_cast<double>(d.size() - 1)) : 0.0;
  return {mean, sd};
}

// Control discipline: the seasonal effect must vanish within 2 std.
void check_control(ExperimentReport& rep, const std::string& name, const std::string& a,
                   const std::string& b, const std::string& metric) {
  const auto [mean, sd] = paired_diff(rep, a, b, metric, kControl);
  check(rep, name, std::abs(mean) <= 2.0 * sd,
        "control " + a + " - " + b + " = " + pm({mean, sd}) + " (|mean| <= 2 std)");
}

void check_bayes_floor(ExperimentReport& rep) {
  bool ok = true;
  std::string worst;
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& r : rep.records) {
    for (const char* h : {"recent", "old"}) {
      const std::string ne = std::string("ne_") + h;
      const std::string floor = std::string("oracle_ne_") + h;
      bool has = false;
      for (const auto& [k, v] : r.metrics) has |= k == ne;
      if (!has) continue;
      const double m = r.metric(ne) - (r.metric(floor) - 1e-3);
      if (m < margin) {
        margin = m;
        worst = r.variant + "/" + r.corpus + "/seed " + std::to_string(r.seed) + " " + ne;
      }
      ok &= m >= 0.0;
    }
  }
  check(rep, "bayes_floor", ok, "smallest margin above oracle NE - 1e-3: " + fmt(margin) + " at " + worst);
}

}  // namespace

double ReportRecord::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics) {
    if (k == name) return v;
  }
  throw Error(ErrorCode::kInvalidArgument, "no metric " + name + " in record " + variant);
}

bool ExperimentReport::all_passed() const {
  return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.passed; });
}

std::pair<double, double> ExperimentReport::mean_std(const std::string& variant,
                                                     const std::string& metric,
                                                     const std::string& corpus) const {
  std::vector<double> v;
  for (const auto& r : records) {
    if (r.variant == variant && r.corpus == corpus) v.push_back(r.metric(metric));
  }
  if (v.empty()) throw Error(ErrorCode::kInvalidArgument, "no records for " + variant);
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

std::string mmr_label(const MmrSetting& s) {
  return "MMR@" + fmt(s.rate) + " {" + fmt(s.alpha) + ", " + fmt(s.beta) + "}";
}

ExperimentReport run_retention_scaling(const ExperimentSpec& spec) {
  const auto& rs = spec.retention;
  if (rs.budgets_days.empty()) throw Error(ErrorCode::kInvalidConfig, "no retention budgets");
  if (rs.epoch_len_days <= 0) throw Error(ErrorCode::kInvalidConfig, "epoch_len_days must be positive");
  if (rs.context_days == 0) throw Error(ErrorCode::kInvalidConfig, "context_days must be positive");
  ExperimentReport rep;
  rep.experiment = experiment_name(ExperimentKind::kRetentionScaling);
  rep.spec = spec;
  const std::string name = rep.experiment;
  const std::uint32_t n_days = spec.generator.n_days;

  rep.records = run_jobs(spec, make_jobs(spec, rs.negative_control), [&](const Job& job) {
    const auto corpus = generate_corpus(generator_for(spec, job.seed, job.control), false);
    const auto store = build_doc_store(corpus.world, corpus.world.cfg.n_sources, rs.epoch_len_days, true);
    std::vector<ReportRecord> out;
    std::vector<std::uint32_t> budgets = rs.budgets_days;
    budgets.push_back(n_days);
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      const std::uint32_t days = budgets[b];
      const bool full = b + 1 == budgets.size();
      const std::string suffix = full ? "full" : std::to_string(days);
      auto docs_for = [&](std::uint32_t d) {
        const auto len = static_cast<std::uint32_t>(rs.epoch_len_days);
        return static_cast<std::size_t>(corpus.world.cfg.n_sources) * ((d + len - 1) / len);
      };
      // The full-history pair runs RAG at filter rate 1.
      const std::size_t docs = full ? docs_for(days) : std::min(docs_for(days), docs_for(rs.context_days));
      for (const bool rag : {false, true}) {
        const auto t0 = Clock::now();
        ContextSpec cs;
        cs.kind = rag ? ContextSpec::Kind::kRag : ContextSpec::Kind::kLastN;
        cs.lastn_days = days;
        cs.rag_docs = docs;
        cs.mmr = {1.0, rs.alpha, rs.beta};
        ContextStats st;
        const auto ctx = contexts_for(store, corpus, cs, &st);
        ToyRanker model(ranker_for(spec, job.seed, true));
        const auto ev = train_and_eval(model, corpus, &ctx);
        auto rec = make_record(name, (rag ? "RAG-" : "LastN-") + suffix, job, corpus);
        put_eval(rec, ev);
        put(rec, "budget_days", days);
        put(rec, "budget_docs", static_cast<double>(docs));
        put(rec, "mean_context_docs", st.mean_docs);
        put(rec, "sims_per_query", st.sims_per_query);
        rec.wall_clock_s = seconds_since(t0);
        out.push_back(std::move(rec));
      }
    }
    return out;
  });

  for (auto days : rs.budgets_days) {
    const auto s = std::to_string(days);
    const auto l = rep.mean_std("LastN-" + s, "ne_recent");
    const auto r = rep.mean_std("RAG-" + s, "ne_recent");
    check(rep, "rag_not_worse@" + s, r.first <= l.first, "RAG " + pm(r) + " vs LastN " + pm(l));
    if (rs.negative_control) check_control(rep, "control_vanishes@" + s, "RAG-" + s, "LastN-" + s, "ne_recent");
  }
  {
    const auto s = std::to_string(*std::max_element(rs.budgets_days.begin(), rs.budgets_days.end()));
    const auto l = rep.mean_std("LastN-" + s, "ne_recent");
    const auto r = rep.mean_std("RAG-" + s, "ne_recent");
    check(rep, "rag_strict@" + s, r.first < l.first, "RAG " + pm(r) + " vs LastN " + pm(l));
  }
  bool equal = true;
  for (const auto& a : rep.records) {
    if (a.variant != "LastN-full") continue;
    for (const auto& b : rep.records) {
      if (b.variant == "RAG-full" && b.seed == a.seed && b.corpus == a.corpus) {
        equal &= a.metric("ne_recent") == b.metric("ne_recent") && a.metric("ne_old") == b.metric("ne_old");
      }
    }
  }
  check(rep, "full_history_equal", equal, "LastN over the whole corpus vs RAG at filter rate 1.0");
  check_bayes_floor(rep);
  return rep;
}

ExperimentReport run_mmr_grid(const ExperimentSpec& spec) {
  const auto& gs = spec.mmr_grid;
  if (gs.configs.empty()) throw Error(ErrorCode::kInvalidConfig, "empty MMR grid");
  for (const auto& c : gs.configs) {
    RetrievalQuery q;
    q.user_emb = {1.0f};
    q.ad_emb = Embedding{1.0f};
    q.alpha = c.alpha;
    q.beta = c.beta;
    q.filter_rate = c.rate;
    try {
      validate_query(q);
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidConfig, "grid entry " + mmr_label(c) + ": " + e.what());
    }
  }
  ExperimentReport rep;
  rep.experiment = experiment_name(ExperimentKind::kMmrGrid);
  rep.spec = spec;
  const std::string name = rep.experiment;

  rep.records = run_jobs(spec, make_jobs(spec, gs.negative_control), [&](const Job& job) {
    const auto corpus = generate_corpus(generator_for(spec, job.seed, job.control), false);
    const auto store = build_doc_store(corpus.world, corpus.world.cfg.n_sources, gs.epoch_len_days, true);
    std::vector<ReportRecord> out;
    for (const auto& c : gs.configs) {
      const auto t0 = Clock::now();
      ContextSpec cs;
      cs.kind = ContextSpec::Kind::kMmr;
      cs.mmr = c;
      ContextStats st;
      const auto ctx = contexts_for(store, corpus, cs, &st);
      ToyRanker model(ranker_for(spec, job.seed, true));
      const auto ev = train_and_eval(model, corpus, &ctx);
      auto rec = make_record(name, mmr_label(c), job, corpus);
      put_eval(rec, ev);
      put(rec, "filter_rate", c.rate);
      put(rec, "alpha", c.alpha);
      put(rec, "beta", c.beta);
      put(rec, "mean_context_docs", st.mean_docs);
      put(rec, "sims_per_query", st.sims_per_query);
      rec.wall_clock_s = seconds_since(t0);
      out.push_back(std::move(rec));
    }
    // Relative NE against {0, 0} at the same rate.
    for (auto& rec : out) {
      const double rate = rec.metric("filter_rate");
      for (const auto& base : out) {
        if (base.metric("filter_rate") == rate && base.metric("alpha") == 0.0 &&
            base.metric("beta") == 0.0) {
          put(rec, "rel_ne_recent_pct", relative_ne(rec.metric("ne_recent"), base.metric("ne_recent")));
        }
      }
    }
    return out;
  });

  // Directional pattern at the lowest filter rate.
  double low = std::numeric_limits<double>::infinity();
  for (const auto& c : gs.configs) low = std::min(low, c.rate);
  const MmrSetting* zero = nullptr;
  const MmrSetting* high_beta = nullptr;
  const MmrSetting* best = nullptr;
  double best_ne = std::numeric_limits<double>::infinity();
  for (const auto& c : gs.configs) {
    if (c.rate != low) continue;
    if (c.alpha == 0.0 && c.beta == 0.0) zero = &c;
    if (c.beta >= 0.95 - 1e-12 && !high_beta) high_beta = &c;
    if (c.alpha > 0.0 && c.beta > 0.0 && c.beta < 0.95 - 1e-12) {
      const double ne = rep.mean_std(mmr_label(c), "ne_recent").first;
      if (ne < best_ne) {
        best_ne = ne;
        best = &c;
      }
    }
  }
  const std::string at = "@" + fmt(low);
  if (zero && best) {
    const auto b = rep.mean_std(mmr_label(*best), "ne_recent");
    const auto z = rep.mean_std(mmr_label(*zero), "ne_recent");
    check(rep, "mixed_beats_zero" + at, b.first < z.first,
          mmr_label(*best) + " " + pm(b) + " vs " + mmr_label(*zero) + " " + pm(z));
    if (gs.negative_control) {
      check_control(rep, "control_vanishes" + at, mmr_label(*best), mmr_label(*zero), "ne_recent");
    }
  } else {
    check(rep, "mixed_beats_zero" + at, false, "grid lacks a mixed or {0, 0} entry");
  }
  if (high_beta && best) {
    const auto b = rep.mean_std(mmr_label(*best), "ne_recent");
    const auto h = rep.mean_std(mmr_label(*high_beta), "ne_recent");
    check(rep, "high_beta_worse_than_mixed" + at, h.first > b.first,
          mmr_label(*high_beta) + " " + pm(h) + " vs " + mmr_label(*best) + " " + pm(b));
  } else {
    check(rep, "high_beta_worse_than_mixed" + at, false, "grid lacks a beta >= 0.95 entry");
  }
  check_bayes_floor(rep);
  return rep;
}

ExperimentReport run_rep_memento_ablation(const ExperimentSpec& spec) {
  const auto& as = spec.rep_ablation;
  ExperimentReport rep;
  rep.experiment = experiment_name(ExperimentKind::kRepMementoAblation);
  rep.spec = spec;
  const std::string name = rep.experiment;
  const MmrSetting mmr{as.filter_rate, as.alpha, as.beta};

  rep.records = run_jobs(spec, make_jobs(spec, false), [&](const Job& job) {
    const auto corpus = generate_corpus(generator_for(spec, job.seed, job.control), false);
    std::vector<ReportRecord> out;
    {
      const auto t0 = Clock::now();
      ToyRanker model(ranker_for(spec, job.seed, false));
      auto rec = make_record(name, "Baseline", job, corpus);
      put_eval(rec, train_and_eval(model, corpus, nullptr));
      put(rec, "storage_floats_per_user", 0.0);
      put(rec, "sims_per_query", 0.0);
      rec.wall_clock_s = seconds_since(t0);
      out.push_back(std::move(rec));
    }
    ContextSpec cs;
    cs.kind = ContextSpec::Kind::kMmr;
    cs.mmr = mmr;
    cs.shortlist = as.shortlist;
    auto variant = [&](const std::string& label, const DocStore& store, const HoldoutContexts& ctx,
                       const ContextStats& st, EmberMode mode, Clock::time_point t0) {
      ToyRanker model(ranker_for(spec, job.seed, true, mode));
      auto rec = make_record(name, label, job, corpus);
      put_eval(rec, train_and_eval(model, corpus, &ctx));
      put(rec, "storage_floats_per_user", store.floats_per_user);
      put(rec, "sims_per_query", st.sims_per_query);
      put(rec, "mean_context_docs", st.mean_docs);
      rec.wall_clock_s = seconds_since(t0);
      out.push_back(std::move(rec));
    };
    for (const bool lite : {true, false}) {
      const auto t0 = Clock::now();
      const auto store = build_doc_store(
          corpus.world, lite ? as.lite_sources : corpus.world.cfg.n_sources, 1, false);
      ContextStats st;
      const auto ctx = contexts_for(store, corpus, cs, &st);
      variant(lite ? "LITE" : "V1", store, ctx, st, EmberMode::kNone, t0);
    }
    {
      const auto t0 = Clock::now();
      const auto store = build_doc_store(corpus.world, corpus.world.cfg.n_sources, as.epoch_len_days, true);
      ContextStats st;
      const auto ctx = contexts_for(store, corpus, cs, &st);
      variant("V1-TQ", store, ctx, st, EmberMode::kNone, t0);
      variant("V1-TQ-Ember-Affine", store, ctx, st, EmberMode::kAffine, Clock::now());
      variant("V1-TQ-Ember-Quadratic", store, ctx, st, EmberMode::kQuadratic, Clock::now());
      variant("V1-TQ-Ember-Affine+Quadratic", store, ctx, st, EmberMode::kBoth, Clock::now());
    }
    for (auto& rec : out) {
      put(rec, "rel_ne_recent_pct", relative_ne(rec.metric("ne_recent"), out.front().metric("ne_recent")));
    }
    return out;
  });

  const auto v1_storage = rep.mean_std("V1", "storage_floats_per_user");
  const auto tq_storage = rep.mean_std("V1-TQ", "storage_floats_per_user");
  const double ratio = v1_storage.first / tq_storage.first;
  check(rep, "storage_reduction>=10x", ratio >= 10.0,
        "V1 " + fmt(v1_storage.first) + " vs V1-TQ " + fmt(tq_storage.first) + " floats/user, ratio " + fmt(ratio));
  const auto v1 = rep.mean_std("V1", "ne_recent");
  const auto tq = rep.mean_std("V1-TQ", "ne_recent");
  const double degrade = 100.0 * (tq.first - v1.first) / v1.first;
  check(rep, "tq_ne_degradation<=0.05pct", degrade <= 0.05,
        "V1-TQ " + pm(tq) + " vs V1 " + pm(v1) + ", change " + fmt(degrade) + "%");
  for (const char* e : {"V1-TQ-Ember-Affine", "V1-TQ-Ember-Quadratic", "V1-TQ-Ember-Affine+Quadratic"}) {
    const auto m = rep.mean_std(e, "ne_recent");
    check(rep, std::string(e) + "_not_worse", m.first <= tq.first, std::string(e) + " " + pm(m) + " vs V1-TQ " + pm(tq));
  }
  check_bayes_floor(rep);
  return rep;
}

ExperimentReport run_data_memento_grid(const ExperimentSpec& spec) {
  const auto& ds = spec.data_memento;
  if (ds.recent_days == 0 || ds.recent_days >= spec.generator.n_days) {
    throw Error(ErrorCode::kInvalidConfig, "recent_days must be in (0, n_days)");
  }
  ExperimentReport rep;
  rep.experiment = experiment_name(ExperimentKind::kDataMementoGrid);
  rep.spec = spec;
  const std::string name = rep.experiment;
  const std::string pct = fmt(100.0 * ds.replay_fraction);

  struct Variant {
    std::string label;
    ReplayPolicy policy;
    SecondPassStrategy strategy;
  };
  const std::vector<Variant> variants = {
      {"MP", ReplayPolicy::kNone, SecondPassStrategy::kReset},
      {"MP-ES", ReplayPolicy::kNone, SecondPassStrategy::kShrink},
      {"DM-RAND" + pct + "-RS", ReplayPolicy::kRandom, SecondPassStrategy::kReset},
      {"DM-RAND" + pct + "-ES", ReplayPolicy::kRandom, SecondPassStrategy::kShrink},
      {"DM-MMR" + pct + "-RS", ReplayPolicy::kMmr, SecondPassStrategy::kReset},
      {"DM-MMR" + pct + "-ES", ReplayPolicy::kMmr, SecondPassStrategy::kShrink}};

  rep.records = run_jobs(spec, make_jobs(spec, ds.negative_control), [&](const Job& job) {
    auto t0 = Clock::now();
    const auto corpus = generate_corpus(generator_for(spec, job.seed, job.control), false);
    ToyRanker base(ranker_for(spec, job.seed, false));
    std::vector<double> losses;
    const double first_loss = train_pass(base, corpus.train.rows, {}, 1.0, &losses);
    const auto first = eval_forgetting(base, corpus.holdout_old.rows, corpus.holdout_recent.rows);

    std::vector<TrainingRow> rows = corpus.train.rows;
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].loss = losses[i];
    const auto towers = train_two_tower(rows, ds.two_tower);
    embed_rows(rows, towers);

    std::vector<ReportRecord> out;
    auto fp = make_record(name, "FirstPass", job, corpus);
    put(fp, "ne_old", first.ne_old);
    put(fp, "ne_recent", first.ne_recent);
    put(fp, "train_loss", first_loss);
    {
      std::vector<double> scores;
      std::vector<std::uint8_t> labels;
      for (const auto& r : corpus.holdout_recent.rows) {
        scores.push_back(towers.score(r.feat_u, r.feat_a));
        labels.push_back(r.label);
      }
      put(fp, "two_tower_auc", auc(scores, labels));
      ToyRanker noop = base;
      noop.shrink_sparse(1.0);
      bool same = true;
      for (const auto& [before, after] : {std::pair{&base.user_table(), &noop.user_table()},
                                          std::pair{&base.ad_table(), &noop.ad_table()}}) {
        for (const auto& [k, v] : *before) {
          const auto& w = after->at(k);
          same &= std::memcmp(v.data(), w.data(), sizeof(double) * static_cast<std::size_t>(v.size())) == 0;
        }
      }
      put(fp, "shrink_noop_bitwise", same ? 1.0 : 0.0);
    }
    fp.epochs.push_back({"first_pass", first.ne_old, first.ne_recent});
    fp.wall_clock_s = seconds_since(t0);
    out.push_back(fp);

    const std::int64_t cutoff = 24 * static_cast<std::int64_t>(spec.generator.n_days - ds.recent_days);
    const auto split = std::partition_point(rows.begin(), rows.end(),
                                            [&](const TrainingRow& r) { return r.ts_hour < cutoff; });
    const std::span<const TrainingRow> historical(rows.data(), static_cast<std::size_t>(split - rows.begin()));
    const std::span<const TrainingRow> recent(&*split, static_cast<std::size_t>(rows.end() - split));
    const auto hist_chunks = build_chunks(historical, ds.retain_per_hour);
    const auto recent_chunks = build_chunks(recent, std::numeric_limits<std::size_t>::max());
    std::size_t max_chunk = 0;
    for (const auto& c : hist_chunks) max_chunk = std::max(max_chunk, c.rows.size());

    for (const auto& v : variants) {
      t0 = Clock::now();
      ReplayOptions ro;
      ro.policy = v.policy;
      ro.fraction = v.policy == ReplayPolicy::kNone ? 0.0 : ds.replay_fraction;
      ro.alpha = ds.alpha;
      ro.beta = ds.beta;
      ro.seed = job.seed * 7919 + 17;
      const auto replay = select_replay(recent_chunks, hist_chunks, ro);
      SecondPassPlan plan;
      plan.strategy = v.strategy;
      plan.shrink_factor = ds.shrink_factor;
      plan.lr_multiplier = ds.lr_multiplier;
      plan.replay_fraction = ro.fraction;
      plan.replay_policy = v.policy;
      ToyRanker model = base;
      const auto res = second_pass_train(model, recent, replay.rows, plan);
      const auto f = eval_forgetting(model, corpus.holdout_old.rows, corpus.holdout_recent.rows);
      auto rec = make_record(name, v.label, job, corpus);
      put(rec, "ne_old", f.ne_old);
      put(rec, "ne_recent", f.ne_recent);
      put(rec, "train_loss", res.mean_train_loss);
      put(rec, "recent_rows", static_cast<double>(recent.size()));
      put(rec, "replay_budget", static_cast<double>(replay.budget));
      put(rec, "replay_rows", static_cast<double>(replay.rows.size()));
      put(rec, "max_chunk_rows", static_cast<double>(max_chunk));
      rec.epochs.push_back({"first_pass", first.ne_old, first.ne_recent});
      rec.epochs.push_back({"second_pass", f.ne_old, f.ne_recent});
      rec.wall_clock_s = seconds_since(t0);
      out.push_back(std::move(rec));
    }
    for (auto& rec : out) {
      put(rec, "rel_ne_old_vs_mp_pct", relative_ne(rec.metric("ne_old"), out[1].metric("ne_old")));
    }
    return out;
  });

  const std::string mmr_rs = "DM-MMR" + pct + "-RS";
  const std::string rand_rs = "DM-RAND" + pct + "-RS";
  const auto mm = rep.mean_std(mmr_rs, "ne_old");
  const auto rr = rep.mean_std(rand_rs, "ne_old");
  const auto mp = rep.mean_std("MP", "ne_old");
  check(rep, "mmr_rs_beats_rand_rs", mm.first < rr.first, mmr_rs + " " + pm(mm) + " vs " + rand_rs + " " + pm(rr));
  check(rep, "rand_rs_beats_mp", rr.first < mp.first, rand_rs + " " + pm(rr) + " vs MP " + pm(mp));
  for (const auto& [rs, es] : {std::pair<std::string, std::string>{"MP", "MP-ES"},
                               {rand_rs, "DM-RAND" + pct + "-ES"},
                               {mmr_rs, "DM-MMR" + pct + "-ES"}}) {
    const auto a = rep.mean_std(rs, "ne_old");
    const auto b = rep.mean_std(es, "ne_old");
    check(rep, "reset_not_worse:" + rs, a.first <= b.first, rs + " " + pm(a) + " vs " + es + " " + pm(b));
  }
  bool noop = true, budget_ok = true;
  std::string budget_detail = "ok";
  for (const auto& r : rep.records) {
    if (r.variant == "FirstPass") noop &= r.metric("shrink_noop_bitwise") == 1.0;
    if (r.variant.rfind("DM-", 0) != 0) continue;
    const double want = std::ceil(ds.replay_fraction * r.metric("recent_rows") - 1e-9);
    const double got = r.metric("replay_rows");
    const bool ok = r.variant.find("RAND") != std::string::npos
                        ? got == want
                        : got >= want && got <= want + r.metric("max_chunk_rows") - 1.0;
    if (!ok) budget_detail = r.variant + " seed " + std::to_string(r.seed) + ": " + fmt(got) + " vs " + fmt(want);
    budget_ok &= ok;
  }
  check(rep, "shrink_1_noop_bitwise", noop, "Shrink(1.0) leaves every sparse entry bit-identical");
  check(rep, "replay_budget", budget_ok, budget_detail);
  const auto fo = rep.mean_std("FirstPass", "ne_old");
  const auto fr = rep.mean_std("FirstPass", "ne_recent");
  check(rep, "rolling_model_forgets", fo.first > fr.first, "first pass NE_old " + pm(fo) + " vs NE_recent " + pm(fr));
  if (ds.negative_control) check_control(rep, "control_vanishes", mmr_rs, rand_rs, "ne_old");
  check_bayes_floor(rep);
  return rep;
}

ExperimentReport run_experiment(const ExperimentSpec& spec) {
  switch (spec.kind) {
    case ExperimentKind::kRetentionScaling:
      return run_retention_scaling(spec);
    case ExperimentKind::kMmrGrid:
      return run_mmr_grid(spec);
    case ExperimentKind::kRepMementoAblation:
      return run_rep_memento_ablation(spec);
    case ExperimentKind::kDataMementoGrid:
      return run_data_memento_grid(spec);
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown experiment");
}

}  // namespace memento
