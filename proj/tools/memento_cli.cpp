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

// Command-line front end.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 a check or
// invariant failed, 3 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "memento/chunker.hpp"
#include "memento/harness.hpp"
#include "memento/rehearsal.hpp"
#include "memento/vindex.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace memento;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kCheckFailed = 2;
constexpr int kIoError = 3;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

json read_json(const std::string& path) {
  try {
    return json::parse(slurp(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path + ": " + e.what());
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

Embedding parse_vector(const std::string& text) {
  try {
    return json::parse(text).get<Embedding>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("query must be a JSON array of numbers: ") + e.what());
  }
}

int cmd_generate(const std::string& config, const std::string& out_dir, bool no_dailies) {
  const auto cfg = parse_generator(read_json(config));
  const auto corpus = generate_corpus(cfg, !no_dailies);
  make_dir(out_dir);
  const fs::path dir(out_dir);
  if (!no_dailies) {
    std::ofstream out(dir / "dailies.jsonl");
    if (!out) throw Error(ErrorCode::kIo, "cannot write dailies.jsonl");
    write_dailies_jsonl(out, corpus.dailies);
  }
  const std::pair<const char*, const LabeledRows*> files[] = {
      {"rows.jsonl", &corpus.train},
      {"holdout_old.jsonl", &corpus.holdout_old},
      {"holdout_recent.jsonl", &corpus.holdout_recent}};
  for (const auto& [name, rows] : files) {
    std::ofstream out(dir / name);
    if (!out) throw Error(ErrorCode::kIo, std::string("cannot write ") + name);
    write_rows_jsonl(out, rows->rows);
  }
  json meta = {{"generator", to_json(cfg)},
               {"train_rows", corpus.train.rows.size()},
               {"holdout_old_rows", corpus.holdout_old.rows.size()},
               {"holdout_recent_rows", corpus.holdout_recent.rows.size()},
               {"dailies", corpus.dailies.size()}};
  if (!corpus.holdout_old.rows.empty()) meta["bayes_ne_old"] = bayes_ne(corpus.holdout_old.p_true);
  if (!corpus.holdout_recent.rows.empty()) meta["bayes_ne_recent"] = bayes_ne(corpus.holdout_recent.p_true);
  spill(dir / "corpus.json", meta.dump(2) + "\n");
  std::cout << "wrote " << corpus.train.rows.size() << " training rows to " << out_dir << "\n";
  return kOk;
}

int cmd_chunk(const std::string& in_path, const std::string& out_path, int epoch_days,
              const std::string& report_path) {
  std::ifstream in(in_path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + in_path);
  const auto dailies = read_dailies_jsonl(in);
  const auto docs = chunk(dailies, epoch_days);
  spill(out_path, encode_doc_block(docs));
  if (!report_path.empty()) {
    json rep = json::array();
    for (const auto& s : chunk_similarity_report(dailies, epoch_days)) {
      json row = {{"source", s.source.id},
                  {"adjacent_day_mean", s.adjacent_day_mean},
                  {"adjacent_pairs", s.adjacent_pairs},
                  {"within_epoch_pairs", s.within_epoch_pairs}};
      row["within_epoch_mean"] = s.within_epoch_mean ? json(*s.within_epoch_mean) : json(nullptr);
      rep.push_back(row);
    }
    spill(report_path, rep.dump(2) + "\n");
  }
  std::cout << "chunked " << dailies.size() << " dailies into " << docs.size() << " docs\n";
  return kOk;
}

int cmd_index_build(const std::string& docs_path, const std::string& out_path, const BuildOptions& opts) {
  const auto docs = decode_doc_block(slurp(docs_path));
  const auto snap = build(docs, opts);
  snap.save(out_path);
  std::cout << "indexed " << snap.size() << " docs in " << snap.n_clusters() << " clusters, version "
            << snap.version() << ", checksum " << snap.checksum() << "\n";
  return kOk;
}

struct QueryArgs {
  std::string index;
  std::string query;
  std::string ad_query;
  std::size_t k = 10;
  std::size_t probe = 0;
  bool exact = false;
  bool mmr = false;
  double alpha = 0.0;
  double beta = 0.0;
  double rate = 0.5;
  std::size_t shortlist = 100;
};

int cmd_index_query(const QueryArgs& a) {
  const auto snap = IndexSnapshot::load(a.index);
  const auto q = parse_vector(a.query);
  json out;
  if (a.mmr) {
    RetrievalQuery rq;
    rq.user_emb = q;
    if (!a.ad_query.empty()) rq.ad_emb = parse_vector(a.ad_query);
    rq.alpha = a.alpha;
    rq.beta = a.beta;
    rq.filter_rate = a.rate;
    const auto sel = retrieve_with_mmr(snap, rq, a.shortlist, a.probe);
    out = {{"selected", sel.selected}, {"scores", sel.scores},
           {"similarity_evaluations", sel.similarity_evaluations}};
  } else {
    const auto hits = a.exact ? flat_scan(snap, q, a.k)
                              : knn(snap, q, a.k, a.probe ? a.probe : snap.default_probe());
    out = json::array();
    for (const auto& h : hits) out.push_back({{"doc_id", h.doc_id}, {"similarity", h.similarity}});
  }
  std::cout << out.dump() << "\n";
  return kOk;
}

int cmd_experiment(const std::string& name, const std::string& config, const std::string& out_dir) {
  const auto kind = parse_experiment_kind(name);
  const auto spec = parse_spec(read_json(config), kind);
  const auto report = run_experiment(spec);
  make_dir(out_dir);
  const fs::path dir(out_dir);
  const auto j = report_json(report);
  spill(dir / "report.json", j.dump(2) + "\n");
  spill(dir / "ne.csv", report_csv(report));
  spill(dir / "timings.json", timings_json(report).dump(2) + "\n");
  spill(dir / "report.md", render_markdown(j));
  for (const auto& a : report.assertions) {
    std::cout << (a.passed ? "PASS " : "FAIL ") << a.name << ": " << a.detail << "\n";
  }
  return report.all_passed() ? kOk : kCheckFailed;
}

int cmd_report(const std::string& in_path, const std::string& out_path) {
  json j;
  try {
    j = json::parse(slurp(in_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, in_path + ": " + e.what());
  }
  std::string md;
  try {
    md = render_markdown(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, in_path + " is not an experiment report: " + e.what());
  }
  if (out_path.empty()) {
    std::cout << md;
  } else {
    spill(out_path, md);
  }
  return kOk;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo:
    case ErrorCode::kCorruptFile:
      return kIoError;
    case ErrorCode::kInvalidConfig:
      return kUsage;
    default:
      return kCheckFailed;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"History retrieval, modulation and rehearsal toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write a synthetic corpus as JSONL");
  std::string gen_config, gen_out;
  bool no_dailies = false;
  gen->add_option("--config", gen_config, "JSON config (generator section or whole file)")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_flag("--no-dailies", no_dailies, "Skip the daily embedding file");

  auto* chk = app.add_subcommand("chunk", "Chunk daily embeddings into quantized docs");
  std::string chunk_in, chunk_out, chunk_report;
  int epoch_days = 7;
  chk->add_option("--in", chunk_in, "Dailies JSONL")->required();
  chk->add_option("--out", chunk_out, "Doc block output")->required();
  chk->add_option("--epoch-days", epoch_days, "Epoch length in days")->check(CLI::PositiveNumber);
  chk->add_option("--similarity-report", chunk_report, "Write per-source cosine statistics (JSON)");

  auto* idx = app.add_subcommand("index", "Build or query an IVF snapshot");
  idx->require_subcommand(1);
  auto* ib = idx->add_subcommand("build", "Build a snapshot from a doc block");
  std::string ib_docs, ib_out;
  BuildOptions bopts;
  ib->add_option("--docs", ib_docs, "Doc block")->required();
  ib->add_option("--out", ib_out, "Snapshot output")->required();
  ib->add_option("--clusters", bopts.n_clusters, "Number of clusters (0: ceil(sqrt(n)))");
  ib->add_option("--iters", bopts.kmeans_iters, "k-means iterations");
  ib->add_option("--seed", bopts.seed, "k-means seed");
  ib->add_option("--version", bopts.version, "Snapshot version");

  auto* iq = idx->add_subcommand("query", "Query a snapshot");
  QueryArgs qa;
  iq->add_option("--index", qa.index, "Snapshot file")->required();
  iq->add_option("--query", qa.query, "User-side query as a JSON array")->required();
  iq->add_option("--k", qa.k, "Neighbours to return")->check(CLI::PositiveNumber);
  iq->add_option("--probe", qa.probe, "Clusters to probe (0: default)");
  iq->add_flag("--exact", qa.exact, "Exact scan instead of IVF");
  iq->add_flag("--mmr", qa.mmr, "Shortlist then MMR instead of plain kNN");
  iq->add_option("--ad-query", qa.ad_query, "Ad-side query as a JSON array");
  iq->add_option("--alpha", qa.alpha, "MMR user-side weight");
  iq->add_option("--beta", qa.beta, "MMR ad-side weight");
  iq->add_option("--rate", qa.rate, "MMR filter rate");
  iq->add_option("--shortlist", qa.shortlist, "Shortlist size before MMR");

  auto* exp = app.add_subcommand("experiment", "Run an experiment");
  exp->require_subcommand(1);
  auto* run = exp->add_subcommand("run", "Run one named experiment");
  std::string exp_name, exp_config, exp_out;
  run->add_option("name", exp_name,
                  "RetentionScaling | MmrGrid | RepMementoAblation | DataMementoGrid")
      ->required();
  run->add_option("--config", exp_config, "JSON config")->required();
  run->add_option("--out", exp_out, "Output directory")->required();

  auto* rep = app.add_subcommand("report", "Render a report JSON as Markdown");
  std::string rep_in, rep_out;
  rep->add_option("--in", rep_in, "report.json")->required();
  rep->add_option("--out", rep_out, "Markdown output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) return cmd_generate(gen_config, gen_out, no_dailies);
    if (*chk) return cmd_chunk(chunk_in, chunk_out, epoch_days, chunk_report);
    if (*ib) return cmd_index_build(ib_docs, ib_out, bopts);
    if (*iq) return cmd_index_query(qa);
    if (*run) return cmd_experiment(exp_name, exp_config, exp_out);
    if (*rep) return cmd_report(rep_in, rep_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kUsage;
}
