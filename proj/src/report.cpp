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

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "memento/harness.hpp"
#include "memento/metrics.hpp"

namespace memento {
namespace {

using nlohmann::json;

std::string num(double v, int digits = 6) {
  if (std::isnan(v)) return "-";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Groups records by (corpus, variant) in first-appearance order.
json summarize(const std::vector<ReportRecord>& records) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<const ReportRecord*>> groups;
  for (const auto& r : records) {
    auto k = std::make_pair(r.corpus, r.variant);
    if (!groups.count(k)) keys.push_back(k);
    groups[k].push_back(&r);
  }
  json out = json::array();
  for (const auto& k : keys) {
    const auto& g = groups[k];
    json mean = json::object(), sd = json::object();
    for (const auto& [name, unused] : g.front()->metrics) {
      (void)unused;
      double s = 0.0;
      for (const auto* r : g) s += r->metric(name);
      const double m = s / static_cast<double>(g.size());
      double ss = 0.0;
      for (const auto* r : g) ss += (r->metric(name) - m) * (r->metric(name) - m);
      mean[name] = m;
      sd[name] = g.size() > 1 ? std::sqrt(ss / static_cast<double>(g.size() - 1)) : 0.0;
    }
    out.push_back({{"corpus", k.first}, {"variant", k.second}, {"n_seeds", g.size()},
                   {"mean", mean}, {"std", sd}});
  }
  return out;
}

double get(const json& row, const char* metric) {
  const auto& m = row.at("mean");
  auto it = m.find(metric);
  return it == m.end() ? std::nan("") : it->get<double>();
}

std::string cell(const json& row, const char* metric, int digits = 6) {
  const double m = get(row, metric);
  if (std::isnan(m)) return "-";
  const auto& s = row.at("std");
  auto it = s.find(metric);
  const double sd = it == s.end() ? 0.0 : it->get<double>();
  if (row.at("n_seeds").get<std::size_t>() < 2) return num(m, digits);
  return num(m, digits) + " ± " + num(sd, digits);
}

void table(std::ostringstream& md, const std::vector<std::string>& head,
           const std::vector<std::vector<std::string>>& rows) {
  md << "|";
  for (const auto& h : head) md << " " << h << " |";
  md << "\n|";
  for (std::size_t i = 0; i < head.size(); ++i) md << (i == 0 ? " --- |" : " ---: |");
  md << "\n";
  for (const auto& r : rows) {
    md << "|";
    for (const auto& c : r) md << " " << c << " |";
    md << "\n";
  }
  md << "\n";
}

}  // namespace

json report_json(const ExperimentReport& report) {
  json records = json::array();
  for (const auto& r : report.records) {
    json metrics = json::object();
    for (const auto& [k, v] : r.metrics) metrics[k] = v;
    json epochs = json::array();
    for (const auto& e : r.epochs) {
      epochs.push_back({{"epoch", e.epoch}, {"ne_old", e.ne_old}, {"ne_recent", e.ne_recent}});
    }
    records.push_back({{"variant", r.variant},
                       {"corpus", r.corpus},
                       {"seed", r.seed},
                       {"metrics", metrics},
                       {"epochs", epochs}});
  }
  json assertions = json::array();
  for (const auto& a : report.assertions) {
    assertions.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
  }
  return {{"experiment", report.experiment},
          {"config", to_json(report.spec)},
          {"metadata",
           {{"format_version", 1},
            {"probability_clamp", kProbabilityClamp},
            {"log_base", "e"},
            {"ne_reference", "constant predictor at the empirical positive rate"}}},
          {"records", records},
          {"summary", summarize(report.records)},
          {"assertions", assertions},
          {"passed", report.all_passed()}};
}

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "experiment,variant,corpus,seed,epoch,ne_old,ne_recent\n";
  char buf[64];
  for (const auto& r : report.records) {
    for (const auto& e : r.epochs) {
      out << report.experiment << ",\"" << r.variant << "\"," << r.corpus << "," << r.seed << "," << e.epoch;
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", e.ne_old, e.ne_recent);
      out << buf;
    }
  }
  return out.str();
}

json timings_json(const ExperimentReport& report) {
  json out = json::array();
  for (const auto& r : report.records) {
    out.push_back({{"variant", r.variant}, {"corpus", r.corpus}, {"seed", r.seed},
                   {"wall_clock_s", r.wall_clock_s}});
  }
  return out;
}

std::string render_markdown(const json& report) {
  std::ostringstream md;
  const auto name = report.at("experiment").get<std::string>();
  md << "# " << name << "\n\n";
  md << "Seeds: " << report.at("config").at("seeds").dump() << ". NE is on the held-out rows; "
     << "values are mean ± std over seeds.\n\n";

  std::vector<std::string> corpora;
  for (const auto& row : report.at("summary")) {
    const auto c = row.at("corpus").get<std::string>();
    if (std::find(corpora.begin(), corpora.end(), c) == corpora.end()) corpora.push_back(c);
  }
  for (const auto& corpus : corpora) {
    std::vector<const json*> rows;
    for (const auto& row : report.at("summary")) {
      if (row.at("corpus") == corpus) rows.push_back(&row);
    }
    md << "## " << corpus << " corpus\n\n";
    std::vector<std::vector<std::string>> body;
    if (name == "RetentionScaling") {
      std::map<std::string, std::pair<const json*, const json*>> by_budget;
      std::vector<std::string> order;
      for (const auto* r : rows) {
        const auto v = r->at("variant").get<std::string>();
        const auto dash = v.find('-');
        const auto budget = v.substr(dash + 1);
        if (!by_budget.count(budget)) order.push_back(budget);
        (v.rfind("RAG", 0) == 0 ? by_budget[budget].second : by_budget[budget].first) = r;
      }
      for (const auto& b : order) {
        const auto [l, g] = by_budget[b];
        if (!l || !g) continue;
        body.push_back({b, num(get(*l, "budget_docs"), 0), cell(*l, "ne_recent"), cell(*g, "ne_recent"),
                        num(relative_ne(get(*g, "ne_recent"), get(*l, "ne_recent")), 3)});
      }
      table(md, {"Retention (days)", "Docs", "LastN NE", "RAG NE", "RAG vs LastN (%)"}, body);
    } else if (name == "MmrGrid") {
      for (const auto* r : rows) {
        body.push_back({r->at("variant").get<std::string>(), cell(*r, "ne_recent"),
                        num(get(*r, "rel_ne_recent_pct"), 3), num(get(*r, "sims_per_query"), 0)});
      }
      table(md, {"Config", "NE", "Rel. NE (%)", "Sims/query"}, body);
    } else if (name == "RepMementoAblation") {
      for (const auto* r : rows) {
        body.push_back({r->at("variant").get<std::string>(), cell(*r, "ne_recent"),
                        num(get(*r, "rel_ne_recent_pct"), 3), num(get(*r, "storage_floats_per_user"), 0),
                        num(get(*r, "sims_per_query"), 0)});
      }
      table(md, {"Variant", "NE", "Rel. NE (%)", "Storage (floats/user)", "Sims/query"}, body);
    } else if (name == "DataMementoGrid") {
      for (const auto* r : rows) {
        body.push_back({r->at("variant").get<std::string>(), cell(*r, "ne_old"), cell(*r, "ne_recent"),
                        num(get(*r, "rel_ne_old_vs_mp_pct"), 3), num(get(*r, "replay_rows"), 0)});
      }
      table(md, {"Variant", "NE old", "NE recent", "NE old vs MP (%)", "Replay rows"}, body);
    } else {
      for (const auto* r : rows) {
        body.push_back({r->at("variant").get<std::string>(), cell(*r, "ne_recent"), cell(*r, "ne_old")});
      }
      table(md, {"Variant", "NE recent", "NE old"}, body);
    }
  }
  md << "## Checks\n\n";
  for (const auto& a : report.at("assertions")) {
    md << "- " << (a.at("passed").get<bool>() ? "PASS" : "FAIL") << " `" << a.at("name").get<std::string>()
       << "`: " << a.at("detail").get<std::string>() << "\n";
  }
  return md.str();
}

}  // namespace memento
