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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "memento/chunker.hpp"
#include "memento/core.hpp"
#include "memento/harness.hpp"
#include "memento/metrics.hpp"
#include "memento/mmr.hpp"
#include "memento/vindex.hpp"

namespace py = pybind11;
using namespace memento;

namespace {

RetrievalQuery make_query(Embedding user, std::optional<Embedding> ad, double alpha,
                          double beta, double filter_rate) {
  RetrievalQuery q;
  q.user_emb = std::move(user);
  q.ad_emb = std::move(ad);
  q.alpha = alpha;
  q.beta = beta;
  q.filter_rate = filter_rate;
  return q;
}

// (doc_id, user_side[, ad_side]) tuples or MmrCandidate objects.
std::vector<MmrCandidate> to_candidates(const py::list& items) {
  std::vector<MmrCandidate> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    if (py::isinstance<MmrCandidate>(it)) {
      out.push_back(it.cast<MmrCandidate>());
      continue;
    }
    auto t = it.cast<py::tuple>();
    if (t.size() != 2 && t.size() != 3) {
      throw Error(ErrorCode::kInvalidArgument, "candidate tuples are (id, user[, ad])");
    }
    MmrCandidate c;
    c.doc_id = t[0].cast<DocId>();
    c.user_side = t[1].cast<Embedding>();
    if (t.size() == 3 && !t[2].is_none()) c.ad_side = t[2].cast<Embedding>();
    out.push_back(std::move(c));
  }
  return out;
}

py::dict selection_dict(const MmrSelection& s) {
  py::dict d;
  d["selected"] = s.selected;
  d["scores"] = s.scores;
  d["similarity_evaluations"] = s.similarity_evaluations;
  return d;
}

std::vector<std::pair<DocId, double>> hits(const KnnResult& r) {
  std::vector<std::pair<DocId, double>> out;
  out.reserve(r.size());
  for (const auto& h : r) out.emplace_back(h.doc_id, h.similarity);
  return out;
}

}  // namespace

PYBIND11_MODULE(_memento, m) {
  m.doc() = "Python bindings for the memento C++ core";

  // leaked on purpose: lives as long as the interpreter
  static PyObject* err_type = PyErr_NewException("memento._memento.MementoError",
                                                 PyExc_RuntimeError, nullptr);
  m.add_object("MementoError", py::reinterpret_borrow<py::object>(err_type));
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(err_type)(e.what());
      inst.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(err_type, inst.ptr());
    }
  });

  // core
  m.def("cosine_similarity",
        [](const Embedding& a, const Embedding& b) { return cosine_similarity(a, b); });
  py::class_<QuantizedEmbedding>(m, "QuantizedEmbedding")
      .def_readonly("norm", &QuantizedEmbedding::norm)
      .def_readonly("codes", &QuantizedEmbedding::codes)
      .def("dim", &QuantizedEmbedding::dim)
      .def("dequantize", [](const QuantizedEmbedding& q) { return dequantize(q); })
      .def("__eq__", [](const QuantizedEmbedding& a, const QuantizedEmbedding& b) { return a == b; });
  m.def("quantize", [](const Embedding& v) { return quantize_norm_int8(v); });
  m.def("quantized_cosine", [](const QuantizedEmbedding& a, const QuantizedEmbedding& b) {
    return quantized_cosine(a, b);
  });

  // chunker
  py::class_<MementoDoc>(m, "MementoDoc")
      .def_readonly("doc_id", &MementoDoc::doc_id)
      .def_readonly("user_id", &MementoDoc::user_id)
      .def_property_readonly("source", [](const MementoDoc& d) { return d.source.id; })
      .def_readonly("epoch_start_day", &MementoDoc::epoch_start_day)
      .def_readonly("epoch_len_days", &MementoDoc::epoch_len_days)
      .def_readonly("day_count", &MementoDoc::day_count)
      .def_readonly("embedding", &MementoDoc::embedding);
  m.def(
      "chunk",
      [](const std::vector<std::tuple<std::string, std::uint32_t, std::int64_t, Embedding>>& rows,
         std::int32_t epoch_len_days) {
        std::vector<DailyEmbedding> dailies;
        dailies.reserve(rows.size());
        for (const auto& [user, source, day, emb] : rows) {
          DailyEmbedding d;
          d.user_id = user;
          d.source.id = source;
          d.source.name = "source-" + std::to_string(source);
          d.source.dimension = static_cast<std::uint32_t>(emb.size());
          d.day = day;
          d.embedding = emb;
          dailies.push_back(std::move(d));
        }
        return chunk(dailies, epoch_len_days);
      },
      py::arg("dailies"), py::arg("epoch_len_days"),
      "dailies: iterable of (user, source, day, embedding)");
  m.def("encode_docs", [](const std::vector<MementoDoc>& docs) {
    return py::bytes(encode_doc_block(docs));
  });
  m.def("decode_docs", [](const py::bytes& b) {
    return decode_doc_block(std::string_view(b));
  });

  // mmr
  py::class_<MmrCandidate>(m, "MmrCandidate")
      .def(py::init([](DocId id, Embedding user, std::optional<Embedding> ad) {
             return MmrCandidate{id, std::move(user), std::move(ad)};
           }),
           py::arg("doc_id"), py::arg("user_side"), py::arg("ad_side") = std::nullopt)
      .def_readonly("doc_id", &MmrCandidate::doc_id);
  m.def(
      "mmr_select",
      [](const Embedding& user, std::optional<Embedding> ad, const py::list& cands,
         double alpha, double beta, double filter_rate) {
        const auto c = to_candidates(cands);
        return selection_dict(mmr_select(make_query(user, std::move(ad), alpha, beta, filter_rate), c));
      },
      py::arg("user_emb"), py::arg("ad_emb"), py::arg("candidates"), py::arg("alpha"),
      py::arg("beta"), py::arg("filter_rate"));
  m.def(
      "mmr_oracle",
      [](const Embedding& user, std::optional<Embedding> ad, const py::list& cands,
         double alpha, double beta, double filter_rate) {
        const auto c = to_candidates(cands);
        return selection_dict(mmr_oracle(make_query(user, std::move(ad), alpha, beta, filter_rate), c));
      },
      py::arg("user_emb"), py::arg("ad_emb"), py::arg("candidates"), py::arg("alpha"),
      py::arg("beta"), py::arg("filter_rate"));

  // vindex
  py::class_<IndexSnapshot, std::shared_ptr<IndexSnapshot>>(m, "Index")
      .def_static(
          "build",
          [](const std::vector<MementoDoc>& docs, std::size_t n_clusters, std::uint32_t iters,
             std::uint64_t seed, std::uint64_t version) {
            BuildOptions o;
            o.n_clusters = n_clusters;
            o.kmeans_iters = iters;
            o.seed = seed;
            o.version = version;
            return std::make_shared<IndexSnapshot>(build(docs, o));
          },
          py::arg("docs"), py::arg("n_clusters") = 0, py::arg("kmeans_iters") = 10,
          py::arg("seed") = 0, py::arg("version") = 1)
      .def_static("load",
                  [](const std::string& path) {
                    return std::make_shared<IndexSnapshot>(IndexSnapshot::load(path));
                  })
      .def("save", &IndexSnapshot::save)
      .def("__len__", &IndexSnapshot::size)
      .def_property_readonly("dim", &IndexSnapshot::dim)
      .def_property_readonly("n_clusters", &IndexSnapshot::n_clusters)
      .def_property_readonly("version", &IndexSnapshot::version)
      .def_property_readonly("checksum", &IndexSnapshot::checksum)
      .def(
          "knn",
          [](const IndexSnapshot& s, const Embedding& q, std::size_t k, std::size_t probe) {
            py::gil_scoped_release nogil;
            return hits(knn(s, q, k, probe == 0 ? s.default_probe() : probe));
          },
          py::arg("query"), py::arg("k"), py::arg("n_probe") = 0)
      .def(
          "flat_scan",
          [](const IndexSnapshot& s, const Embedding& q, std::size_t k) {
            py::gil_scoped_release nogil;
            return hits(flat_scan(s, q, k));
          },
          py::arg("query"), py::arg("k"))
      .def(
          "retrieve_with_mmr",
          [](const IndexSnapshot& s, const Embedding& user, std::optional<Embedding> ad,
             double alpha, double beta, double filter_rate, std::size_t candidate_k,
             std::size_t probe) {
            const auto q = make_query(user, std::move(ad), alpha, beta, filter_rate);
            MmrSelection sel;
            {
              py::gil_scoped_release nogil;
              sel = retrieve_with_mmr(s, q, candidate_k, probe);
            }
            return selection_dict(sel);
          },
          py::arg("user_emb"), py::arg("ad_emb") = std::nullopt, py::arg("alpha") = 0.0,
          py::arg("beta") = 0.0, py::arg("filter_rate") = 1.0, py::arg("candidate_k") = 64,
          py::arg("n_probe") = 0);

  // metrics
  m.def(
      "normalized_entropy",
      [](const std::vector<double>& p, const std::vector<std::uint8_t>& labels) {
        if (p.size() != labels.size()) {
          throw Error(ErrorCode::kDimensionMismatch, "probabilities vs labels");
        }
        PredictionBatch b;
        b.probabilities = p;
        b.labels = labels;
        return normalized_entropy(b);
      },
      py::arg("probabilities"), py::arg("labels"));

  // harness: config and report travel as JSON text
  m.def(
      "run_experiment",
      [](const std::string& name, const std::string& config_json) {
        const auto kind = parse_experiment_kind(name);
        nlohmann::json cfg;
        try {
          cfg = nlohmann::json::parse(config_json.empty() ? "{}" : config_json);
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorCode::kInvalidConfig, e.what());
        }
        const auto spec = parse_spec(cfg, kind);
        ExperimentReport rep;
        {
          py::gil_scoped_release nogil;
          rep = run_experiment(spec);
        }
        return report_json(rep).dump(2);
      },
      py::arg("name"), py::arg("config_json") = "{}");
  m.def("render_markdown", [](const std::string& report_json_text) {
    return render_markdown(nlohmann::json::parse(report_json_text));
  });
}
