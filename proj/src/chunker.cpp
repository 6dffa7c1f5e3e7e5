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

#include "memento/chunker.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"

namespace memento {
namespace {

constexpr char kDocBlockMagic[4] = {'M', 'M', 'T', 'D'};
constexpr std::uint32_t kDocBlockVersion = 1;

std::int64_t epoch_index(std::int64_t day, std::int32_t len) {
  return day / len;  // day >= 0 is validated by the caller
}

// Indices of `dailies` sorted by (user, source id, day).
std::vector<std::size_t> sorted_order(std::span<const DailyEmbedding> dailies) {
  std::vector<std::size_t> order(dailies.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = dailies[a];
    const auto& y = dailies[b];
    if (x.user_id != y.user_id) return x.user_id < y.user_id;
    if (x.source.id != y.source.id) return x.source.id < y.source.id;
    return x.day < y.day;
  });
  return order;
}

void validate_dailies(std::span<const DailyEmbedding> dailies,
                      std::span<const std::size_t> order) {
  std::map<std::uint32_t, std::size_t> source_dim;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& d = dailies[order[i]];
    if (d.day < 0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "negative day for user " + d.user_id);
    }
    check_finite(d.embedding);
    auto [it, inserted] = source_dim.emplace(d.source.id, d.embedding.size());
    if (!inserted) {
      check_same_dim(it->second, d.embedding.size(), "source dimension");
    }
    if (i > 0) {
      const auto& p = dailies[order[i - 1]];
      if (p.user_id == d.user_id && p.source.id == d.source.id &&
          p.day == d.day) {
        throw Error(ErrorCode::kDuplicateKey,
                    "duplicate (user, source, day) for user " + d.user_id);
      }
    }
  }
}

}  // namespace

DocId make_doc_id(std::string_view user_id, std::uint32_t source_id,
                  std::int64_t epoch_start_day) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  const auto len = static_cast<std::uint64_t>(user_id.size());
  mix(&len, sizeof(len));
  mix(user_id.data(), user_id.size());
  mix(&source_id, sizeof(source_id));
  mix(&epoch_start_day, sizeof(epoch_start_day));
  return h;
}

std::vector<MementoDoc> chunk(std::span<const DailyEmbedding> dailies,
                              std::int32_t epoch_len_days,
                              Aggregation aggregation) {
  if (epoch_len_days < 1) {
    throw Error(ErrorCode::kInvalidArgument, "epoch_len_days must be >= 1");
  }
  if (aggregation != Aggregation::kMean) {
    throw Error(ErrorCode::kInvalidArgument, "unsupported aggregation");
  }
  const auto order = sorted_order(dailies);
  validate_dailies(dailies, order);

  std::vector<MementoDoc> docs;
  std::size_t i = 0;
  while (i < order.size()) {
    const auto& first = dailies[order[i]];
    const std::int64_t epoch = epoch_index(first.day, epoch_len_days);
    std::size_t j = i;
    std::vector<double> sum(first.embedding.size(), 0.0);
    while (j < order.size()) {
      const auto& d = dailies[order[j]];
      if (d.user_id != first.user_id || d.source.id != first.source.id ||
          epoch_index(d.day, epoch_len_days) != epoch) {
        break;
      }
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += d.embedding[k];
      ++j;
    }
    const auto count = static_cast<std::int32_t>(j - i);
    Embedding mean(sum.size());
    for (std::size_t k = 0; k < sum.size(); ++k) {
      mean[k] = static_cast<float>(sum[k] / count);
    }
    MementoDoc doc;
    doc.user_id = first.user_id;
    doc.source = first.source;
    doc.source.dimension = static_cast<std::uint32_t>(mean.size());
    doc.epoch_start_day = epoch * epoch_len_days;
    doc.epoch_len_days = epoch_len_days;
    doc.day_count = count;
    doc.embedding = quantize_norm_int8(mean);
    doc.doc_id = make_doc_id(doc.user_id, doc.source.id, doc.epoch_start_day);
    docs.push_back(std::move(doc));
    i = j;
  }
  return docs;
}

std::vector<SourceSimilarity> chunk_similarity_report(
    std::span<const DailyEmbedding> dailies, std::int32_t epoch_len_days) {
  if (epoch_len_days < 1) {
    throw Error(ErrorCode::kInvalidArgument, "epoch_len_days must be >= 1");
  }
  const auto order = sorted_order(dailies);
  validate_dailies(dailies, order);

  struct Acc {
    SourceId source;
    std::size_t days = 0;
    double adjacent_sum = 0.0;
    std::size_t adjacent = 0;
    double within_sum = 0.0;
    std::size_t within = 0;
  };
  std::map<std::uint32_t, Acc> acc;

  std::size_t i = 0;
  while (i < order.size()) {
    const auto& head = dailies[order[i]];
    std::size_t j = i;
    while (j < order.size() && dailies[order[j]].user_id == head.user_id &&
           dailies[order[j]].source.id == head.source.id) {
      ++j;
    }
    auto& a = acc[head.source.id];
    a.source = head.source;
    a.days += j - i;
    for (std::size_t p = i; p < j; ++p) {
      const auto& x = dailies[order[p]];
      for (std::size_t q = p + 1; q < j; ++q) {
        const auto& y = dailies[order[q]];
        if (epoch_index(y.day, epoch_len_days) !=
            epoch_index(x.day, epoch_len_days)) {
          break;  // sorted by day, so later days are in later windows
        }
        a.within_sum += cosine_similarity(x.embedding, y.embedding);
        ++a.within;
      }
      if (p + 1 < j && dailies[order[p + 1]].day == x.day + 1) {
        a.adjacent_sum +=
            cosine_similarity(x.embedding, dailies[order[p + 1]].embedding);
        ++a.adjacent;
      }
    }
    i = j;
  }

  std::vector<SourceSimilarity> report;
  for (const auto& [id, a] : acc) {
    if (a.days < 2 || a.adjacent == 0) {
      throw Error(ErrorCode::kInsufficientData,
                  "source " + std::to_string(id) +
                      " has fewer than two adjacent days");
    }
    SourceSimilarity s;
    s.source = a.source;
    s.adjacent_day_mean = a.adjacent_sum / static_cast<double>(a.adjacent);
    s.adjacent_pairs = a.adjacent;
    if (a.within > 0) {
      s.within_epoch_mean = a.within_sum / static_cast<double>(a.within);
    }
    s.within_epoch_pairs = a.within;
    report.push_back(std::move(s));
  }
  return report;
}

DailyEmbedding parse_daily_json(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("bad daily JSON: ") + e.what());
  }
  try {
    DailyEmbedding d;
    d.user_id = j.at("user").get<std::string>();
    d.source.id = j.at("source").get<std::uint32_t>();
    d.source.name = "source-" + std::to_string(d.source.id);
    d.day = j.at("day").get<std::int64_t>();
    if (d.day < 0) throw Error(ErrorCode::kInvalidArgument, "negative day");
    d.embedding = j.at("emb").get<Embedding>();
    d.source.dimension = static_cast<std::uint32_t>(d.embedding.size());
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("bad daily record: ") + e.what());
  }
}

std::vector<DailyEmbedding> read_dailies_jsonl(std::istream& in) {
  std::vector<DailyEmbedding> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_daily_json(line));
  }
  return out;
}

void write_dailies_jsonl(std::ostream& out,
                         std::span<const DailyEmbedding> dailies) {
  for (const auto& d : dailies) {
    nlohmann::json j = {{"user", d.user_id},
                        {"source", d.source.id},
                        {"day", d.day},
                        {"emb", d.embedding}};
    out << j.dump() << '\n';
  }
}

std::string encode_doc_block(std::span<const MementoDoc> docs) {
  detail::ByteWriter w;
  w.put_bytes(std::string_view(kDocBlockMagic, 4));
  w.put(kDocBlockVersion);
  w.put(static_cast<std::uint64_t>(docs.size()));
  for (const auto& d : docs) {
    w.put(d.doc_id);
    w.put_string(d.user_id);
    w.put(d.source.id);
    w.put_string(d.source.name);
    w.put(static_cast<std::uint32_t>(d.embedding.dim()));
    w.put(d.epoch_start_day);
    w.put(d.epoch_len_days);
    w.put(d.day_count);
    w.put(d.embedding.norm);
    w.put_span<std::int8_t>(d.embedding.codes);
  }
  w.seal();
  return w.take();
}

std::vector<MementoDoc> decode_doc_block(std::string_view bytes) {
  detail::ByteReader r(detail::verify_crc_trailer(bytes));
  if (r.get_bytes(4) != std::string_view(kDocBlockMagic, 4)) {
    throw Error(ErrorCode::kCorruptFile, "bad doc block magic");
  }
  if (r.get<std::uint32_t>() != kDocBlockVersion) {
    throw Error(ErrorCode::kCorruptFile, "unsupported doc block version");
  }
  const auto n = r.get<std::uint64_t>();
  std::vector<MementoDoc> docs;
  docs.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 20)));
  for (std::uint64_t i = 0; i < n; ++i) {
    MementoDoc d;
    d.doc_id = r.get<DocId>();
    d.user_id = r.get_string();
    d.source.id = r.get<std::uint32_t>();
    d.source.name = r.get_string();
    const auto dim = r.get<std::uint32_t>();
    d.source.dimension = dim;
    d.epoch_start_day = r.get<std::int64_t>();
    d.epoch_len_days = r.get<std::int32_t>();
    d.day_count = r.get<std::int32_t>();
    d.embedding.norm = r.get<float>();
    d.embedding.codes.resize(dim);
    r.get_span<std::int8_t>(d.embedding.codes);
    docs.push_back(std::move(d));
  }
  if (r.remaining() != 0) {
    throw Error(ErrorCode::kCorruptFile, "trailing bytes in doc block");
  }
  return docs;
}

}  // namespace memento
