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

#include "memento/ember.hpp"

#include <cmath>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"

namespace memento::ember {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double silu(double z) { return z * sigmoid(z); }
double silu_grad(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev,
                std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = n(rng);
  }
  return m;
}

struct BlockCache {
  Vector x;       // block input
  double rms = 1.0;
  Vector normed;  // x / rms
  Vector z;       // pre-activation
};

struct TrunkCache {
  std::vector<BlockCache> blocks;
  Vector out;
};

TrunkCache run_trunk(const AffineTrunk& t, const Vector& c) {
  check_same_dim(static_cast<std::size_t>(c.size()), t.context_dim(),
                 "affine context");
  TrunkCache cache;
  Vector x = t.w_in * c + t.b_in;
  for (const auto& b : t.blocks) {
    BlockCache bc;
    bc.x = x;
    bc.rms = std::sqrt(x.squaredNorm() / static_cast<double>(x.size()) + kRmsEpsilon);
    bc.normed = x / bc.rms;
    bc.z = b.weight * b.norm_gain.cwiseProduct(bc.normed) + b.bias;
    x = x + bc.z.unaryExpr(&silu);
    cache.blocks.push_back(std::move(bc));
  }
  cache.out = std::move(x);
  return cache;
}

const AffineHead& head_at(const AffineModulator& m, std::size_t feature) {
  if (feature >= m.heads.size()) {
    throw Error(ErrorCode::kInvalidArgument, "no affine head for feature");
  }
  return m.heads[feature];
}

void put_matrix(std::vector<NamedTensor>& out, const std::string& name,
                const Matrix& m) {
  NamedTensor t{name, {static_cast<std::size_t>(m.rows()),
                       static_cast<std::size_t>(m.cols())}, {}};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.values.push_back(m(i, j));
  }
  out.push_back(std::move(t));
}

void put_vector(std::vector<NamedTensor>& out, const std::string& name,
                const Vector& v) {
  out.push_back({name, {static_cast<std::size_t>(v.size())},
                 std::vector<double>(v.data(), v.data() + v.size())});
}

using TensorMap = std::map<std::string, const NamedTensor*>;

TensorMap index_tensors(std::span<const NamedTensor> tensors) {
  TensorMap map;
  for (const auto& t : tensors) map[t.name] = &t;
  return map;
}

const NamedTensor& find(const TensorMap& map, const std::string& name,
                        std::size_t rank) {
  auto it = map.find(name);
  if (it == map.end()) {
    throw Error(ErrorCode::kCorruptFile, "missing tensor " + name);
  }
  if (it->second->shape.size() != rank) {
    throw Error(ErrorCode::kCorruptFile, "bad rank for tensor " + name);
  }
  return *it->second;
}

Matrix get_matrix(const TensorMap& map, const std::string& name) {
  const auto& t = find(map, name, 2);
  Matrix m(t.shape[0], t.shape[1]);
  for (std::size_t i = 0; i < t.shape[0]; ++i) {
    for (std::size_t j = 0; j < t.shape[1]; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          t.values[i * t.shape[1] + j];
    }
  }
  return m;
}

Vector get_vector(const TensorMap& map, const std::string& name) {
  const auto& t = find(map, name, 1);
  return Eigen::Map<const Vector>(t.values.data(),
                                  static_cast<Eigen::Index>(t.values.size()));
}

}  // namespace

Vector to_vector(std::span<const float> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

Embedding to_embedding(const Vector& v) {
  Embedding out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
  }
  return out;
}

EmberContext pool_context(std::span<const QuantizedEmbedding> docs,
                          std::size_t dim) {
  std::vector<double> sum(dim, 0.0);
  for (const auto& d : docs) {
    check_same_dim(d.dim(), dim, "pooled doc");
    const auto v = dequantize(d);
    for (std::size_t i = 0; i < dim; ++i) sum[i] += v[i];
  }
  EmberContext ctx{Embedding(dim, 0.0f)};
  if (docs.empty()) return ctx;
  for (std::size_t i = 0; i < dim; ++i) {
    ctx.c[i] = static_cast<float>(sum[i] / static_cast<double>(docs.size()));
  }
  return ctx;
}

AffineModulator make_affine(const AffineConfig& config) {
  if (config.context_dim == 0 || config.hidden == 0 || config.feature_dims.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty affine configuration");
  }
  std::mt19937_64 rng(config.seed);
  AffineModulator m;
  const auto h = config.hidden;
  m.trunk.w_in = gaussian(h, config.context_dim,
                          1.0 / std::sqrt(static_cast<double>(config.context_dim)), rng);
  m.trunk.b_in = Vector::Zero(static_cast<Eigen::Index>(h));
  for (std::size_t l = 0; l < config.blocks; ++l) {
    m.trunk.blocks.push_back({Vector::Ones(static_cast<Eigen::Index>(h)),
                              gaussian(h, h, 1.0 / std::sqrt(static_cast<double>(h)), rng),
                              Vector::Zero(static_cast<Eigen::Index>(h))});
  }
  for (std::size_t d : config.feature_dims) {
    AffineHead head;
    head.w_out = Matrix::Zero(static_cast<Eigen::Index>(2 * d), static_cast<Eigen::Index>(h));
    head.b_out = Vector::Zero(static_cast<Eigen::Index>(2 * d));
    head.b_out.head(static_cast<Eigen::Index>(d)).setOnes();
    m.heads.push_back(std::move(head));
  }
  return m;
}

AffineModulator zeros_like(const AffineModulator& m) {
  AffineModulator z = m;
  z.trunk.w_in.setZero();
  z.trunk.b_in.setZero();
  for (auto& b : z.trunk.blocks) {
    b.norm_gain.setZero();
    b.weight.setZero();
    b.bias.setZero();
  }
  for (auto& h : z.heads) {
    h.w_out.setZero();
    h.b_out.setZero();
  }
  return z;
}

void axpy(AffineModulator& p, double scale, const AffineModulator& g) {
  p.trunk.w_in += scale * g.trunk.w_in;
  p.trunk.b_in += scale * g.trunk.b_in;
  for (std::size_t l = 0; l < p.trunk.blocks.size(); ++l) {
    p.trunk.blocks[l].norm_gain += scale * g.trunk.blocks[l].norm_gain;
    p.trunk.blocks[l].weight += scale * g.trunk.blocks[l].weight;
    p.trunk.blocks[l].bias += scale * g.trunk.blocks[l].bias;
  }
  for (std::size_t f = 0; f < p.heads.size(); ++f) {
    p.heads[f].w_out += scale * g.heads[f].w_out;
    p.heads[f].b_out += scale * g.heads[f].b_out;
  }
}

Modulation affine_parameters(const AffineModulator& m, std::size_t feature,
                             const Vector& c) {
  const auto& head = head_at(m, feature);
  const auto trunk = run_trunk(m.trunk, c);
  const Vector out = head.w_out * trunk.out + head.b_out;
  const auto d = static_cast<Eigen::Index>(head.feature_dim());
  return {out.head(d), out.tail(d)};
}

Vector affine_forward(const AffineModulator& m, std::size_t feature,
                      const Vector& c, const Vector& e) {
  const auto& head = head_at(m, feature);
  check_same_dim(static_cast<std::size_t>(e.size()), head.feature_dim(),
                 "affine feature");
  const auto mod = affine_parameters(m, feature, c);
  return mod.gamma.cwiseProduct(e) + mod.shift;
}

Embedding affine_forward(const AffineModulator& m, std::size_t feature,
                         const EmberContext& c, const Embedding& e) {
  check_finite(c.c);
  check_finite(e);
  return to_embedding(affine_forward(m, feature, to_vector(c.c), to_vector(e)));
}

AffineGrads affine_backward(const AffineModulator& m, std::size_t feature,
                            const Vector& c, const Vector& e,
                            const Vector& upstream) {
  const auto& head = head_at(m, feature);
  const auto d = static_cast<Eigen::Index>(head.feature_dim());
  check_same_dim(static_cast<std::size_t>(e.size()), head.feature_dim(),
                 "affine feature");
  check_same_dim(static_cast<std::size_t>(upstream.size()), head.feature_dim(),
                 "affine upstream");
  const auto trunk = run_trunk(m.trunk, c);
  const Vector out = head.w_out * trunk.out + head.b_out;

  AffineGrads g{zeros_like(m), Vector(), Vector()};
  g.input = upstream.cwiseProduct(out.head(d));
  Vector d_out(2 * d);
  d_out.head(d) = upstream.cwiseProduct(e);
  d_out.tail(d) = upstream;
  auto& gh = g.params.heads[feature];
  gh.w_out = d_out * trunk.out.transpose();
  gh.b_out = d_out;

  Vector dx = head.w_out.transpose() * d_out;
  for (std::size_t l = m.trunk.blocks.size(); l-- > 0;) {
    const auto& b = m.trunk.blocks[l];
    const auto& bc = trunk.blocks[l];
    auto& gb = g.params.trunk.blocks[l];
    const Vector dz = dx.cwiseProduct(bc.z.unaryExpr(&silu_grad));
    const Vector u = b.norm_gain.cwiseProduct(bc.normed);
    gb.weight = dz * u.transpose();
    gb.bias = dz;
    const Vector du = b.weight.transpose() * dz;
    gb.norm_gain = du.cwiseProduct(bc.normed);
    const Vector dn = du.cwiseProduct(b.norm_gain);
    const double h = static_cast<double>(bc.x.size());
    // d(x/r)/dx with r = sqrt(mean(x^2) + eps).
    const Vector d_norm =
        dn / bc.rms - bc.x * (dn.dot(bc.x) / (h * bc.rms * bc.rms * bc.rms));
    dx = dx + d_norm;
  }
  g.params.trunk.w_in = dx * c.transpose();
  g.params.trunk.b_in = dx;
  g.context = m.trunk.w_in.transpose() * dx;
  return g;
}

QnnLayer make_qnn(std::size_t width, std::size_t heads) {
  if (heads == 0 || width == 0 || width % heads != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "QNN width must be a positive multiple of the head count");
  }
  QnnLayer layer;
  layer.heads = heads;
  layer.gate = Matrix::Zero(static_cast<Eigen::Index>(width),
                            static_cast<Eigen::Index>(width));
  return layer;
}

QnnLayer make_qnn_random(std::size_t width, std::size_t heads, double scale,
                         std::uint64_t seed) {
  QnnLayer layer = make_qnn(width, heads);
  std::mt19937_64 rng(seed);
  layer.gate = gaussian(width, width, scale, rng);
  return layer;
}

Vector qnn_forward(const QnnLayer& layer, const Vector& x, std::size_t* multiplies) {
  const std::size_t k = layer.width();
  check_same_dim(static_cast<std::size_t>(x.size()), k, "QNN input");
  const auto w = static_cast<Eigen::Index>(layer.head_width());
  Vector out(x.size());
  for (std::size_t h = 0; h < layer.heads; ++h) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(h) * w;
    const Vector gate = (layer.gate.middleRows(r0, w) * x).cwiseMax(0.0);
    out.segment(r0, w) = x.segment(r0, w).cwiseProduct(gate) + x.segment(r0, w);
    if (multiplies) *multiplies += static_cast<std::size_t>(w) * k;
  }
  return out;
}

QnnGrads qnn_backward(const QnnLayer& layer, const Vector& x, const Vector& upstream) {
  const std::size_t k = layer.width();
  check_same_dim(static_cast<std::size_t>(x.size()), k, "QNN input");
  check_same_dim(static_cast<std::size_t>(upstream.size()), k, "QNN upstream");
  const Vector z = layer.gate * x;
  Vector active(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) active(i) = z(i) > 0.0 ? 1.0 : 0.0;
  const Vector relu = z.cwiseMax(0.0);
  // d(gate pre-activation) = upstream * x * relu'(z).
  const Vector dz = upstream.cwiseProduct(x).cwiseProduct(active);
  QnnGrads g;
  g.gate = dz * x.transpose();
  g.input = upstream.cwiseProduct(relu + Vector::Ones(z.size())) +
            layer.gate.transpose() * dz;
  return g;
}

HeadCost head_cost(const QnnLayer& layer) {
  const std::size_t k = layer.width();
  return {layer.heads * layer.head_width() * k, layer.heads * k * k};
}

std::vector<NamedTensor> to_tensors(const AffineModulator& m) {
  std::vector<NamedTensor> out;
  put_matrix(out, "affine.trunk.w_in", m.trunk.w_in);
  put_vector(out, "affine.trunk.b_in", m.trunk.b_in);
  for (std::size_t l = 0; l < m.trunk.blocks.size(); ++l) {
    const auto p = "affine.trunk.block" + std::to_string(l) + ".";
    put_vector(out, p + "norm_gain", m.trunk.blocks[l].norm_gain);
    put_matrix(out, p + "weight", m.trunk.blocks[l].weight);
    put_vector(out, p + "bias", m.trunk.blocks[l].bias);
  }
  for (std::size_t f = 0; f < m.heads.size(); ++f) {
    const auto p = "affine.head" + std::to_string(f) + ".";
    put_matrix(out, p + "w_out", m.heads[f].w_out);
    put_vector(out, p + "b_out", m.heads[f].b_out);
  }
  return out;
}

AffineModulator affine_from_tensors(std::span<const NamedTensor> tensors) {
  const auto map = index_tensors(tensors);
  AffineModulator m;
  m.trunk.w_in = get_matrix(map, "affine.trunk.w_in");
  m.trunk.b_in = get_vector(map, "affine.trunk.b_in");
  for (std::size_t l = 0;; ++l) {
    const auto p = "affine.trunk.block" + std::to_string(l) + ".";
    if (!map.contains(p + "weight")) break;
    m.trunk.blocks.push_back({get_vector(map, p + "norm_gain"),
                              get_matrix(map, p + "weight"),
                              get_vector(map, p + "bias")});
  }
  for (std::size_t f = 0;; ++f) {
    const auto p = "affine.head" + std::to_string(f) + ".";
    if (!map.contains(p + "w_out")) break;
    m.heads.push_back({get_matrix(map, p + "w_out"), get_vector(map, p + "b_out")});
  }
  return m;
}

std::vector<NamedTensor> to_tensors(const QnnLayer& layer, const std::string& prefix) {
  std::vector<NamedTensor> out;
  put_matrix(out, prefix + ".gate", layer.gate);
  out.push_back({prefix + ".heads", {1}, {static_cast<double>(layer.heads)}});
  return out;
}

QnnLayer qnn_from_tensors(std::span<const NamedTensor> tensors,
                          const std::string& prefix) {
  const auto map = index_tensors(tensors);
  const auto heads = get_vector(map, prefix + ".heads");
  QnnLayer layer = make_qnn(static_cast<std::size_t>(get_matrix(map, prefix + ".gate").cols()),
                            static_cast<std::size_t>(heads(0)));
  layer.gate = get_matrix(map, prefix + ".gate");
  return layer;
}

void save_checkpoint(const std::string& data_path, const std::string& manifest_path,
                     std::span<const NamedTensor> tensors) {
  detail::ByteWriter w;
  nlohmann::json manifest;
  manifest["dtype"] = "f32";
  manifest["byte_order"] = "little";
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) {
    const auto offset = w.bytes().size();
    for (double v : t.values) w.put(static_cast<float>(v));
    manifest["tensors"].push_back(
        {{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
  }
  detail::write_file(data_path, w.bytes());
  detail::write_file(manifest_path, manifest.dump(2) + "\n");
}

std::vector<NamedTensor> load_checkpoint(const std::string& data_path,
                                         const std::string& manifest_path) {
  const auto data = detail::read_file(data_path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, std::string("bad manifest: ") + e.what());
  }
  std::vector<NamedTensor> out;
  try {
    for (const auto& entry : manifest.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      std::size_t count = 1;
      for (auto s : t.shape) count *= s;
      if (offset > data.size() || (data.size() - offset) / sizeof(float) < count) {
        throw Error(ErrorCode::kCorruptFile, "tensor " + t.name + " out of range");
      }
      detail::ByteReader r(std::string_view(data).substr(offset, count * sizeof(float)));
      t.values.resize(count);
      for (auto& v : t.values) v = r.get<float>();
      out.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, std::string("bad manifest: ") + e.what());
  }
  return out;
}

}  // namespace memento::ember
