// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/graph_encoder.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace psg {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

MissingLabelError::MissingLabelError(std::vector<std::string> labels)
    : std::runtime_error("embedding table has no vector for: " + join(labels)), labels_(std::move(labels)) {}

EmbeddingProvider EmbeddingProvider::synthetic(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
  EmbeddingProvider p;
  p.dim_ = dim;
  p.synthetic_ = true;
  p.seed_ = seed;
  return p;
}

EmbeddingProvider EmbeddingProvider::from_table(std::size_t dim, std::map<std::string, std::vector<double>> table) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
  EmbeddingProvider p;
  p.dim_ = dim;
  p.synthetic_ = false;
  for (auto& [label, vec] : table) {
    if (vec.size() != dim) {
      throw std::invalid_argument("embedding for '" + label + "' has length " + std::to_string(vec.size()) +
                                  ", expected " + std::to_string(dim));
    }
    p.table_.emplace(label, std::move(vec));
  }
  return p;
}

EmbeddingProvider EmbeddingProvider::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("embedding file: missing header");
  std::istringstream header(line);
  std::string magic, version;
  std::size_t count = 0, dim = 0;
  if (!(header >> magic >> version >> count >> dim) || magic != "emb" || version != "v1") {
    throw std::runtime_error("embedding file: bad header '" + line + "'");
  }
  std::map<std::string, std::vector<double>> table;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("embedding file: truncated after " + std::to_string(i) + " rows");
    std::istringstream row(line);
    std::string label;
    row >> label;
    std::vector<double> vec(dim);
    for (auto& v : vec) {
      if (!(row >> v)) throw std::runtime_error("embedding file: short row for '" + label + "'");
    }
    table[label] = std::move(vec);
  }
  return from_table(dim, std::move(table));
}

EmbeddingProvider EmbeddingProvider::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open embedding file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool EmbeddingProvider::contains(std::string_view label) const {
  return synthetic_ || table_.find(label) != table_.end();
}

std::vector<double> EmbeddingProvider::embed(std::string_view label) const {
  if (!synthetic_) {
    auto it = table_.find(label);
    if (it == table_.end()) throw MissingLabelError({std::string(label)});
    return it->second;
  }
  std::mt19937_64 rng(fnv1a(label, seed_));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim_);
  double norm = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::string EmbeddingProvider::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "emb v1 " << table_.size() << ' ' << dim_ << '\n';
  for (const auto& [label, vec] : table_) {
    os << label;
    for (double v : vec) os << ' ' << v;
    os << '\n';
  }
  return os.str();
}

VectorizedSceneGraph vectorize(const SceneGraph& graph, const EmbeddingProvider& provider) {
  std::set<std::string> missing;
  const bool use_features = graph.modality() == Modality::visual && graph.feature_dim().has_value();
  for (const auto& e : graph.entities()) {
    if (!use_features && !provider.contains(e.label)) missing.insert(e.label);
  }
  for (const auto& r : graph.relations()) {
    if (!provider.contains(r.label)) missing.insert(r.label);
  }
  if (!missing.empty()) throw MissingLabelError({missing.begin(), missing.end()});

  const std::size_t p = graph.num_entities(), q = graph.num_relations();
  const std::size_t width = use_features ? *graph.feature_dim() : provider.dim();
  std::vector<double> ent;
  ent.reserve(p * width);
  for (const auto& e : graph.entities()) {
    const std::vector<double> row = use_features ? *e.feature : provider.embed(e.label);
    ent.insert(ent.end(), row.begin(), row.end());
  }
  std::vector<double> rel;
  rel.reserve(q * provider.dim());
  for (const auto& r : graph.relations()) {
    const auto row = provider.embed(r.label);
    rel.insert(rel.end(), row.begin(), row.end());
  }
  VectorizedSceneGraph out;
  out.modality = graph.modality();
  out.entities = Tensor::from({p, width}, std::move(ent));
  out.relations = Tensor::from({q, provider.dim()}, std::move(rel));
  out.pairs = graph.index_pairs();
  return out;
}

VectorizedSceneGraph merge_graphs(std::span<const VectorizedSceneGraph* const> graphs, std::size_t entity_width,
                                  std::size_t relation_width) {
  VectorizedSceneGraph out;
  std::vector<Tensor> ents, rels;
  int offset = 0;
  for (const auto* g : graphs) {
    if (g->entities.rows()) {
      if (g->entities.cols() != entity_width) throw ShapeError("merge_graphs", g->entities.shape(), Shape{0, entity_width});
      ents.push_back(g->entities);
    }
    if (g->relations.rows()) {
      if (g->relations.cols() != relation_width) {
        throw ShapeError("merge_graphs", g->relations.shape(), Shape{0, relation_width});
      }
      rels.push_back(g->relations);
    }
    for (const auto& [s, o] : g->pairs) out.pairs.push_back({s + offset, o + offset});
    offset += static_cast<int>(g->entities.rows());
  }
  if (!graphs.empty()) out.modality = graphs.front()->modality;
  out.entities = ents.empty() ? Tensor::zeros({0, entity_width}) : ents.size() == 1 ? ents[0] : concat(ents, 0);
  out.relations = rels.empty() ? Tensor::zeros({0, relation_width}) : rels.size() == 1 ? rels[0] : concat(rels, 0);
  return out;
}

ProjectedGraph project(const VectorizedSceneGraph& graph, const GcnParams& params) {
  ProjectedGraph out;
  out.entities = add_bias(matmul(graph.entities, params.entity_weight), params.entity_bias);
  out.relations = add_bias(matmul(graph.relations, params.relation_weight), params.relation_bias);
  for (const auto& [w, b] : params.entity_hidden) out.entities = add_bias(matmul(relu(out.entities), w), b);
  for (const auto& [w, b] : params.relation_hidden) out.relations = add_bias(matmul(relu(out.relations), w), b);
  out.pairs = graph.pairs;
  return out;
}

Tensor gcn_forward(const ProjectedGraph& graph, const GcnParams& params) {
  const std::size_t p = graph.entities.rows(), q = graph.pairs.size();
  const std::size_t d = params.latent_dim();
  if (graph.entities.cols() != d || graph.relations.cols() != d || graph.relations.rows() != q) {
    throw ShapeError("gcn_forward", graph.entities.shape(), graph.relations.shape());
  }
  if (p == 0) return Tensor::zeros({0, d});

  std::vector<double> deg(p, 1.0);
  for (const auto& [s, o] : graph.pairs) {
    if (s < 0 || o < 0 || static_cast<std::size_t>(s) >= p || static_cast<std::size_t>(o) >= p) {
      throw ShapeError("gcn_forward", graph.entities.shape(), Shape{static_cast<std::size_t>(std::max(s, o))});
    }
    deg[static_cast<std::size_t>(s)] += 1.0;
    if (o != s) deg[static_cast<std::size_t>(o)] += 1.0;
  }

  // Constant mixing matrices: out = Me·(E W1) + Mr·(R W2) + deg ⊗ b.
  std::vector<double> me(p * p, 0.0), mr(p * q, 0.0);
  for (std::size_t j = 0; j < p; ++j) me[j * p + j] += 1.0 / deg[j];
  for (std::size_t r = 0; r < q; ++r) {
    const auto s = static_cast<std::size_t>(graph.pairs[r][0]);
    const auto o = static_cast<std::size_t>(graph.pairs[r][1]);
    const double w = 1.0 / std::sqrt(deg[s] * deg[o]);
    me[s * p + o] += w;
    mr[s * q + r] += w;
    if (o != s) {
      me[o * p + s] += w;
      mr[o * q + r] += w;
    }
  }

  const Tensor mix_e = Tensor::from({p, p}, std::move(me));
  Tensor out = matmul(mix_e, matmul(graph.entities, params.w1));
  if (q > 0) {
    const Tensor mix_r = Tensor::from({p, q}, std::move(mr));
    out = add(out, matmul(mix_r, matmul(graph.relations, params.w2)));
  }
  const Tensor counts = Tensor::from({p, 1}, deg);
  return add(out, matmul(counts, reshape(params.bias, {1, d})));
}

}  // namespace psg
