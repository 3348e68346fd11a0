// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scene-graph vectorization and one round of degree-normalized relational
// message passing.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "psg/scene_graph.hpp"
#include "psg/tensor.hpp"

namespace psg {

class MissingLabelError : public std::runtime_error {
 public:
  explicit MissingLabelError(std::vector<std::string> labels);
  const std::vector<std::string>& labels() const noexcept { return labels_; }

 private:
  std::vector<std::string> labels_;
};

/// Maps entity and relation labels to d_c-dimensional vectors, either from a
/// table (`emb v1` file) or as seeded pseudo-random unit vectors.
class EmbeddingProvider {
 public:
  static EmbeddingProvider synthetic(std::size_t dim, std::uint64_t seed);
  static EmbeddingProvider from_table(std::size_t dim, std::map<std::string, std::vector<double>> table);
  /// Reads `emb v1 <count> <dim>` followed by `<label> <dim floats>` lines.
  static EmbeddingProvider load(const std::filesystem::path& file);
  static EmbeddingProvider parse(std::string_view text);

  std::size_t dim() const noexcept { return dim_; }
  bool is_synthetic() const noexcept { return synthetic_; }
  std::uint64_t seed() const noexcept { return seed_; }
  bool contains(std::string_view label) const;

  /// Throws MissingLabelError for labels absent from a table.
  std::vector<double> embed(std::string_view label) const;

  std::string serialize() const;

 private:
  std::size_t dim_ = 0;
  bool synthetic_ = true;
  std::uint64_t seed_ = 0;
  std::map<std::string, std::vector<double>, std::less<>> table_;
};

/// Continuous form of a scene graph. Visual entities with detector features
/// keep them verbatim; everything else is a label embedding.
struct VectorizedSceneGraph {
  Modality modality = Modality::language;
  Tensor entities;   // p × (d_v or d_c)
  Tensor relations;  // q × d_c
  std::vector<std::array<int, 2>> pairs;

  std::size_t num_entities() const { return entities.rows(); }
  std::size_t num_relations() const { return relations.rows(); }
};

VectorizedSceneGraph vectorize(const SceneGraph& graph, const EmbeddingProvider& provider);

/// Disjoint union: entity rows and relation rows stacked in input order, pairs
/// offset accordingly. Message passing on the union equals per-graph message passing.
VectorizedSceneGraph merge_graphs(std::span<const VectorizedSceneGraph* const> graphs, std::size_t entity_width,
                                  std::size_t relation_width);

struct GcnParams {
  Tensor entity_weight;    // in × d
  Tensor entity_bias;      // d
  Tensor relation_weight;  // d_c × d
  Tensor relation_bias;    // d
  Tensor w1;               // d × d, neighbor entity term
  Tensor w2;               // d × d, incident relation term
  Tensor bias;             // d
  /// Further d × d layers, each applied as relu(x)·W + b after the first map.
  std::vector<std::array<Tensor, 2>> entity_hidden;
  std::vector<std::array<Tensor, 2>> relation_hidden;

  std::size_t latent_dim() const { return w1.rows(); }
};

/// Entity and relation vectors in the shared latent space.
struct ProjectedGraph {
  Tensor entities;   // p × d
  Tensor relations;  // q × d
  std::vector<std::array<int, 2>> pairs;
};

ProjectedGraph project(const VectorizedSceneGraph& graph, const GcnParams& params);

/// out_j = Σ_{k ∈ N(j) ∪ {j}} [ (e_k W1 + r_jk W2) / √(deg k · deg j) + b ]. Every
/// relation is one summand for each endpoint; the self term has no relation part;
/// deg counts incident relations plus the self loop.
Tensor gcn_forward(const ProjectedGraph& graph, const GcnParams& params);

inline Tensor encode_graph(const VectorizedSceneGraph& graph, const GcnParams& params) {
  return gcn_forward(project(graph, params), params);
}

}  // namespace psg
