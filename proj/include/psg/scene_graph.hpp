// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scene-graph domain model and the JSON interchange format shared with the
// extraction tooling. One graph per document, or a newline-delimited stream.

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace psg {

enum class Modality { visual, language };

std::string_view to_string(Modality m);

struct Entity {
  int id = 0;
  std::string label;
  std::optional<double> confidence;
  std::optional<std::vector<double>> feature;

  bool operator==(const Entity&) const = default;
};

struct Relation {
  int id = 0;
  std::string label;
  int subject = 0;
  int object = 0;
  std::optional<double> confidence;

  bool operator==(const Relation&) const = default;
};

/// Thrown for malformed or inconsistent interchange documents. `path()` is a
/// JSON-pointer style location such as "/relations/0/object".
class SceneGraphError : public std::runtime_error {
 public:
  SceneGraphError(std::string path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

inline constexpr int kSceneGraphVersion = 1;

/// Entities and relations of one image or sentence. Entities are stored in id
/// order, ids dense in [0, p); the same holds for relations.
class SceneGraph {
 public:
  SceneGraph() = default;
  SceneGraph(Modality modality, std::vector<Entity> entities, std::vector<Relation> relations);

  Modality modality() const noexcept { return modality_; }
  const std::vector<Entity>& entities() const noexcept { return entities_; }
  const std::vector<Relation>& relations() const noexcept { return relations_; }
  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }

  /// The (subject, object) pair of every relation, in relation-id order.
  std::vector<std::array<int, 2>> index_pairs() const;

  /// Ids of the relations joining `a` and `b` in either direction.
  std::vector<int> relations_between(int a, int b) const;

  /// Length of the entity feature vectors, if entities carry features.
  std::optional<std::size_t> feature_dim() const;

  /// Re-checks every invariant; throws SceneGraphError.
  void validate() const;

  bool operator==(const SceneGraph&) const = default;

 private:
  Modality modality_ = Modality::language;
  std::vector<Entity> entities_;
  std::vector<Relation> relations_;
};

SceneGraph parse_scene_graph(std::string_view document);
std::vector<SceneGraph> parse_scene_graph_stream(std::string_view ndjson);
std::string serialize_scene_graph(const SceneGraph& graph);

/// Reads a .json file (one graph) or a .jsonl file (a stream).
std::vector<SceneGraph> load_scene_graphs(const std::filesystem::path& file);

/// All graphs under `dir`, files visited in sorted path order.
std::vector<SceneGraph> load_scene_graph_dir(const std::filesystem::path& dir);

struct EntityStats {
  double mean_entities = 0.0;
  double mean_reliable = 0.0;
  std::size_t graphs = 0;
  double threshold = 0.0;
};

/// Accumulates entity counts one graph at a time.
class EntityStatsAccumulator {
 public:
  explicit EntityStatsAccumulator(double threshold);
  void add(const SceneGraph& graph);
  /// Throws std::invalid_argument when nothing was added.
  EntityStats result() const;

 private:
  double threshold_;
  std::size_t graphs_ = 0;
  std::size_t entities_ = 0;
  std::size_t reliable_ = 0;
};

/// An entity is reliable when its confidence is at least `threshold`. Entities without
/// a confidence are reliable in language graphs and unreliable in visual graphs.
EntityStats entity_stats(std::span<const SceneGraph> graphs, double threshold);
EntityStats language_entity_stats(std::span<const SceneGraph> graphs);

}  // namespace psg
