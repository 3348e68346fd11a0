// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/scene_graph.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace psg {

using json = nlohmann::json;

namespace {

std::string at(const std::string& base, std::size_t i) { return base + "/" + std::to_string(i); }

const json& require(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SceneGraphError(path + "/" + key, "missing field");
  return *it;
}

int require_int(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_number_integer()) throw SceneGraphError(path + "/" + key, "expected integer");
  return v.get<int>();
}

std::string require_string(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_string()) throw SceneGraphError(path + "/" + key, "expected string");
  return v.get<std::string>();
}

std::optional<double> optional_confidence(const json& obj, const std::string& path) {
  auto it = obj.find("confidence");
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw SceneGraphError(path + "/confidence", "expected number");
  return it->get<double>();
}

SceneGraph from_json(const json& doc) {
  if (!doc.is_object()) throw SceneGraphError("", "document is not an object");
  const int version = require_int(doc, "version", "");
  if (version != kSceneGraphVersion) {
    throw SceneGraphError("/version", "unsupported version " + std::to_string(version));
  }
  const std::string modality_name = require_string(doc, "modality", "");
  Modality modality;
  if (modality_name == "visual") {
    modality = Modality::visual;
  } else if (modality_name == "language") {
    modality = Modality::language;
  } else {
    throw SceneGraphError("/modality", "unknown modality '" + modality_name + "'");
  }

  const json& ents = require(doc, "entities", "");
  if (!ents.is_array()) throw SceneGraphError("/entities", "expected array");
  std::vector<Entity> entities;
  for (std::size_t i = 0; i < ents.size(); ++i) {
    const std::string path = at("/entities", i);
    const json& e = ents[i];
    if (!e.is_object()) throw SceneGraphError(path, "expected object");
    Entity entity;
    entity.id = require_int(e, "id", path);
    entity.label = require_string(e, "label", path);
    entity.confidence = optional_confidence(e, path);
    if (auto f = e.find("feature"); f != e.end() && !f->is_null()) {
      if (!f->is_array()) throw SceneGraphError(path + "/feature", "expected array");
      std::vector<double> feature;
      feature.reserve(f->size());
      for (std::size_t k = 0; k < f->size(); ++k) {
        if (!(*f)[k].is_number()) throw SceneGraphError(at(path + "/feature", k), "expected number");
        feature.push_back((*f)[k].get<double>());
      }
      entity.feature = std::move(feature);
    }
    entities.push_back(std::move(entity));
  }

  const json& rels = require(doc, "relations", "");
  if (!rels.is_array()) throw SceneGraphError("/relations", "expected array");
  std::vector<Relation> relations;
  for (std::size_t i = 0; i < rels.size(); ++i) {
    const std::string path = at("/relations", i);
    const json& r = rels[i];
    if (!r.is_object()) throw SceneGraphError(path, "expected object");
    Relation rel;
    rel.id = require_int(r, "id", path);
    rel.label = require_string(r, "label", path);
    rel.subject = require_int(r, "subject", path);
    rel.object = require_int(r, "object", path);
    rel.confidence = optional_confidence(r, path);
    relations.push_back(std::move(rel));
  }
  return SceneGraph(modality, std::move(entities), std::move(relations));
}

json to_json(const SceneGraph& g) {
  json doc;
  doc["version"] = kSceneGraphVersion;
  doc["modality"] = std::string(to_string(g.modality()));
  json ents = json::array();
  for (const auto& e : g.entities()) {
    json j{{"id", e.id}, {"label", e.label}};
    if (e.confidence) j["confidence"] = *e.confidence;
    if (e.feature) j["feature"] = *e.feature;
    ents.push_back(std::move(j));
  }
  json rels = json::array();
  for (const auto& r : g.relations()) {
    json j{{"id", r.id}, {"label", r.label}, {"subject", r.subject}, {"object", r.object}};
    if (r.confidence) j["confidence"] = *r.confidence;
    rels.push_back(std::move(j));
  }
  doc["entities"] = std::move(ents);
  doc["relations"] = std::move(rels);
  return doc;
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw SceneGraphError(file.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view to_string(Modality m) { return m == Modality::visual ? "visual" : "language"; }

SceneGraph::SceneGraph(Modality modality, std::vector<Entity> entities, std::vector<Relation> relations)
    : modality_(modality), entities_(std::move(entities)), relations_(std::move(relations)) {
  // Ids must be a permutation of [0, n); order storage by id.
  auto check_ids = [](const auto& items, const char* where) {
    std::vector<char> seen(items.size(), 0);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const int id = items[i].id;
      const std::string path = std::string("/") + where + "/" + std::to_string(i) + "/id";
      if (id < 0 || static_cast<std::size_t>(id) >= items.size()) {
        throw SceneGraphError(path, "id " + std::to_string(id) + " outside dense range [0, " +
                                        std::to_string(items.size()) + ")");
      }
      if (seen[static_cast<std::size_t>(id)]) throw SceneGraphError(path, "duplicate id " + std::to_string(id));
      seen[static_cast<std::size_t>(id)] = 1;
    }
  };
  check_ids(entities_, "entities");
  check_ids(relations_, "relations");
  std::sort(entities_.begin(), entities_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::sort(relations_.begin(), relations_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  validate();
}

void SceneGraph::validate() const {
  const int p = static_cast<int>(entities_.size());
  std::optional<std::size_t> width;
  for (std::size_t i = 0; i < entities_.size(); ++i) {
    const Entity& e = entities_[i];
    const std::string path = at("/entities", i);
    if (e.id != static_cast<int>(i)) throw SceneGraphError(path + "/id", "ids not dense");
    if (e.confidence && !(*e.confidence >= 0.0 && *e.confidence <= 1.0)) {
      throw SceneGraphError(path + "/confidence", "confidence outside [0, 1]");
    }
    if (modality_ == Modality::language && e.feature) {
      throw SceneGraphError(path + "/feature", "language entities must not carry features");
    }
    const std::size_t len = e.feature ? e.feature->size() : 0;
    if (i == 0) {
      width = len;
    } else if (*width != len) {
      throw SceneGraphError(path + "/feature", "feature length " + std::to_string(len) + " differs from " +
                                                   std::to_string(*width));
    }
    if (e.feature) {
      for (double v : *e.feature) {
        if (!std::isfinite(v)) throw SceneGraphError(path + "/feature", "non-finite feature value");
      }
    }
  }
  if (width && *width == 0 && !entities_.empty() && entities_[0].feature) {
    throw SceneGraphError("/entities/0/feature", "empty feature vector");
  }
  for (std::size_t i = 0; i < relations_.size(); ++i) {
    const Relation& r = relations_[i];
    const std::string path = at("/relations", i);
    if (r.id != static_cast<int>(i)) throw SceneGraphError(path + "/id", "ids not dense");
    if (r.subject < 0 || r.subject >= p) {
      throw SceneGraphError(path + "/subject", "dangling endpoint " + std::to_string(r.subject));
    }
    if (r.object < 0 || r.object >= p) {
      throw SceneGraphError(path + "/object", "dangling endpoint " + std::to_string(r.object));
    }
    if (r.confidence && !(*r.confidence >= 0.0 && *r.confidence <= 1.0)) {
      throw SceneGraphError(path + "/confidence", "confidence outside [0, 1]");
    }
  }
}

std::vector<std::array<int, 2>> SceneGraph::index_pairs() const {
  std::vector<std::array<int, 2>> out;
  out.reserve(relations_.size());
  for (const auto& r : relations_) out.push_back({r.subject, r.object});
  return out;
}

std::vector<int> SceneGraph::relations_between(int a, int b) const {
  std::vector<int> out;
  for (const auto& r : relations_) {
    if ((r.subject == a && r.object == b) || (r.subject == b && r.object == a)) out.push_back(r.id);
  }
  return out;
}

std::optional<std::size_t> SceneGraph::feature_dim() const {
  if (entities_.empty() || !entities_.front().feature) return std::nullopt;
  return entities_.front().feature->size();
}

SceneGraph parse_scene_graph(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw SceneGraphError("", std::string("malformed JSON: ") + e.what());
  }
  return from_json(doc);
}

std::vector<SceneGraph> parse_scene_graph_stream(std::string_view ndjson) {
  std::vector<SceneGraph> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= ndjson.size()) {
    const std::size_t end = std::min(ndjson.find('\n', pos), ndjson.size());
    std::string_view line = ndjson.substr(pos, end - pos);
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        out.push_back(parse_scene_graph(line));
      } catch (const SceneGraphError& e) {
        throw SceneGraphError("line " + std::to_string(line_no) + e.path(), e.what());
      }
    }
    pos = end + 1;
  }
  return out;
}

std::string serialize_scene_graph(const SceneGraph& graph) { return to_json(graph).dump(); }

std::vector<SceneGraph> load_scene_graphs(const std::filesystem::path& file) {
  const std::string text = read_file(file);
  try {
    if (file.extension() == ".jsonl") return parse_scene_graph_stream(text);
    return {parse_scene_graph(text)};
  } catch (const SceneGraphError& e) {
    throw SceneGraphError(file.string() + ":" + e.path(), e.what());
  }
}

std::vector<SceneGraph> load_scene_graph_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if (ext == ".json" || ext == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SceneGraph> out;
  for (const auto& f : files) {
    auto graphs = load_scene_graphs(f);
    out.insert(out.end(), std::make_move_iterator(graphs.begin()), std::make_move_iterator(graphs.end()));
  }
  return out;
}

EntityStatsAccumulator::EntityStatsAccumulator(double threshold) : threshold_(threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("threshold must be in [0, 1]");
}

void EntityStatsAccumulator::add(const SceneGraph& graph) {
  ++graphs_;
  entities_ += graph.num_entities();
  for (const auto& e : graph.entities()) {
    if (e.confidence) {
      reliable_ += *e.confidence >= threshold_ ? 1 : 0;
    } else if (graph.modality() == Modality::language) {
      ++reliable_;
    }
  }
}

EntityStats EntityStatsAccumulator::result() const {
  if (graphs_ == 0) throw std::invalid_argument("entity statistics need at least one graph");
  const double n = static_cast<double>(graphs_);
  return {static_cast<double>(entities_) / n, static_cast<double>(reliable_) / n, graphs_, threshold_};
}

EntityStats entity_stats(std::span<const SceneGraph> graphs, double threshold) {
  EntityStatsAccumulator acc(threshold);
  for (const auto& g : graphs) acc.add(g);
  return acc.result();
}

EntityStats language_entity_stats(std::span<const SceneGraph> graphs) {
  EntityStatsAccumulator acc(0.0);
  for (const auto& g : graphs) acc.add(g);
  EntityStats s = acc.result();
  s.mean_reliable = s.mean_entities;
  return s;
}

}  // namespace psg
