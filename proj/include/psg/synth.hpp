// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded generator for small parallel corpora with paired scene graphs. In the
// ambiguity setting one source noun per sentence has several translations and
// only a context entity in the visual graph tells them apart.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "psg/graph_encoder.hpp"
#include "psg/scene_graph.hpp"

namespace psg {

struct SynthSpec {
  std::uint64_t seed = 1;
  std::size_t nouns = 12;            // plain, unambiguous source nouns
  std::size_t relations = 4;         // relation words joining consecutive nouns
  std::size_t min_nouns = 2;         // per sentence
  std::size_t max_nouns = 3;
  std::size_t ambiguous_types = 2;   // 0 gives a corpus translatable from text alone
  std::size_t senses = 2;
  std::size_t distractors = 3;       // per visual graph
  std::size_t embedding_dim = 32;    // label and visual feature width
  double feature_scale = 8.0;        // norm of visual entity features
  double feature_noise = 0.0;        // Gaussian noise added to noun features
  std::size_t train = 1000;
  std::size_t valid = 100;
  std::size_t test = 200;

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static SynthSpec from_json(const nlohmann::json& j);
};

struct AmbiguousType {
  std::string source;               // the ambiguous source noun
  std::vector<std::string> senses;  // one target word per sense
  std::vector<std::string> context; // visual-only entity label per sense
};

struct AmbiguousSlot {
  std::size_t type = 0;
  std::size_t sense = 0;
  std::size_t source_position = 0;  // word index in the source sentence
  std::size_t target_position = 0;  // word index in the target sentence
};

struct SynthSentence {
  std::string id;
  std::string source;
  std::string target;
  SceneGraph language;
  SceneGraph visual;
  std::optional<AmbiguousSlot> slot;
};

struct AnswerKey {
  std::vector<AmbiguousType> types;
  std::size_t sentences = 0;
  struct Item {
    std::size_t index = 0;  // sentence index within the split
    std::size_t type = 0;
    std::size_t sense = 0;
  };
  std::vector<Item> items;

  nlohmann::json to_json() const;
  static AnswerKey from_json(const nlohmann::json& j);
};

struct SynthCorpus {
  SynthSpec spec;
  std::vector<AmbiguousType> types;
  std::map<std::string, std::vector<SynthSentence>> splits;  // "train", "valid", "test"
  /// Table covering every entity and relation label that occurs.
  EmbeddingProvider labels = EmbeddingProvider::synthetic(1, 0);

  AnswerKey answer_key(const std::string& split) const;
};

/// Pure function of the spec. Source sentences are unique across all splits.
SynthCorpus generate(const SynthSpec& spec);

/// Writes `<split>.src`, `<split>.tgt`, `graphs/<split>/<i>.{visual,language}.json`,
/// `labels.emb`, `answer_key.json` (keyed by split), `items.test.jsonl` with
/// correct/incorrect target pairs, and `spec.json`. Every file is written atomically.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

/// Fraction of key items whose hypothesis contains the correct sense word as
/// the first word from that type's sense set. Throws std::invalid_argument when
/// the hypothesis count differs from the key's sentence count.
double ambiguous_token_accuracy(std::span<const std::string> hypotheses, const AnswerKey& key);

}  // namespace psg
