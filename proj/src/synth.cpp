// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "psg/trainer.hpp"

namespace psg {

namespace {

constexpr const char* kSourceSyllables[] = {"ka", "lo", "mi", "re", "su", "ta", "ne", "vo", "pi", "da"};
constexpr const char* kTargetSyllables[] = {"ba", "ke", "lu", "mo", "ri", "sa", "te", "vi", "zo", "gu"};
constexpr const char* kSourceRelations[] = {"on", "with", "under", "behind", "beside", "above", "inside", "across"};
constexpr const char* kTargetRelations[] = {"auf", "mit", "unter", "hinter", "neben", "über", "in", "quer"};
constexpr const char* kContextRelation = "near";
constexpr std::size_t kClutterLabels = 8;
constexpr int kMaxAttempts = 1000;

std::string word(const char* const (&syllables)[10], std::size_t i, const char* suffix) {
  std::string w = std::string(syllables[(i / 10) % 10]) + syllables[i % 10];
  if (i >= 100) w += syllables[(i / 100) % 10];
  return w + suffix;
}

std::string source_noun(std::size_t i) { return word(kSourceSyllables, i, ""); }
std::string target_noun(std::size_t i) { return word(kTargetSyllables, i, "n"); }

std::string source_relation(std::size_t i) {
  return i < std::size(kSourceRelations) ? kSourceRelations[i] : "rel" + std::to_string(i);
}
std::string target_relation(std::size_t i) {
  return i < std::size(kTargetRelations) ? kTargetRelations[i] : "rel" + std::to_string(i) + "e";
}

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec gaussian(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(d);
  for (auto& x : v) x = n(rng);
  return v;
}

Vec unit(Vec v) {
  const double norm = std::sqrt(dot(v, v));
  for (auto& x : v) x /= norm;
  return v;
}

/// Random unit vector orthogonal to every row of `basis` (itself orthonormal).
/// Projection runs twice to keep residual overlaps at rounding level.
Vec orthogonal_unit(const std::vector<Vec>& basis, std::size_t d, std::mt19937_64& rng) {
  for (;;) {
    Vec v = gaussian(d, rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (const Vec& q : basis) {
        const double c = dot(v, q);
        for (std::size_t i = 0; i < d; ++i) v[i] -= c * q[i];
      }
    }
    if (dot(v, v) > 1e-6) return unit(std::move(v));
  }
}

Vec scaled(const Vec& v, double s) {
  Vec out(v);
  for (auto& x : out) x *= s;
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  if (nouns == 0) throw std::invalid_argument("synth: at least one plain noun is required");
  if (relations == 0) throw std::invalid_argument("synth: at least one relation word is required");
  if (min_nouns == 0 || max_nouns < min_nouns) throw std::invalid_argument("synth: need 1 <= min_nouns <= max_nouns");
  if (ambiguous_types > 0 && senses < 2) throw std::invalid_argument("synth: ambiguous types need at least 2 senses");
  if (nouns + ambiguous_types + ambiguous_types * senses >= 1000) throw std::invalid_argument("synth: vocabulary too large");
  const std::size_t needed = nouns + ambiguous_types + ambiguous_types * senses + (distractors > 0 ? 1 : 0);
  if (embedding_dim < needed) {
    throw std::invalid_argument("synth: embedding_dim " + std::to_string(embedding_dim) + " is too small; " +
                                std::to_string(needed) + " orthogonal directions are required");
  }
  if (!(feature_scale > 0.0)) throw std::invalid_argument("synth: feature_scale must be positive");
  if (!(feature_noise >= 0.0)) throw std::invalid_argument("synth: feature_noise must be non-negative");
  if (train == 0) throw std::invalid_argument("synth: the training split must be non-empty");
}

nlohmann::json SynthSpec::to_json() const {
  return {{"seed", seed},           {"nouns", nouns},
          {"relations", relations}, {"min_nouns", min_nouns},
          {"max_nouns", max_nouns}, {"ambiguous_types", ambiguous_types},
          {"senses", senses},       {"distractors", distractors},
          {"embedding_dim", embedding_dim}, {"feature_scale", feature_scale},
          {"feature_noise", feature_noise}, {"train", train},
          {"valid", valid},         {"test", test}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("synth spec must be a JSON object");
  SynthSpec s;
  const nlohmann::json defaults = s.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw std::invalid_argument("synth spec: unknown key '" + key + "'");
    if (!value.is_number()) throw std::invalid_argument("synth spec: '" + key + "' must be a number");
  }
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("seed", s.seed);
  get("nouns", s.nouns);
  get("relations", s.relations);
  get("min_nouns", s.min_nouns);
  get("max_nouns", s.max_nouns);
  get("ambiguous_types", s.ambiguous_types);
  get("senses", s.senses);
  get("distractors", s.distractors);
  get("embedding_dim", s.embedding_dim);
  get("feature_scale", s.feature_scale);
  get("feature_noise", s.feature_noise);
  get("train", s.train);
  get("valid", s.valid);
  get("test", s.test);
  return s;
}

nlohmann::json AnswerKey::to_json() const {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& ty : types) t.push_back({{"source", ty.source}, {"senses", ty.senses}, {"context", ty.context}});
  nlohmann::json it = nlohmann::json::array();
  for (const auto& i : items) it.push_back({{"index", i.index}, {"type", i.type}, {"sense", i.sense}});
  return {{"types", t}, {"sentences", sentences}, {"items", it}};
}

AnswerKey AnswerKey::from_json(const nlohmann::json& j) {
  AnswerKey k;
  for (const auto& t : j.at("types")) {
    k.types.push_back({t.at("source").get<std::string>(), t.at("senses").get<std::vector<std::string>>(),
                       t.at("context").get<std::vector<std::string>>()});
  }
  k.sentences = j.at("sentences").get<std::size_t>();
  for (const auto& i : j.at("items")) {
    Item item{i.at("index").get<std::size_t>(), i.at("type").get<std::size_t>(), i.at("sense").get<std::size_t>()};
    if (item.type >= k.types.size() || item.sense >= k.types[item.type].senses.size() || item.index >= k.sentences) {
      throw std::invalid_argument("answer key: item out of range");
    }
    k.items.push_back(item);
  }
  return k;
}

AnswerKey SynthCorpus::answer_key(const std::string& split) const {
  const auto it = splits.find(split);
  if (it == splits.end()) throw std::invalid_argument("unknown split '" + split + "'");
  AnswerKey key;
  key.types = types;
  key.sentences = it->second.size();
  for (std::size_t i = 0; i < it->second.size(); ++i) {
    if (const auto& slot = it->second[i].slot) key.items.push_back({i, slot->type, slot->sense});
  }
  return key;
}

SynthCorpus generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t d = spec.embedding_dim;
  SynthCorpus corpus;
  corpus.spec = spec;
  std::map<std::string, Vec> table;

  // Language-side entity labels first; everything visual-only lives in their
  // orthogonal complement.
  std::vector<std::string> src_nouns, tgt_nouns;
  std::vector<Vec> basis;
  const auto add_language_label = [&](const std::string& label) {
    const Vec v = unit(gaussian(d, rng));
    table[label] = v;
    Vec q = v;
    for (int pass = 0; pass < 2; ++pass) {
      for (const Vec& b : basis) {
        const double c = dot(q, b);
        for (std::size_t i = 0; i < d; ++i) q[i] -= c * b[i];
      }
    }
    basis.push_back(unit(std::move(q)));
  };
  for (std::size_t i = 0; i < spec.nouns; ++i) {
    src_nouns.push_back(source_noun(i));
    tgt_nouns.push_back(target_noun(i));
    add_language_label(src_nouns.back());
  }
  for (std::size_t k = 0; k < spec.ambiguous_types; ++k) {
    AmbiguousType t;
    t.source = source_noun(spec.nouns + k);
    add_language_label(t.source);
    for (std::size_t s = 0; s < spec.senses; ++s) {
      t.senses.push_back(target_noun(spec.nouns + spec.ambiguous_types + k * spec.senses + s));
      t.context.push_back("context" + std::to_string(k) + "_" + std::to_string(s));
    }
    corpus.types.push_back(std::move(t));
  }
  std::vector<std::string> src_rel, tgt_rel;
  for (std::size_t i = 0; i < spec.relations; ++i) {
    src_rel.push_back(source_relation(i));
    tgt_rel.push_back(target_relation(i));
    table[src_rel.back()] = unit(gaussian(d, rng));
  }
  table[kContextRelation] = unit(gaussian(d, rng));

  std::vector<Vec> visual_only = basis;
  for (auto& t : corpus.types) {
    for (const auto& label : t.context) {
      table[label] = orthogonal_unit(visual_only, d, rng);
      visual_only.push_back(table[label]);
    }
  }
  // Distractors avoid language labels and context entities alike.
  const std::vector<Vec> distractor_basis = visual_only;
  for (std::size_t c = 0; c < kClutterLabels && spec.distractors > 0; ++c) {
    table["clutter" + std::to_string(c)] = orthogonal_unit(distractor_basis, d, rng);
  }

  std::uniform_int_distribution<std::size_t> noun_count(spec.min_nouns, spec.max_nouns);
  std::uniform_int_distribution<std::size_t> pick_noun(0, spec.nouns - 1), pick_rel(0, spec.relations - 1);
  std::uniform_int_distribution<std::size_t> pick_clutter(0, kClutterLabels - 1);
  std::uniform_real_distribution<double> high(0.5, 1.0), low(0.05, 0.45);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::set<std::string> seen;

  for (const auto& [name, size] : {std::pair<std::string, std::size_t>{"train", spec.train},
                                   {"valid", spec.valid},
                                   {"test", spec.test}}) {
    auto& out = corpus.splits[name];
    for (std::size_t n = 0; n < size; ++n) {
      std::vector<std::size_t> nouns, rels;
      std::optional<AmbiguousSlot> slot;
      std::string source;
      int attempt = 0;
      for (;; ++attempt) {
        if (attempt == kMaxAttempts) {
          throw std::invalid_argument("synth: spec infeasible, cannot draw " + std::to_string(size) + " distinct " +
                                      name + " sentences");
        }
        nouns.assign(noun_count(rng), 0);
        for (auto& x : nouns) x = pick_noun(rng);
        rels.assign(nouns.size() - 1, 0);
        for (auto& x : rels) x = pick_rel(rng);
        slot.reset();
        if (spec.ambiguous_types > 0) {
          AmbiguousSlot s;
          s.type = std::uniform_int_distribution<std::size_t>(0, spec.ambiguous_types - 1)(rng);
          s.sense = std::uniform_int_distribution<std::size_t>(0, spec.senses - 1)(rng);
          const std::size_t at = std::uniform_int_distribution<std::size_t>(0, nouns.size() - 1)(rng);
          s.source_position = s.target_position = 2 * at;  // nouns sit at even word positions
          slot = s;
        }
        std::vector<std::string> words;
        for (std::size_t i = 0; i < nouns.size(); ++i) {
          if (i > 0) words.push_back(src_rel[rels[i - 1]]);
          words.push_back(slot && slot->source_position == 2 * i ? corpus.types[slot->type].source : src_nouns[nouns[i]]);
        }
        source = join(words);
        if (seen.insert(source).second) break;
      }

      SynthSentence s;
      s.id = name + "-" + std::to_string(n);
      s.source = source;
      s.slot = slot;
      std::vector<std::string> target;
      std::vector<Entity> lang_entities;
      std::vector<Relation> lang_relations;
      std::vector<std::string> noun_labels;
      for (std::size_t i = 0; i < nouns.size(); ++i) {
        const bool ambiguous = slot && slot->source_position == 2 * i;
        if (i > 0) target.push_back(tgt_rel[rels[i - 1]]);
        target.push_back(ambiguous ? corpus.types[slot->type].senses[slot->sense] : tgt_nouns[nouns[i]]);
        noun_labels.push_back(ambiguous ? corpus.types[slot->type].source : src_nouns[nouns[i]]);
        lang_entities.push_back({static_cast<int>(i), noun_labels.back(), std::nullopt, std::nullopt});
        if (i > 0) {
          lang_relations.push_back({static_cast<int>(i - 1), src_rel[rels[i - 1]], static_cast<int>(i - 1),
                                    static_cast<int>(i), std::nullopt});
        }
      }
      s.target = join(target);
      s.language = SceneGraph(Modality::language, std::move(lang_entities), lang_relations);

      // Visual graph: one entity per noun, the sense context next to the
      // ambiguous noun, then distractors; rows are shuffled.
      struct Draft {
        std::string label;
        double confidence;
        Vec feature;
      };
      std::vector<Draft> drafts;
      for (const auto& label : noun_labels) {
        Vec f = scaled(table[label], spec.feature_scale);
        if (spec.feature_noise > 0.0) {
          for (auto& x : f) x += spec.feature_noise * noise(rng);
        }
        drafts.push_back({label, high(rng), std::move(f)});
      }
      std::optional<std::size_t> context;
      if (slot) {
        const auto& label = corpus.types[slot->type].context[slot->sense];
        context = drafts.size();
        drafts.push_back({label, high(rng), scaled(table[label], spec.feature_scale)});
      }
      for (std::size_t j = 0; j < spec.distractors; ++j) {
        drafts.push_back({"clutter" + std::to_string(pick_clutter(rng)), low(rng),
                          scaled(orthogonal_unit(distractor_basis, d, rng), spec.feature_scale)});
      }
      std::vector<std::size_t> perm(drafts.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<int> where(drafts.size());
      std::vector<Entity> vis_entities;
      for (std::size_t pos = 0; pos < perm.size(); ++pos) {
        Draft& dr = drafts[perm[pos]];
        where[perm[pos]] = static_cast<int>(pos);
        vis_entities.push_back({static_cast<int>(pos), dr.label, dr.confidence, std::move(dr.feature)});
      }
      std::vector<Relation> vis_relations;
      for (const auto& r : lang_relations) {
        vis_relations.push_back({static_cast<int>(vis_relations.size()), r.label, where[static_cast<std::size_t>(r.subject)],
                                 where[static_cast<std::size_t>(r.object)], high(rng)});
      }
      if (context) {
        vis_relations.push_back({static_cast<int>(vis_relations.size()), kContextRelation, where[*context],
                                 where[slot->source_position / 2], high(rng)});
      }
      s.visual = SceneGraph(Modality::visual, std::move(vis_entities), std::move(vis_relations));
      out.push_back(std::move(s));
    }
  }
  corpus.labels = EmbeddingProvider::from_table(d, std::map<std::string, std::vector<double>>(table.begin(), table.end()));
  return corpus;
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  nlohmann::json keys = nlohmann::json::object();
  for (const auto& [name, sentences] : corpus.splits) {
    std::string src, tgt;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      src += sentences[i].source + '\n';
      tgt += sentences[i].target + '\n';
      const auto base = dir / "graphs" / name / std::to_string(i);
      write_file_atomic(base.string() + ".visual.json", serialize_scene_graph(sentences[i].visual) + '\n');
      write_file_atomic(base.string() + ".language.json", serialize_scene_graph(sentences[i].language) + '\n');
    }
    write_file_atomic(dir / (name + ".src"), src);
    write_file_atomic(dir / (name + ".tgt"), tgt);
    keys[name] = corpus.answer_key(name).to_json();
  }
  write_file_atomic(dir / "answer_key.json", keys.dump(2) + '\n');

  std::string items;
  if (const auto it = corpus.splits.find("test"); it != corpus.splits.end()) {
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      const SynthSentence& s = it->second[i];
      if (!s.slot) continue;
      const auto& type = corpus.types[s.slot->type];
      for (std::size_t other = 0; other < type.senses.size(); ++other) {
        if (other == s.slot->sense) continue;
        auto words = split_words(s.target);
        words[s.slot->target_position] = type.senses[other];
        items += nlohmann::json{{"index", i}, {"id", s.id}, {"source", s.source}, {"positive", s.target},
                                {"negative", join(words)}}
                     .dump() +
                 '\n';
      }
    }
  }
  write_file_atomic(dir / "items.test.jsonl", items);
  write_file_atomic(dir / "labels.emb", corpus.labels.serialize());
  write_file_atomic(dir / "spec.json", corpus.spec.to_json().dump(2) + '\n');
}

double ambiguous_token_accuracy(std::span<const std::string> hypotheses, const AnswerKey& key) {
  if (hypotheses.size() != key.sentences) {
    throw std::invalid_argument("ambiguous_token_accuracy: " + std::to_string(hypotheses.size()) +
                                " hypotheses for a key over " + std::to_string(key.sentences) + " sentences");
  }
  if (key.items.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& item : key.items) {
    const auto& senses = key.types[item.type].senses;
    for (const auto& w : split_words(hypotheses[item.index])) {
      const auto it = std::find(senses.begin(), senses.end(), w);
      if (it == senses.end()) continue;
      correct += static_cast<std::size_t>(it - senses.begin()) == item.sense;
      break;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(key.items.size());
}

}  // namespace psg
