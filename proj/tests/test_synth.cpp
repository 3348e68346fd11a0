// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include "psg/dataset.hpp"
#include "psg/synth.hpp"

using namespace psg;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("psg_synth_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[std::filesystem::relative(e.path(), dir).string()] = ss.str();
  }
  return files;
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

SynthSpec small_spec() {
  SynthSpec s;
  s.train = 300;
  s.valid = 40;
  s.test = 60;
  return s;
}

}  // namespace

TEST_CASE("generation is a pure function of the corpus settings") {
  const SynthSpec spec = small_spec();
  TempDir a("a"), b("b");
  write_corpus(generate(spec), a.path);
  write_corpus(generate(spec), b.path);
  const auto fa = snapshot(a.path), fb = snapshot(b.path);
  CHECK(fa == fb);
  CHECK(fa.count("train.src"));
  CHECK(fa.count("graphs/test/0.visual.json"));
  CHECK(fa.count("answer_key.json"));
  CHECK(fa.count("items.test.jsonl"));
  CHECK(fa.count("labels.emb"));
  CHECK(SynthSpec::from_json(nlohmann::json::parse(fa.at("spec.json"))).to_json() == spec.to_json());

  SynthSpec other = spec;
  other.seed = 2;
  CHECK(generate(other).splits.at("train")[0].source != generate(spec).splits.at("train")[0].source);
}

TEST_CASE("sentence structure and graphs") {
  const SynthCorpus c = generate(small_spec());
  std::set<std::string> sources;
  for (const auto& [name, split] : c.splits) {
    for (const auto& s : split) {
      CHECK(sources.insert(s.source).second);
      const auto src = words(s.source), tgt = words(s.target);
      REQUIRE(src.size() == tgt.size());
      REQUIRE(s.slot);
      CHECK(src[s.slot->source_position] == c.types[s.slot->type].source);
      CHECK(tgt[s.slot->target_position] == c.types[s.slot->type].senses[s.slot->sense]);

      // Language graph: nouns at even positions, relation words between them.
      const auto& lg = s.language;
      REQUIRE(lg.num_entities() == (src.size() + 1) / 2);
      for (std::size_t i = 0; i < lg.num_entities(); ++i) CHECK(lg.entities()[i].label == src[2 * i]);
      REQUIRE(lg.num_relations() == lg.num_entities() - 1);
      for (std::size_t i = 0; i < lg.num_relations(); ++i) {
        CHECK(lg.relations()[i].label == src[2 * i + 1]);
        CHECK(lg.relations()[i].subject == static_cast<int>(i));
        CHECK(lg.relations()[i].object == static_cast<int>(i + 1));
      }

      // Visual graph: nouns, one context entity linked to the ambiguous noun, distractors.
      const auto& vg = s.visual;
      CHECK(vg.num_entities() == lg.num_entities() + 1 + c.spec.distractors);
      CHECK(vg.feature_dim() == c.spec.embedding_dim);
      const std::string context = c.types[s.slot->type].context[s.slot->sense];
      int ctx_id = -1;
      for (const auto& e : vg.entities()) {
        if (e.label == context) ctx_id = e.id;
      }
      REQUIRE(ctx_id >= 0);
      bool linked = false;
      for (const auto& r : vg.relations()) {
        if (r.label == "near" && r.subject == ctx_id) {
          linked = vg.entities()[static_cast<std::size_t>(r.object)].label == c.types[s.slot->type].source;
        }
      }
      CHECK(linked);
    }
  }
}

TEST_CASE("visual-only entities are orthogonal to every language label") {
  const SynthCorpus c = generate(small_spec());
  std::vector<std::vector<double>> language;
  std::set<std::string> labels;
  for (const auto& [name, split] : c.splits) {
    for (const auto& s : split) {
      for (const auto& e : s.language.entities()) labels.insert(e.label);
    }
  }
  for (const auto& t : c.types) labels.insert(t.source);
  for (const auto& l : labels) language.push_back(c.labels.embed(l));

  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& s : c.splits.at("test")) {
    for (const auto& e : s.visual.entities()) {
      if (labels.count(e.label)) continue;
      ++checked;
      for (const auto& v : language) {
        double d = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) d += v[i] * (*e.feature)[i];
        worst = std::max(worst, std::abs(d));
      }
    }
  }
  CHECK(checked == c.splits.at("test").size() * (1 + c.spec.distractors));
  CHECK(worst < 1e-9);
}

TEST_CASE("senses are uniform and independent of the text") {
  SynthSpec spec = small_spec();
  spec.train = 2000;
  const SynthCorpus c = generate(spec);
  std::map<std::size_t, std::array<double, 2>> counts;
  for (const auto& s : c.splits.at("train")) counts[s.slot->type][s.slot->sense] += 1;
  REQUIRE(counts.size() == 2);
  for (const auto& [type, n] : counts) {
    const double e = (n[0] + n[1]) / 2.0;
    const double chi2 = (n[0] - e) * (n[0] - e) / e + (n[1] - e) * (n[1] - e) / e;
    CHECK(chi2 < 10.83);  // 1 degree of freedom, p = 0.001
  }
  // Per source position of the ambiguous noun the senses stay balanced.
  std::map<std::size_t, std::array<double, 2>> by_position;
  for (const auto& s : c.splits.at("train")) by_position[s.slot->source_position][s.slot->sense] += 1;
  for (const auto& [pos, n] : by_position) {
    const double e = (n[0] + n[1]) / 2.0;
    CHECK((n[0] - e) * (n[0] - e) / e + (n[1] - e) * (n[1] - e) / e < 10.83);
  }
}

TEST_CASE("a corpus without ambiguity is a word-for-word dictionary") {
  SynthSpec spec = small_spec();
  spec.ambiguous_types = 0;
  const SynthCorpus c = generate(spec);
  std::map<std::string, std::string> dict;
  for (const auto& [name, split] : c.splits) {
    for (const auto& s : split) {
      CHECK_FALSE(s.slot);
      const auto src = words(s.source), tgt = words(s.target);
      REQUIRE(src.size() == tgt.size());
      for (std::size_t i = 0; i < src.size(); ++i) {
        const auto [it, fresh] = dict.emplace(src[i], tgt[i]);
        CHECK(it->second == tgt[i]);
      }
    }
  }
  CHECK(c.answer_key("test").items.empty());
}

TEST_CASE("ambiguous-token accuracy") {
  const SynthCorpus c = generate(small_spec());
  const AnswerKey key = c.answer_key("test");
  const AnswerKey back = AnswerKey::from_json(key.to_json());
  CHECK(back.items.size() == key.items.size());
  CHECK(back.to_json() == key.to_json());

  std::vector<std::string> oracle, first, empty(key.sentences);
  for (const auto& s : c.splits.at("test")) {
    oracle.push_back(s.target);
    auto w = words(s.target);
    w[s.slot->target_position] = c.types[s.slot->type].senses[0];
    std::string joined;
    for (const auto& x : w) joined += x + " ";
    first.push_back(joined);
  }
  CHECK(ambiguous_token_accuracy(oracle, key) == 1.0);
  CHECK(ambiguous_token_accuracy(empty, key) == 0.0);
  CHECK(ambiguous_token_accuracy(first, key) == doctest::Approx(0.5).epsilon(0.3));
  CHECK_THROWS_AS(ambiguous_token_accuracy(std::span(oracle).first(3), key), std::invalid_argument);

  SynthSpec big = small_spec();
  big.test = 2000;
  const SynthCorpus cb = generate(big);
  std::vector<std::string> base;
  for (const auto& s : cb.splits.at("test")) {
    auto w = words(s.target);
    w[s.slot->target_position] = cb.types[s.slot->type].senses[0];
    std::string joined;
    for (const auto& x : w) joined += x + " ";
    base.push_back(joined);
  }
  const double acc = ambiguous_token_accuracy(base, cb.answer_key("test"));
  CHECK(acc > 0.46);
  CHECK(acc < 0.54);
}

TEST_CASE("infeasible corpus settings are rejected") {
  SynthSpec s = small_spec();
  s.embedding_dim = 10;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
  s = small_spec();
  s.senses = 1;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
  s = small_spec();
  s.nouns = 1;
  s.relations = 1;
  s.ambiguous_types = 0;
  s.max_nouns = 1;
  s.min_nouns = 1;
  s.train = 2;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
  CHECK_THROWS_AS(SynthSpec::from_json({{"sede", 3}}), std::invalid_argument);
  CHECK(SynthSpec::from_json({{"seed", 3}}).seed == 3);
}

TEST_CASE("written corpora load back as examples") {
  const SynthCorpus c = generate(small_spec());
  TempDir dir("load");
  write_corpus(c, dir.path);
  const auto test = load_split(dir.path, "test");
  REQUIRE(test.size() == c.splits.at("test").size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(test[i].source == c.splits.at("test")[i].source);
    CHECK(test[i].target == c.splits.at("test")[i].target);
    REQUIRE(test[i].visual);
    CHECK(*test[i].visual == c.splits.at("test")[i].visual);
    CHECK(*test[i].language == c.splits.at("test")[i].language);
  }
  const EmbeddingProvider labels = EmbeddingProvider::load(dir.path / "labels.emb");
  std::vector<std::string> corpus;
  for (const auto& s : test) corpus.push_back(s.source + " " + s.target);
  const BpeModel bpe = bpe_train(corpus, 200);
  const auto examples = make_examples(test, bpe, &labels);
  REQUIRE(examples[0].graphs);
  CHECK(examples[0].graphs->visual.entities.cols() == c.spec.embedding_dim);
  CHECK(examples[0].graphs->language.num_entities() == test[0].language->num_entities());
  CHECK(make_examples(test, bpe, nullptr)[0].graphs == nullptr);

  std::filesystem::remove(dir.path / "graphs" / "test" / "1.language.json");
  CHECK_THROWS_AS(load_split(dir.path, "test"), DataError);
  CHECK_THROWS_AS(load_split(dir.path, "nope"), DataError);
}
