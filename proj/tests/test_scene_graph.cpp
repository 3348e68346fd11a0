// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "psg/scene_graph.hpp"

using namespace psg;

namespace {

const std::filesystem::path kFixtures = PSG_FIXTURE_DIR;

std::string expect_error_path(std::string_view doc) {
  try {
    parse_scene_graph(doc);
  } catch (const SceneGraphError& e) {
    return e.path();
  }
  return "<no error>";
}

SceneGraph random_graph(std::mt19937_64& rng, Modality m) {
  std::uniform_int_distribution<int> count(0, 8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int p = count(rng);
  const bool features = m == Modality::visual && unit(rng) < 0.5;
  std::vector<Entity> ents;
  for (int i = 0; i < p; ++i) {
    Entity e{i, "e" + std::to_string(count(rng)), std::nullopt, std::nullopt};
    if (unit(rng) < 0.7) e.confidence = unit(rng);
    if (features) e.feature = std::vector<double>{unit(rng) - 0.5, 1e-7 * unit(rng), 3.0};
    ents.push_back(std::move(e));
  }
  std::vector<Relation> rels;
  if (p > 0) {
    std::uniform_int_distribution<int> node(0, p - 1);
    const int q = count(rng);
    for (int r = 0; r < q; ++r) {
      Relation rel{r, "r" + std::to_string(r % 3), node(rng), node(rng), std::nullopt};
      if (unit(rng) < 0.5) rel.confidence = unit(rng);
      rels.push_back(std::move(rel));
    }
  }
  return SceneGraph(m, std::move(ents), std::move(rels));
}

}  // namespace

TEST_CASE("a document without entities is the empty graph") {
  const SceneGraph g = parse_scene_graph(R"({"version":1,"modality":"language","entities":[],"relations":[]})");
  CHECK(g.num_entities() == 0);
  CHECK(g.num_relations() == 0);
  CHECK(g.modality() == Modality::language);
}

TEST_CASE("two entities and one relation give a single index pair") {
  const SceneGraph g = parse_scene_graph(R"({"version":1,"modality":"visual",
    "entities":[{"id":0,"label":"man","confidence":0.9},{"id":1,"label":"horse"}],
    "relations":[{"id":0,"label":"rides","subject":0,"object":1,"extra":"ignored"}],"note":"ignored"})");
  using Pairs = std::vector<std::array<int, 2>>;
  CHECK(g.index_pairs() == Pairs{{0, 1}});
  CHECK(g.relations_between(1, 0) == std::vector<int>{0});
  CHECK(g.relations_between(0, 0).empty());
  CHECK(g.entities()[0].confidence == 0.9);
  CHECK_FALSE(g.entities()[1].confidence.has_value());
}

TEST_CASE("entities are reordered by id") {
  const SceneGraph g = parse_scene_graph(R"({"version":1,"modality":"language",
    "entities":[{"id":1,"label":"b"},{"id":0,"label":"a"}],"relations":[]})");
  CHECK(g.entities()[0].label == "a");
}

TEST_CASE("structural violations report a path") {
  CHECK(expect_error_path(R"({"version":1,"modality":"visual","entities":[{"id":0,"label":"a"},{"id":1,"label":"b"}],
    "relations":[{"id":0,"label":"r","subject":0,"object":7}]})") == "/relations/0/object");
  CHECK(expect_error_path(R"({"version":1,"modality":"visual","entities":[{"id":0,"label":"a"},{"id":0,"label":"b"}],
    "relations":[]})") == "/entities/1/id");
  CHECK(expect_error_path(R"({"version":1,"modality":"visual","entities":[{"id":0,"label":"a","feature":[1,2]},
    {"id":1,"label":"b","feature":[1]}],"relations":[]})") == "/entities/1/feature");
  CHECK(expect_error_path(R"({"version":1,"modality":"language","entities":[{"id":0,"label":"a","feature":[1]}],
    "relations":[]})") == "/entities/0/feature");
  CHECK(expect_error_path(R"({"version":2,"modality":"visual","entities":[],"relations":[]})") == "/version");
  CHECK(expect_error_path(R"({"version":1,"modality":"audio","entities":[],"relations":[]})") == "/modality");
  CHECK(expect_error_path(R"({"version":1,"modality":"visual","entities":[{"id":0}],"relations":[]})") ==
        "/entities/0/label");
  CHECK(expect_error_path(R"({"version":1,"modality":"visual","entities":[{"id":0,"label":"a","confidence":1.5}],
    "relations":[]})") == "/entities/0/confidence");
  CHECK(expect_error_path("{not json") == "");
}

TEST_CASE("stream errors carry the line number") {
  const std::string stream =
      "{\"version\":1,\"modality\":\"language\",\"entities\":[],\"relations\":[]}\n\n"
      "{\"version\":1,\"modality\":\"language\",\"entities\":[{\"id\":3,\"label\":\"x\"}],\"relations\":[]}\n";
  try {
    parse_scene_graph_stream(stream);
    FAIL("expected SceneGraphError");
  } catch (const SceneGraphError& e) {
    CHECK(e.path().rfind("line 3", 0) == 0);
  }
}

TEST_CASE("parse inverts serialize on random valid graphs") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const SceneGraph g = random_graph(rng, i % 2 ? Modality::visual : Modality::language);
    CHECK(parse_scene_graph(serialize_scene_graph(g)) == g);
  }
}

TEST_CASE("validation rejects a relation whose endpoint is removed") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 100; ++i) {
    const SceneGraph g = random_graph(rng, Modality::visual);
    if (g.num_relations() == 0) continue;
    auto rels = g.relations();
    rels[0].object = static_cast<int>(g.num_entities());
    CHECK_THROWS_AS(SceneGraph(g.modality(), g.entities(), rels), SceneGraphError);
  }
}

TEST_CASE("entity statistics on a single graph") {
  const SceneGraph g(Modality::visual,
                     {{0, "a", 0.9, std::nullopt}, {1, "b", 0.5, std::nullopt}, {2, "c", 0.2, std::nullopt}}, {});
  const EntityStats s = entity_stats(std::span(&g, 1), 0.3);
  CHECK(s.mean_reliable == 2.0);
  CHECK(s.mean_entities == 3.0);
  CHECK(s.graphs == 1);
  CHECK(s.threshold == 0.3);
}

TEST_CASE("entity statistics edge cases") {
  CHECK_THROWS_AS(entity_stats({}, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(EntityStatsAccumulator(1.5), std::invalid_argument);
  const std::vector<SceneGraph> lang{
      SceneGraph(Modality::language, {{0, "a", {}, {}}, {1, "b", {}, {}}}, {}),
      SceneGraph(Modality::language, {{0, "a", {}, {}}, {1, "b", {}, {}}, {2, "c", {}, {}}, {3, "d", {}, {}}}, {})};
  CHECK(language_entity_stats(lang).mean_entities == 3.0);
  CHECK(language_entity_stats(lang).mean_reliable == 3.0);
  // Visual entities lacking confidence are never reliable.
  const SceneGraph v(Modality::visual, {{0, "a", {}, {}}, {1, "b", 1.0, {}}}, {});
  CHECK(entity_stats(std::span(&v, 1), 0.0).mean_reliable == 1.0);
}

TEST_CASE("threshold zero counts every confident entity") {
  std::mt19937_64 rng(13);
  std::vector<SceneGraph> graphs;
  for (int i = 0; i < 30; ++i) {
    const SceneGraph g = random_graph(rng, Modality::visual);
    auto ents = g.entities();
    for (auto& e : ents) e.confidence = e.confidence.value_or(0.0);
    graphs.emplace_back(Modality::visual, ents, g.relations());
  }
  const EntityStats s = entity_stats(graphs, 0.0);
  CHECK(s.mean_entities == s.mean_reliable);
}

TEST_CASE("fixture statistics match the brute-force recount") {
  const auto visual = load_scene_graphs(kFixtures / "stats_visual.jsonl");
  const auto language = load_scene_graphs(kFixtures / "stats_language.jsonl");
  REQUIRE(visual.size() == 50);
  REQUIRE(language.size() == 50);
  std::ifstream in(kFixtures / "stats_expected.json");
  const auto expected = nlohmann::json::parse(in);
  for (double t : {0.0, 0.3, 0.5}) {
    const auto& e = expected[t == 0.0 ? "visual@0.0" : t == 0.3 ? "visual@0.3" : "visual@0.5"];
    const EntityStats s = entity_stats(visual, t);
    CHECK(s.mean_entities == doctest::Approx(e["mean_entities"].get<double>()).epsilon(1e-12));
    CHECK(s.mean_reliable == doctest::Approx(e["mean_reliable"].get<double>()).epsilon(1e-12));
  }
  const EntityStats l = language_entity_stats(language);
  CHECK(l.mean_entities == doctest::Approx(expected["language"]["mean_entities"].get<double>()));
}

TEST_CASE("directory loading visits files in sorted order") {
  const auto dir = std::filesystem::temp_directory_path() / "psg_sg_dir_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "sub");
  const auto write = [](const std::filesystem::path& p, int n) {
    std::vector<Entity> ents;
    for (int i = 0; i < n; ++i) ents.push_back({i, "x", {}, {}});
    std::ofstream(p) << serialize_scene_graph(SceneGraph(Modality::language, ents, {}));
  };
  write(dir / "b.json", 2);
  write(dir / "a.json", 1);
  write(dir / "sub" / "c.json", 3);
  std::ofstream(dir / "ignored.txt") << "not a graph";
  const auto graphs = load_scene_graph_dir(dir);
  REQUIRE(graphs.size() == 3);
  CHECK(graphs[0].num_entities() == 1);
  CHECK(graphs[1].num_entities() == 2);
  CHECK(graphs[2].num_entities() == 3);
  std::filesystem::remove_all(dir);
}
