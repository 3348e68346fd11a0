// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "psg/config.hpp"

using namespace psg;

TEST_CASE("defaults round-trip through the flat key set") {
  const RunConfig c;
  const auto j = c.to_json();
  CHECK(j.at("train.lr") == 0.005);
  CHECK(j.at("train.warmup") == 2000);
  CHECK(j.at("prune.steps") == 5);
  CHECK(j.at("prune.threshold") == 0.2);
  CHECK(j.at("prune.strategy") == "language_guided");
  CHECK(j.at("model.dropout") == 0.3);
  CHECK(j.at("beam.size") == 5);

  RunConfig d;
  d.apply(j);
  CHECK(d.to_json() == j);
}

TEST_CASE("presets set size and schedule, later keys win") {
  RunConfig c;
  c.apply({{"train.lr", 0.01}, {"preset", "tiny"}});
  CHECK(c.model.backbone.layers == 4);
  CHECK(c.model.backbone.heads == 4);
  CHECK(c.model.backbone.d_model == 128);
  CHECK(c.model.backbone.d_ff == 512);
  CHECK(c.train.warmup == 20000);
  CHECK(c.train.peak_lr == 0.01);

  c.apply_preset("medium");
  CHECK(c.model.backbone.d_model == 256);
  CHECK(c.train.peak_lr == 0.001);
  CHECK_THROWS_AS(c.apply_preset("huge"), ConfigError);
}

TEST_CASE("overrides parse JSON values and fall back to strings") {
  RunConfig c;
  c.apply_override("prune.strategy=random");
  CHECK(c.model.prune.strategy == PruneStrategy::random);
  c.apply_override("prune.weighting=\"constant\"");
  CHECK(c.model.prune.weighting == StepWeighting::constant);
  c.apply_override("model.use_graphs=false");
  CHECK_FALSE(c.model.use_graphs);
  c.apply_override("train.clip_norm=1.5");
  CHECK(c.train.clip_norm == 1.5);

  CHECK_THROWS_AS(c.apply_override("train.lrr=1"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("train.warmup=-3"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("train.warmup=abc"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("model.use_graphs=1"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("prune.strategy=oracle"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("noequals"), ConfigError);
}

TEST_CASE("resolution order: file, overrides, seed variable") {
  const auto path = std::filesystem::temp_directory_path() / ("psg_config_" + std::to_string(::getpid()) + ".json");
  {
    std::ofstream out(path);
    out << R"({"preset": "small", "train.seed": 5, "train.patience": 3})";
  }
  const std::vector<std::string> overrides{"train.patience=4"};
  RunConfig c = RunConfig::resolve(path, overrides, nullptr);
  CHECK(c.preset == "small");
  CHECK(c.train.seed == 5);
  CHECK(c.train.patience == 4);

  c = RunConfig::resolve(path, overrides, "17");
  CHECK(c.train.seed == 17);
  CHECK(c.synth.seed == 17);
  CHECK_THROWS_AS(RunConfig::resolve(path, overrides, "x1"), ConfigError);

  {
    std::ofstream out(path);
    out << "{not json";
  }
  CHECK_THROWS_AS(RunConfig::resolve(path, {}, nullptr), ConfigError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(RunConfig::resolve(path, {}, nullptr), ConfigError);

  const std::vector<std::string> bad{"prune.threshold=-0.5"};
  CHECK_THROWS_AS(RunConfig::resolve(std::nullopt, bad, nullptr), ConfigError);
  const std::vector<std::string> no_loss{"model.use_graphs=false", "model.text_only_loss=false"};
  CHECK_THROWS_AS(RunConfig::resolve(std::nullopt, no_loss, nullptr), ConfigError);
}
