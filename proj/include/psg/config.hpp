// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat JSON objects with dotted keys, layered as defaults,
// optional size preset, config file, command-line overrides, then PSG_SEED.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "psg/decoder_eval.hpp"
#include "psg/model.hpp"
#include "psg/synth.hpp"
#include "psg/trainer.hpp"

namespace psg {

/// Unknown keys, wrongly typed values, or invalid combinations.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  ModelConfig model;  // vocab and graph widths are filled in from the data
  TrainConfig train;
  BeamConfig beam;
  SynthSpec synth;
  std::size_t bpe_merges = 10000;
  std::size_t average_last = 10;
  std::size_t label_dim = 512;     // width of generated label embeddings when no table is given
  std::uint64_t label_seed = 0;
  std::string preset;  // empty: no preset applied

  RunConfig();

  /// Every addressable key with its current value.
  nlohmann::json to_json() const;

  /// Applies a flat object. A "preset" key is applied first, then the rest.
  void apply(const nlohmann::json& flat);
  /// `key=value`; the value is parsed as JSON and otherwise taken as a string.
  void apply_override(std::string_view assignment);
  /// "tiny", "small", "medium" or "base": layers, heads, width, feed-forward
  /// width, learning rate and the long schedule.
  void apply_preset(std::string_view name);

  /// Checks cross-field constraints; throws ConfigError.
  void validate() const;

  /// Defaults, then `file` (if any), then `overrides`, then `env_seed` which sets
  /// train.seed and synth.seed when non-null.
  static RunConfig resolve(const std::optional<std::filesystem::path>& file, std::span<const std::string> overrides,
                           const char* env_seed);
};

}  // namespace psg
