// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <type_traits>

namespace psg {

namespace {

struct Field {
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

template <typename T>
T typed(const std::string& key, const nlohmann::json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("config key '" + key + "' expects true or false");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned()) throw ConfigError("config key '" + key + "' expects a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' expects a number");
  } else {
    if (!v.is_string()) throw ConfigError("config key '" + key + "' expects a string");
  }
  return v.get<T>();
}

template <typename T>
Field field(const std::string& key, T RunConfig::*outer) {
  return {[outer](const RunConfig& c) { return nlohmann::json(c.*outer); },
          [outer, key](RunConfig& c, const nlohmann::json& v) { c.*outer = typed<T>(key, v); }};
}

template <typename S, typename T>
Field field(const std::string& key, S RunConfig::*outer, T S::*inner) {
  return {[outer, inner](const RunConfig& c) { return nlohmann::json(c.*outer.*inner); },
          [outer, inner, key](RunConfig& c, const nlohmann::json& v) { c.*outer.*inner = typed<T>(key, v); }};
}

template <typename T>
Field backbone(const std::string& key, T BackboneConfig::*inner) {
  return {[inner](const RunConfig& c) { return nlohmann::json(c.model.backbone.*inner); },
          [inner, key](RunConfig& c, const nlohmann::json& v) { c.model.backbone.*inner = typed<T>(key, v); }};
}

template <typename T>
Field prune(const std::string& key, T PruneConfig::*inner) {
  return {[inner](const RunConfig& c) { return nlohmann::json(c.model.prune.*inner); },
          [inner, key](RunConfig& c, const nlohmann::json& v) { c.model.prune.*inner = typed<T>(key, v); }};
}

template <typename T>
Field adam(const std::string& key, double AdamConfig::*inner) {
  return {[inner](const RunConfig& c) { return nlohmann::json(c.train.adam.*inner); },
          [inner, key](RunConfig& c, const nlohmann::json& v) { c.train.adam.*inner = typed<T>(key, v); }};
}

template <typename E>
Field enumeration(const std::string& key, E PruneConfig::*inner, std::vector<std::pair<std::string, E>> names) {
  return {[inner, names](const RunConfig& c) {
            for (const auto& [n, e] : names) {
              if (e == c.model.prune.*inner) return nlohmann::json(n);
            }
            return nlohmann::json(nullptr);
          },
          [inner, names, key](RunConfig& c, const nlohmann::json& v) {
            const auto s = typed<std::string>(key, v);
            for (const auto& [n, e] : names) {
              if (n == s) {
                c.model.prune.*inner = e;
                return;
              }
            }
            std::string allowed;
            for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + n;
            throw ConfigError("config key '" + key + "' must be one of: " + allowed);
          }};
}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f.emplace("model.layers", backbone("model.layers", &BackboneConfig::layers));
    f.emplace("model.heads", backbone("model.heads", &BackboneConfig::heads));
    f.emplace("model.d_model", backbone("model.d_model", &BackboneConfig::d_model));
    f.emplace("model.d_ff", backbone("model.d_ff", &BackboneConfig::d_ff));
    f.emplace("model.dropout", backbone("model.dropout", &BackboneConfig::dropout));
    f.emplace("model.max_positions", backbone("model.max_positions", &BackboneConfig::max_positions));
    f.emplace("model.segment_embeddings", backbone("model.segment_embeddings", &BackboneConfig::segment_embeddings));
    f.emplace("model.learned_positions", backbone("model.learned_positions", &BackboneConfig::learned_positions));
    f.emplace("model.tie_output", backbone("model.tie_output", &BackboneConfig::tie_output));
    f.emplace("model.use_graphs", field("model.use_graphs", &RunConfig::model, &ModelConfig::use_graphs));
    f.emplace("model.projection_depth",
              field("model.projection_depth", &RunConfig::model, &ModelConfig::projection_depth));
    f.emplace("model.text_only_loss", field("model.text_only_loss", &RunConfig::model, &ModelConfig::text_only_loss));

    f.emplace("prune.steps", prune("prune.steps", &PruneConfig::steps));
    f.emplace("prune.threshold", prune("prune.threshold", &PruneConfig::threshold));
    f.emplace("prune.keep_at_least_one", prune("prune.keep_at_least_one", &PruneConfig::keep_at_least_one));
    f.emplace("prune.weighting",
              enumeration("prune.weighting", &PruneConfig::weighting,
                          {{"step_index", StepWeighting::step_index}, {"constant", StepWeighting::constant}}));
    f.emplace("prune.strategy",
              enumeration("prune.strategy", &PruneConfig::strategy,
                          {{"language_guided", PruneStrategy::language_guided}, {"random", PruneStrategy::random}}));

    f.emplace("train.lr", field("train.lr", &RunConfig::train, &TrainConfig::peak_lr));
    f.emplace("train.warmup", field("train.warmup", &RunConfig::train, &TrainConfig::warmup));
    f.emplace("train.beta1", adam<double>("train.beta1", &AdamConfig::beta1));
    f.emplace("train.beta2", adam<double>("train.beta2", &AdamConfig::beta2));
    f.emplace("train.eps", adam<double>("train.eps", &AdamConfig::eps));
    f.emplace("train.label_smoothing", field("train.label_smoothing", &RunConfig::train, &TrainConfig::label_smoothing));
    f.emplace("train.batch_tokens", field("train.batch_tokens", &RunConfig::train, &TrainConfig::batch_tokens));
    f.emplace("train.max_updates", field("train.max_updates", &RunConfig::train, &TrainConfig::max_updates));
    f.emplace("train.max_epochs", field("train.max_epochs", &RunConfig::train, &TrainConfig::max_epochs));
    f.emplace("train.patience", field("train.patience", &RunConfig::train, &TrainConfig::patience));
    f.emplace("train.seed", field("train.seed", &RunConfig::train, &TrainConfig::seed));
    f.emplace("train.clip_norm", field("train.clip_norm", &RunConfig::train, &TrainConfig::clip_norm));
    f.emplace("train.save_checkpoints", field("train.save_checkpoints", &RunConfig::train, &TrainConfig::save_checkpoints));
    f.emplace("train.average_last", field("train.average_last", &RunConfig::average_last));

    f.emplace("beam.size", field("beam.size", &RunConfig::beam, &BeamConfig::beam));
    f.emplace("beam.max_length", field("beam.max_length", &RunConfig::beam, &BeamConfig::max_length));
    f.emplace("beam.length_penalty", field("beam.length_penalty", &RunConfig::beam, &BeamConfig::length_penalty));

    f.emplace("bpe.merges", field("bpe.merges", &RunConfig::bpe_merges));
    f.emplace("labels.dim", field("labels.dim", &RunConfig::label_dim));
    f.emplace("labels.seed", field("labels.seed", &RunConfig::label_seed));

    f.emplace("synth.seed", field("synth.seed", &RunConfig::synth, &SynthSpec::seed));
    f.emplace("synth.nouns", field("synth.nouns", &RunConfig::synth, &SynthSpec::nouns));
    f.emplace("synth.relations", field("synth.relations", &RunConfig::synth, &SynthSpec::relations));
    f.emplace("synth.min_nouns", field("synth.min_nouns", &RunConfig::synth, &SynthSpec::min_nouns));
    f.emplace("synth.max_nouns", field("synth.max_nouns", &RunConfig::synth, &SynthSpec::max_nouns));
    f.emplace("synth.ambiguous_types", field("synth.ambiguous_types", &RunConfig::synth, &SynthSpec::ambiguous_types));
    f.emplace("synth.senses", field("synth.senses", &RunConfig::synth, &SynthSpec::senses));
    f.emplace("synth.distractors", field("synth.distractors", &RunConfig::synth, &SynthSpec::distractors));
    f.emplace("synth.embedding_dim", field("synth.embedding_dim", &RunConfig::synth, &SynthSpec::embedding_dim));
    f.emplace("synth.feature_scale", field("synth.feature_scale", &RunConfig::synth, &SynthSpec::feature_scale));
    f.emplace("synth.feature_noise", field("synth.feature_noise", &RunConfig::synth, &SynthSpec::feature_noise));
    f.emplace("synth.train", field("synth.train", &RunConfig::synth, &SynthSpec::train));
    f.emplace("synth.valid", field("synth.valid", &RunConfig::synth, &SynthSpec::valid));
    f.emplace("synth.test", field("synth.test", &RunConfig::synth, &SynthSpec::test));
    return f;
  }();
  return fields;
}

}  // namespace

RunConfig::RunConfig() { model.vocab = 0; }

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  j["preset"] = preset;
  for (const auto& [key, f] : registry()) j[key] = f.get(*this);
  return j;
}

void RunConfig::apply(const nlohmann::json& flat) {
  if (!flat.is_object()) throw ConfigError("configuration must be a JSON object with dotted keys");
  if (flat.contains("preset")) apply_preset(typed<std::string>("preset", flat.at("preset")));
  for (const auto& [key, value] : flat.items()) {
    if (key == "preset") continue;
    const auto it = registry().find(key);
    if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(*this, value);
  }
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("override must look like key=value: " + std::string(assignment));
  const std::string key(assignment.substr(0, eq)), raw(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  apply(nlohmann::json{{key, value}});
}

void RunConfig::apply_preset(std::string_view name) {
  struct Size {
    std::size_t layers, heads, d;
    double lr;
  };
  static const std::map<std::string, Size, std::less<>> sizes{
      {"tiny", {4, 4, 128, 0.005}}, {"small", {6, 8, 128, 0.001}}, {"medium", {6, 8, 256, 0.001}}, {"base", {6, 8, 512, 0.0005}}};
  if (name.empty()) {
    preset.clear();
    return;
  }
  const auto it = sizes.find(name);
  if (it == sizes.end()) throw ConfigError("unknown preset '" + std::string(name) + "' (tiny, small, medium, base)");
  const Size& s = it->second;
  model.backbone.layers = s.layers;
  model.backbone.heads = s.heads;
  model.backbone.d_model = s.d;
  model.backbone.d_ff = 4 * s.d;
  train.peak_lr = s.lr;
  train.warmup = 20000;
  train.max_updates = 80000;
  train.batch_tokens = 4096;
  preset = std::string(name);
}

void RunConfig::validate() const {
  try {
    model.backbone.validate();
    model.prune.validate();
    train.validate();
    beam.validate();
    synth.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (model.projection_depth == 0) throw ConfigError("model.projection_depth must be at least 1");
  if (!model.use_graphs && !model.text_only_loss) throw ConfigError("model.use_graphs=false requires model.text_only_loss=true");
  if (label_dim == 0) throw ConfigError("labels.dim must be positive");
  if (average_last == 0) throw ConfigError("train.average_last must be positive");
}

RunConfig RunConfig::resolve(const std::optional<std::filesystem::path>& file, std::span<const std::string> overrides,
                             const char* env_seed) {
  RunConfig c;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + file->string() + " is not valid JSON");
    c.apply(j);
  }
  for (const auto& o : overrides) c.apply_override(o);
  if (env_seed && *env_seed) {
    std::uint64_t seed = 0;
    try {
      std::size_t used = 0;
      seed = std::stoull(env_seed, &used);
      if (env_seed[used] != '\0') throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError(std::string("PSG_SEED must be a non-negative integer, got '") + env_seed + "'");
    }
    c.train.seed = seed;
    c.synth.seed = seed;
  }
  c.validate();
  return c;
}

}  // namespace psg
