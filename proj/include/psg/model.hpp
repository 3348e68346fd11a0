// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// The full translation model: scene-graph encoding, language-guided pruning of
// the visual graph, joint encoding with the source text, and decoding.

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "psg/backbone.hpp"
#include "psg/graph_encoder.hpp"
#include "psg/params.hpp"
#include "psg/pruner.hpp"

namespace psg {

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t vocab = 0;
  std::size_t label_dim = 512;   // d_c
  std::size_t visual_dim = 512;  // d_v
  std::size_t projection_depth = 1;  // affine maps into the shared space
  bool use_graphs = true;
  bool text_only_loss = true;  // adds the text-only decoder pass to the objective
  PruneConfig prune;

  void validate() const;
};

struct GraphInputs {
  VectorizedSceneGraph language;
  VectorizedSceneGraph visual;
};

struct Example {
  std::string id;
  std::vector<int> source;  // no bos/eos
  std::vector<int> target;  // no bos/eos
  std::shared_ptr<const GraphInputs> graphs;
};

struct LossParts {
  Tensor total;
  double mmt = 0.0;
  double prune = 0.0;
  double nmt = 0.0;
  std::size_t tokens = 0;
};

/// Decoder input [bos, t...] and output [t..., eos].
std::vector<int> decoder_input(std::span<const int> target);
std::vector<int> decoder_output(std::span<const int> target);

class Model {
 public:
  /// Parameters for `config` drawn from `seed`: the backbone's plus "graph.*".
  static ParameterStore init_parameters(const ModelConfig& config, std::uint64_t seed);

  Model(ModelConfig config, const ParameterStore& store);

  const ModelConfig& config() const noexcept { return config_; }
  const Backbone& backbone() const noexcept { return backbone_; }
  const GcnParams& language_gcn() const noexcept { return lang_gcn_; }
  const GcnParams& visual_gcn() const noexcept { return vis_gcn_; }

  /// Joint encoding when graphs are enabled and attached, text-only otherwise.
  /// `prune_loss` receives the mean pruning loss over examples with graphs.
  EncodedBatch encode(std::span<const Example* const> batch, ForwardContext& ctx, Tensor* prune_loss = nullptr,
                      std::vector<PruneTrace>* traces = nullptr) const;

  /// L = L_mmt + L_prune + L_nmt. Without graphs only the text-only term is present.
  LossParts loss(std::span<const Example* const> batch, ForwardContext& ctx, double smoothing) const;

  /// Teacher-forced log-likelihood of each example's target (eos included).
  std::vector<std::pair<double, std::size_t>> target_log_likelihood(std::span<const Example* const> batch) const;

 private:
  ModelConfig config_;
  Backbone backbone_;
  GcnParams lang_gcn_, vis_gcn_;
};

}  // namespace psg
