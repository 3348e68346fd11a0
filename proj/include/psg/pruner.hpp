// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Language-guided pruning of visual scene-graph nodes.
//
// Each step scores every surviving visual node by its attention mass from the
// language nodes, drops nodes whose mean score falls below τ times the uniform
// share, and adds a weighted KL term between the pooled visual and language
// feature distributions. Selection is a hard, non-differentiable choice;
// gradients reach the model through the surviving rows and the KL terms.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "psg/tensor.hpp"

namespace psg {

enum class StepWeighting {
  step_index,  // step s contributes s · KL
  constant,    // every step contributes λ · KL
};

enum class PruneStrategy {
  language_guided,
  random,  // keeps as many nodes as the guided rule would, chosen uniformly
};

struct PruneConfig {
  std::size_t steps = 5;   // λ
  double threshold = 0.2;  // τ
  bool keep_at_least_one = true;
  StepWeighting weighting = StepWeighting::step_index;
  PruneStrategy strategy = PruneStrategy::language_guided;

  void validate() const;
};

struct PruneStepTrace {
  std::size_t visual_nodes = 0;       // rows of `attention` at this step
  std::size_t language_nodes = 0;     // columns of `attention`
  std::vector<double> attention;      // row-major visual × language
  std::vector<double> mean_scores;    // one per visual node at this step
  std::vector<std::size_t> kept;      // original visual node ids surviving the step
  double kl = 0.0;
  double weight = 0.0;
};

struct PruneTrace {
  std::size_t visual_nodes = 0;
  std::size_t language_nodes = 0;
  std::vector<PruneStepTrace> steps;
  std::vector<std::size_t> final_kept;
};

/// α[i, j] = softmax over visual nodes i of f_v[i]·f_l[j]; every column sums to 1.
Tensor cross_attention(const Tensor& fv, const Tensor& fl);

/// Row means of α: the average attention each visual node receives.
std::vector<double> mean_scores(const Tensor& alpha);

/// Indices i with scores[i] >= (τ / n) Σ scores. An empty result becomes the
/// argmax (lowest index on ties) when `keep_at_least_one` is set.
std::vector<std::size_t> select_nodes(std::span<const double> scores, double tau, bool keep_at_least_one);

struct PruneStep {
  std::vector<std::size_t> kept;
  Tensor features;
};

PruneStep prune_step(const Tensor& fv, std::span<const double> scores, double tau, bool keep_at_least_one = true);

/// KL(softmax(mean_rows(fv)) ‖ softmax(mean_rows(fl))).
Tensor pooled_kl(const Tensor& fv, const Tensor& fl);

/// Σ_s w_s · KL over the per-step pruned features; exactly 0 for no steps.
Tensor prune_loss(std::span<const Tensor> step_features, const Tensor& fl,
                  StepWeighting weighting = StepWeighting::step_index);

struct PruneResult {
  Tensor features;
  Tensor loss;
  PruneTrace trace;
};

/// Runs config.steps rounds of attention → mean scores → selection, recomputing
/// attention over the survivors each round. `seed` drives random selection only.
PruneResult multi_step_prune(const Tensor& fv, const Tensor& fl, const PruneConfig& config,
                             std::uint64_t seed = 0);

}  // namespace psg
