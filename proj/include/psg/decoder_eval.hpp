// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Beam search and evaluation metrics: corpus BLEU-4, an exact-match METEOR,
// perplexity and the perplexity-based disambiguation accuracy.

#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psg/model.hpp"

namespace psg {

struct BeamConfig {
  std::size_t beam = 5;
  std::size_t max_length = 128;  // generated tokens, eos included
  double length_penalty = 1.0;   // score = log p / length^α

  void validate() const;
};

struct Hypothesis {
  std::vector<int> tokens;  // without bos and eos
  double log_prob = 0.0;
  double score = 0.0;       // length-normalized
  bool truncated = false;   // max length reached before eos
};

/// Pad and bos are never generated. Candidates are ranked by log-probability,
/// then by parent rank, then by token id, so the search is deterministic and
/// beam 1 is greedy decoding.
Hypothesis beam_search(const Model& model, const Example& source, const BeamConfig& config);
Hypothesis greedy_decode(const Model& model, const Example& source, std::size_t max_length);

/// Splits on whitespace and isolates ASCII punctuation; case is kept.
std::vector<std::string> bleu_tokenize(std::string_view text);

struct BleuOptions {
  /// (1 − r)·exp(mean log Pₙ) with r = reference/hypothesis length, the brevity
  /// factor as printed in some write-ups; negative for r > 1. Off by default.
  bool literal_brevity = false;
};

struct BleuResult {
  double score = 0.0;  // 0..100 under the standard penalty
  std::array<double, 4> precisions{};
  double brevity_penalty = 0.0;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;
};

/// Corpus BLEU-4 with clipped counts and no smoothing; any zero precision gives 0.
BleuResult corpus_bleu(std::span<const std::vector<std::string>> hypotheses,
                       std::span<const std::vector<std::string>> references, BleuOptions options = {});

struct MeteorConfig {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;

  void validate() const;
};

/// (1 − γ·(chunks/m)^β) · PR / (αP + (1 − α)R) over an exact unigram alignment
/// with the maximum match count, built by greedy longest-run tiling to keep
/// the chunk count low.
double meteor_lite(std::span<const std::string> hypothesis, std::span<const std::string> reference,
                   const MeteorConfig& config = {});

/// exp of the mean teacher-forced negative log-likelihood per target token, eos included.
double perplexity(const Model& model, const Example& example);

struct DisambiguationItem {
  Example positive;  // correct target
  Example negative;  // same source and graphs, wrong target
};

/// Fraction of items with PPL(positive) < PPL(negative); ties count as misses.
double disambiguation_accuracy(const Model& model, std::span<const DisambiguationItem> items);

}  // namespace psg
