// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus directories on disk and their conversion to model examples.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "psg/bpe.hpp"
#include "psg/graph_encoder.hpp"
#include "psg/model.hpp"
#include "psg/scene_graph.hpp"

namespace psg {

/// Missing or inconsistent corpus files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParallelSentence {
  std::string id;
  std::string source;
  std::string target;  // empty when only the source side is known
  std::optional<SceneGraph> language, visual;
};

/// Reads lines from a UTF-8 text file; a trailing newline does not add a line.
std::vector<std::string> read_lines(const std::filesystem::path& file);

/// `<dir>/<split>.src`, optional `<dir>/<split>.tgt`, and per line i the optional
/// pair `<graphs>/<split>/<i>.visual.json` + `<i>.language.json`. `graphs`
/// defaults to `<dir>/graphs`. A sentence with only one of the two graphs is an error.
std::vector<ParallelSentence> load_split(const std::filesystem::path& dir, const std::string& split,
                                         const std::optional<std::filesystem::path>& graphs = std::nullopt);

/// Graph pair of sentence `index` under `<graphs>/<split>/`, if present.
std::optional<std::pair<SceneGraph, SceneGraph>> load_graph_pair(const std::filesystem::path& graphs,
                                                                 const std::string& split, std::size_t index);

/// Tokenizes both sides and vectorizes graphs when `labels` is given; sentences
/// without graphs, or all sentences when `labels` is null, become text-only.
std::vector<Example> make_examples(std::span<const ParallelSentence> sentences, const BpeModel& bpe,
                                   const EmbeddingProvider* labels);

}  // namespace psg
