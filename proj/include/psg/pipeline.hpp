// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// File-level workflows behind the command-line tool: training from a corpus
// directory, translation, checkpoint averaging, evaluation reports, graph
// statistics and pruning analysis. Every output file is written atomically.

#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "psg/bpe.hpp"
#include "psg/config.hpp"
#include "psg/dataset.hpp"
#include "psg/graph_encoder.hpp"
#include "psg/model.hpp"
#include "psg/trainer.hpp"

namespace psg {

/// Everything needed to run a trained model. The checkpoint's config JSON holds
/// the run configuration, data-derived widths, the BPE model and the label
/// table, so a checkpoint file is self-contained.
struct ModelBundle {
  RunConfig run;
  ModelConfig model;  // vocab, label_dim and visual_dim resolved
  BpeModel bpe;
  EmbeddingProvider labels = EmbeddingProvider::synthetic(1, 0);
  ParameterStore params;

  nlohmann::json config_json() const;
  static ModelBundle from_checkpoint(const Checkpoint& ckpt);
  static ModelBundle load(const std::filesystem::path& checkpoint);
};

struct TrainRun {
  TrainReport report;
  std::filesystem::path averaged;  // `<out>/averaged.bin`
  nlohmann::json summary;          // contents of `<out>/report.json`
};

/// Trains on `<data>/train.{src,tgt}` (validation on `valid.*` when present).
/// BPE comes from `<data>/bpe.model` or is learned from the training split; labels
/// from `<data>/labels.emb` or a synthetic table. Writes `config.json`, `bpe.model`,
/// `train_log.jsonl`, `checkpoints/`, `averaged.bin` (mean of the last
/// `average_last` checkpoints) and `report.json` under `out`.
TrainRun run_train(const RunConfig& config, const std::filesystem::path& data, const std::filesystem::path& out);

/// Beam-search translation of each line of `sources`; graphs for line i are read
/// from `<graphs>/<i>.{visual,language}.json` when `graphs` is given.
std::vector<std::string> translate_lines(const ModelBundle& bundle, const std::vector<std::string>& sources,
                                         const std::optional<std::filesystem::path>& graphs, const BeamConfig& beam);

/// Writes hypotheses one per line to `out` and the resolved settings to `<out>.config.json`.
void run_translate(const std::filesystem::path& checkpoint, const std::filesystem::path& sources,
                   const std::optional<std::filesystem::path>& graphs, const BeamConfig& beam,
                   const std::filesystem::path& out);

/// `checkpoint_<n>.bin` files in `dir` ordered by n.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir);

/// Averages the last `k` checkpoints of `dir` into `out`; returns the files used.
std::vector<std::filesystem::path> run_average(const std::filesystem::path& dir, std::size_t k,
                                               const std::filesystem::path& out);

struct EvalRequest {
  std::filesystem::path hypotheses;
  std::filesystem::path references;
  /// Contrastive items (JSONL with "positive" and "negative" targets) scored by
  /// `checkpoint`; graphs for item `index` come from `<graphs>/<index>.*.json`.
  std::optional<std::filesystem::path> items;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> graphs;
  /// Synthetic answer key and the split the hypotheses belong to.
  std::optional<std::filesystem::path> answer_key;
  std::string split = "test";
  /// Reports BLEU with the (1 − r)·exp(…) brevity factor instead of the standard one.
  bool literal_brevity = false;
};

/// {bleu, bleu_detail, meteor_lite, comet: "n/a", accuracy?, ambiguous_accuracy?,
/// n_examples, tokenization, config}.
nlohmann::json evaluate_files(const EvalRequest& request);

/// Visual and language entity statistics over every graph file under `dir`,
/// with the published Multi30K figures listed for comparison.
nlohmann::json graph_stats(const std::filesystem::path& dir, double threshold);

/// `<split>-<index>` → (split, index). Throws DataError for other shapes.
std::pair<std::string, std::size_t> parse_example_id(const std::string& id);

/// Prune trace of one example as JSON plus one SVG heat map per step, both
/// written under `out` (`trace.json`, `step_<s>.svg`). Returns the JSON.
nlohmann::json run_prune_analysis(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                                  const std::string& example_id, const std::filesystem::path& out);

/// Attention heat map: rows are visual nodes, columns language nodes; rows that
/// survive the step are marked.
std::string attention_svg(const PruneStepTrace& step, const std::vector<std::string>& row_labels,
                          const std::vector<std::string>& column_labels, const std::vector<bool>& row_kept);

}  // namespace psg
