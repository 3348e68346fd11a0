// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// psg: command-line entry point. Exit codes: 0 ok, 2 usage or configuration,
// 3 data, 4 numeric failure. Failures print one JSON line on stderr.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "psg/bpe.hpp"
#include "psg/config.hpp"
#include "psg/dataset.hpp"
#include "psg/pipeline.hpp"
#include "psg/synth.hpp"
#include "psg/tensor.hpp"
#include "psg/trainer.hpp"

namespace fs = std::filesystem;

namespace {

int fail(int code, std::string_view kind, std::string_view message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
  return code;
}

std::optional<fs::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

void emit(const nlohmann::json& report, const std::string& out) {
  const std::string text = report.dump(2) + "\n";
  if (!out.empty()) psg::write_file_atomic(out, text);
  std::cout << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal translation with progressive scene-graph pruning"};
  app.require_subcommand(1);

  std::string spec_file, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic parallel corpus with scene graphs");
  synth->add_option("--spec", spec_file, "Synthetic corpus spec (JSON); defaults when omitted")->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::vector<std::string> corpus_files;
  std::size_t merges = 10000;
  std::string bpe_out;
  auto* bpe = app.add_subcommand("bpe-train", "Learn a BPE model");
  bpe->add_option("--corpus", corpus_files, "Text files, one sentence per line")->required()->check(CLI::ExistingFile);
  bpe->add_option("--merges", merges, "Number of merge operations");
  bpe->add_option("--out", bpe_out, "Model file")->required();

  std::string config_file, data_dir, train_out;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "Train a model on a corpus directory");
  train->add_option("--config", config_file, "Flat JSON config with dotted keys")->check(CLI::ExistingFile);
  train->add_option("--data", data_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_option("--set", overrides, "Override, key=value (repeatable)");

  std::string ckpt, src_file, graphs_dir, translate_out;
  psg::BeamConfig beam;
  auto* translate = app.add_subcommand("translate", "Beam-search translation");
  translate->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  translate->add_option("--src", src_file, "Source sentences")->required()->check(CLI::ExistingFile);
  translate->add_option("--graphs", graphs_dir, "Directory with <i>.visual.json and <i>.language.json")
      ->check(CLI::ExistingDirectory);
  translate->add_option("--beam", beam.beam, "Beam size");
  translate->add_option("--max-length", beam.max_length, "Maximum generated tokens");
  translate->add_option("--length-penalty", beam.length_penalty, "Length normalization exponent");
  translate->add_option("--out", translate_out, "Hypothesis file")->required();

  std::size_t last = 10;
  std::string avg_dir, avg_out;
  auto* avg = app.add_subcommand("avg-ckpt", "Average the last K checkpoints");
  avg->add_option("--last", last, "Number of checkpoints");
  avg->add_option("--dir", avg_dir, "Directory with checkpoint_<n>.bin")->required()->check(CLI::ExistingDirectory);
  avg->add_option("--out", avg_out, "Averaged checkpoint")->required();

  std::string hyp, ref, items, eval_ckpt, eval_graphs, answer_key, split = "test", eval_out;
  auto* eval = app.add_subcommand("eval", "BLEU, METEOR-lite and accuracy report");
  eval->add_option("--hyp", hyp, "Hypotheses")->required()->check(CLI::ExistingFile);
  eval->add_option("--ref", ref, "References")->required()->check(CLI::ExistingFile);
  eval->add_option("--items", items, "Contrastive items (JSONL)")->check(CLI::ExistingFile);
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint scoring the items")->check(CLI::ExistingFile);
  eval->add_option("--graphs", eval_graphs, "Graphs for the items")->check(CLI::ExistingDirectory);
  eval->add_option("--answer-key", answer_key, "Synthetic answer key")->check(CLI::ExistingFile);
  eval->add_option("--split", split, "Answer-key split");
  bool literal_brevity = false;
  eval->add_flag("--literal-brevity", literal_brevity, "Use the (1 - r) brevity factor instead of the standard penalty");
  eval->add_option("--out", eval_out, "Report file (also printed)");

  std::string stats_dir, stats_out;
  double threshold = 0.3;
  auto* stats = app.add_subcommand("stats", "Entity statistics over scene-graph files");
  stats->add_option("--graphs", stats_dir, "Graph directory (searched recursively)")->required()->check(
      CLI::ExistingDirectory);
  stats->add_option("--threshold", threshold, "Confidence threshold for reliable visual entities");
  stats->add_option("--out", stats_out, "Report file (also printed)");

  std::string pa_ckpt, pa_data, example, pa_out;
  auto* prune = app.add_subcommand("prune-analyze", "Pruning trace and attention heat maps for one example");
  prune->add_option("--ckpt", pa_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  prune->add_option("--data", pa_data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  prune->add_option("--example", example, "Example id, <split>-<index>")->required();
  prune->add_option("--out", pa_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ValidationError& e) {
    return fail(3, "data", e.what());  // missing input files and directories
  } catch (const CLI::ParseError& e) {
    return fail(2, "usage", e.what());
  }

  const char* env_seed = std::getenv("PSG_SEED");
  try {
    if (*synth) {
      psg::SynthSpec spec;
      if (!spec_file.empty()) {
        std::ifstream in(spec_file);
        const auto j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded()) throw psg::ConfigError(spec_file + " is not valid JSON");
        try {
          spec = psg::SynthSpec::from_json(j);
        } catch (const std::exception& e) {
          throw psg::ConfigError(e.what());
        }
      }
      if (env_seed && *env_seed) spec.seed = psg::RunConfig::resolve(std::nullopt, {}, env_seed).synth.seed;
      try {
        spec.validate();
      } catch (const std::invalid_argument& e) {
        throw psg::ConfigError(e.what());
      }
      const auto corpus = psg::generate(spec);
      psg::write_corpus(corpus, synth_out);
      nlohmann::json summary = {{"out", fs::absolute(synth_out).string()}, {"spec", spec.to_json()}};
      for (const auto& [name, sentences] : corpus.splits) summary["sentences"][name] = sentences.size();
      std::cout << summary.dump() << std::endl;
    } else if (*bpe) {
      std::vector<std::string> lines;
      for (const auto& f : corpus_files) {
        auto l = psg::read_lines(f);
        lines.insert(lines.end(), l.begin(), l.end());
      }
      const auto model = psg::bpe_train(lines, merges);
      psg::write_file_atomic(bpe_out, model.serialize());
      const nlohmann::json echo = {{"corpus", corpus_files}, {"merges", merges}, {"vocab", model.vocab_size()}};
      psg::write_file_atomic(bpe_out + ".config.json", echo.dump(2) + "\n");
      std::cout << echo.dump() << std::endl;
    } else if (*train) {
      const auto config = psg::RunConfig::resolve(optional_path(config_file), overrides, env_seed);
      const auto run = psg::run_train(config, data_dir, train_out);
      std::cout << run.summary.dump() << std::endl;
    } else if (*translate) {
      psg::run_translate(ckpt, src_file, optional_path(graphs_dir), beam, translate_out);
    } else if (*avg) {
      const auto used = psg::run_average(avg_dir, last, avg_out);
      nlohmann::json echo = {{"out", fs::absolute(avg_out).string()}, {"last", last}};
      for (const auto& p : used) echo["checkpoints"].push_back(p.filename().string());
      psg::write_file_atomic(avg_out + ".config.json", echo.dump(2) + "\n");
      std::cout << echo.dump() << std::endl;
    } else if (*eval) {
      psg::EvalRequest req;
      req.hypotheses = hyp;
      req.references = ref;
      req.items = optional_path(items);
      req.checkpoint = optional_path(eval_ckpt);
      req.graphs = optional_path(eval_graphs);
      req.answer_key = optional_path(answer_key);
      req.split = split;
      req.literal_brevity = literal_brevity;
      emit(psg::evaluate_files(req), eval_out);
    } else if (*stats) {
      emit(psg::graph_stats(stats_dir, threshold), stats_out);
    } else if (*prune) {
      const auto report = psg::run_prune_analysis(pa_ckpt, pa_data, example, pa_out);
      std::cout << nlohmann::json{{"out", fs::absolute(pa_out).string()},
                                  {"steps", report.at("steps").size()},
                                  {"final_kept_labels", report.at("final_kept_labels")}}
                       .dump()
                << std::endl;
    }
  } catch (const psg::ConfigError& e) {
    return fail(2, "config", e.what());
  } catch (const psg::NumericError& e) {
    return fail(4, "numeric", e.what());
  } catch (const std::exception& e) {
    return fail(3, "data", e.what());
  }
  return 0;
}
