// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/dataset.hpp"

#include <fstream>

namespace psg {

std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::optional<std::pair<SceneGraph, SceneGraph>> load_graph_pair(const std::filesystem::path& graphs,
                                                                 const std::string& split, std::size_t index) {
  const auto base = graphs / split / std::to_string(index);
  const std::filesystem::path vis = base.string() + ".visual.json", lang = base.string() + ".language.json";
  const bool has_vis = std::filesystem::exists(vis), has_lang = std::filesystem::exists(lang);
  if (!has_vis && !has_lang) return std::nullopt;
  if (has_vis != has_lang) {
    throw DataError("sentence " + std::to_string(index) + " of " + split + " has only one of its two graphs");
  }
  const auto read_one = [](const std::filesystem::path& p, Modality expected) {
    auto graphs = load_scene_graphs(p);
    if (graphs.size() != 1) throw DataError(p.string() + ": expected exactly one graph");
    if (graphs[0].modality() != expected) throw DataError(p.string() + ": wrong modality");
    return std::move(graphs[0]);
  };
  return std::make_pair(read_one(lang, Modality::language), read_one(vis, Modality::visual));
}

std::vector<ParallelSentence> load_split(const std::filesystem::path& dir, const std::string& split,
                                         const std::optional<std::filesystem::path>& graphs) {
  const auto src = read_lines(dir / (split + ".src"));
  std::vector<std::string> tgt;
  if (std::filesystem::exists(dir / (split + ".tgt"))) {
    tgt = read_lines(dir / (split + ".tgt"));
    if (tgt.size() != src.size()) {
      throw DataError(split + ": " + std::to_string(src.size()) + " source lines but " + std::to_string(tgt.size()) +
                      " target lines");
    }
  }
  const std::filesystem::path graph_dir = graphs.value_or(dir / "graphs");
  std::vector<ParallelSentence> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[i].id = split + "-" + std::to_string(i);
    out[i].source = src[i];
    if (!tgt.empty()) out[i].target = tgt[i];
    if (auto pair = load_graph_pair(graph_dir, split, i)) {
      out[i].language = std::move(pair->first);
      out[i].visual = std::move(pair->second);
    }
  }
  return out;
}

std::vector<Example> make_examples(std::span<const ParallelSentence> sentences, const BpeModel& bpe,
                                   const EmbeddingProvider* labels) {
  std::vector<Example> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    Example ex;
    ex.id = s.id;
    ex.source = bpe.encode(s.source);
    ex.target = bpe.encode(s.target);
    if (ex.source.empty()) throw DataError(s.id + ": empty source sentence");
    if (labels && s.language && s.visual) {
      auto g = std::make_shared<GraphInputs>();
      g->language = vectorize(*s.language, *labels);
      g->visual = vectorize(*s.visual, *labels);
      ex.graphs = std::move(g);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace psg
