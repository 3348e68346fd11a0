// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "psg/decoder_eval.hpp"
#include "psg/synth.hpp"

namespace psg {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + '\n';
  return out;
}

nlohmann::json labels_json(const EmbeddingProvider& labels) {
  if (labels.is_synthetic()) return {{"synthetic", true}, {"dim", labels.dim()}, {"seed", labels.seed()}};
  return {{"synthetic", false}, {"table", labels.serialize()}};
}

EmbeddingProvider labels_from_json(const nlohmann::json& j) {
  if (j.at("synthetic").get<bool>()) {
    return EmbeddingProvider::synthetic(j.at("dim").get<std::size_t>(), j.at("seed").get<std::uint64_t>());
  }
  return EmbeddingProvider::parse(j.at("table").get<std::string>());
}

// Visual width: features of the first visual graph that has them, labels otherwise.
std::size_t visual_width(std::span<const ParallelSentence> sentences, std::size_t label_dim) {
  for (const auto& s : sentences) {
    if (s.visual && s.visual->feature_dim()) return *s.visual->feature_dim();
  }
  return label_dim;
}

}  // namespace

nlohmann::json ModelBundle::config_json() const {
  nlohmann::json j;
  j["run"] = run.to_json();
  j["model"] = {{"vocab", model.vocab}, {"label_dim", model.label_dim}, {"visual_dim", model.visual_dim}};
  j["bpe"] = bpe.serialize();
  j["labels"] = labels_json(labels);
  return j;
}

ModelBundle ModelBundle::from_checkpoint(const Checkpoint& ckpt) {
  const auto& j = ckpt.config;
  if (!j.is_object() || !j.contains("run") || !j.contains("model") || !j.contains("bpe") || !j.contains("labels")) {
    throw DataError("checkpoint does not carry a model bundle configuration");
  }
  ModelBundle b;
  try {
    b.run.apply(j.at("run"));
    b.model = b.run.model;
    b.model.vocab = j.at("model").at("vocab").get<std::size_t>();
    b.model.label_dim = j.at("model").at("label_dim").get<std::size_t>();
    b.model.visual_dim = j.at("model").at("visual_dim").get<std::size_t>();
    b.bpe = BpeModel::deserialize(j.at("bpe").get<std::string>());
    b.labels = labels_from_json(j.at("labels"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint configuration: ") + e.what());
  }
  b.params = ckpt.params;
  return b;
}

ModelBundle ModelBundle::load(const fs::path& checkpoint) { return from_checkpoint(load_checkpoint(checkpoint)); }

TrainRun run_train(const RunConfig& config, const fs::path& data, const fs::path& out) {
  config.validate();
  const auto train_sentences = load_split(data, "train");
  if (train_sentences.empty()) throw DataError(data.string() + ": empty training split");
  std::vector<ParallelSentence> valid_sentences;
  if (fs::exists(data / "valid.src")) valid_sentences = load_split(data, "valid");

  ModelBundle bundle;
  bundle.run = config;
  if (fs::exists(data / "bpe.model")) {
    bundle.bpe = BpeModel::deserialize(read_text(data / "bpe.model"));
  } else {
    std::vector<std::string> corpus;
    for (const auto& s : train_sentences) {
      corpus.push_back(s.source);
      corpus.push_back(s.target);
    }
    bundle.bpe = bpe_train(corpus, config.bpe_merges);
  }
  bundle.labels = fs::exists(data / "labels.emb") ? EmbeddingProvider::load(data / "labels.emb")
                                                  : EmbeddingProvider::synthetic(config.label_dim, config.label_seed);
  bundle.model = config.model;
  bundle.model.vocab = bundle.bpe.vocab_size();
  bundle.model.label_dim = bundle.labels.dim();
  bundle.model.visual_dim = visual_width(train_sentences, bundle.labels.dim());
  try {
    bundle.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  const EmbeddingProvider* labels = bundle.model.use_graphs ? &bundle.labels : nullptr;
  const auto train_set = make_examples(train_sentences, bundle.bpe, labels);
  const auto valid_set = make_examples(valid_sentences, bundle.bpe, labels);

  fs::create_directories(out / "checkpoints");
  const nlohmann::json snapshot = bundle.config_json();
  nlohmann::json echo = config.to_json();
  echo["data"] = fs::absolute(data).string();
  echo["model.vocab"] = bundle.model.vocab;
  echo["model.label_dim"] = bundle.model.label_dim;
  echo["model.visual_dim"] = bundle.model.visual_dim;
  write_file_atomic(out / "config.json", echo.dump(2) + "\n");
  write_file_atomic(out / "bpe.model", bundle.bpe.serialize());

  ParameterStore params = Model::init_parameters(bundle.model, config.train.seed);
  const fs::path log_tmp = out / "train_log.jsonl.tmp";
  TrainRun run;
  {
    std::ofstream log(log_tmp, std::ios::binary | std::ios::trunc);
    if (!log) throw DataError("cannot write " + log_tmp.string());
    TrainHooks hooks;
    hooks.log = &log;
    hooks.config_snapshot = snapshot;
    hooks.checkpoint_dir = out / "checkpoints";
    run.report = train(config.train, bundle.model, params, train_set, valid_set, hooks);
  }
  fs::rename(log_tmp, out / "train_log.jsonl");

  run.averaged = out / "averaged.bin";
  std::vector<std::string> averaged_from;
  if (run.report.checkpoints.empty()) {
    Checkpoint ckpt;
    ckpt.step = run.report.updates;
    ckpt.config = snapshot;
    ckpt.params = params;
    save_checkpoint(ckpt, run.averaged);
  } else {
    for (const auto& p : run_average(out / "checkpoints", config.average_last, run.averaged)) {
      averaged_from.push_back(p.filename().string());
    }
  }

  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : run.report.history) {
    history.push_back({{"epoch", e.epoch},
                       {"updates", e.updates},
                       {"train_loss", e.train_loss},
                       {"val_loss", e.val_loss},
                       {"improved", e.improved}});
  }
  run.summary = {{"updates", run.report.updates},
                 {"epochs", run.report.epochs},
                 {"stop_reason", run.report.stop_reason},
                 {"best_val_loss", run.report.best_val_loss},
                 {"validation", valid_set.empty() ? "train" : "valid"},
                 {"train_examples", train_set.size()},
                 {"averaged_from", averaged_from},
                 {"history", history}};
  write_file_atomic(out / "report.json", run.summary.dump(2) + "\n");
  return run;
}

std::vector<std::string> translate_lines(const ModelBundle& bundle, const std::vector<std::string>& sources,
                                         const std::optional<fs::path>& graphs, const BeamConfig& beam) {
  beam.validate();
  std::vector<ParallelSentence> sentences(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    sentences[i].id = "line-" + std::to_string(i);
    sentences[i].source = sources[i];
    if (graphs) {
      if (auto pair = load_graph_pair(*graphs, "", i)) {
        sentences[i].language = std::move(pair->first);
        sentences[i].visual = std::move(pair->second);
      }
    }
  }
  const auto examples = make_examples(sentences, bundle.bpe, bundle.model.use_graphs ? &bundle.labels : nullptr);
  const Model model(bundle.model, bundle.params);
  std::vector<std::string> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(bundle.bpe.decode(beam_search(model, ex, beam).tokens));
  return out;
}

void run_translate(const fs::path& checkpoint, const fs::path& sources, const std::optional<fs::path>& graphs,
                   const BeamConfig& beam, const fs::path& out) {
  const ModelBundle bundle = ModelBundle::load(checkpoint);
  const auto lines = read_lines(sources);
  const auto hyps = translate_lines(bundle, lines, graphs, beam);
  write_file_atomic(out, join_lines(hyps));
  const nlohmann::json echo = {{"checkpoint", fs::absolute(checkpoint).string()},
                               {"src", fs::absolute(sources).string()},
                               {"graphs", graphs ? nlohmann::json(fs::absolute(*graphs).string()) : nlohmann::json()},
                               {"beam.size", beam.beam},
                               {"beam.max_length", beam.max_length},
                               {"beam.length_penalty", beam.length_penalty},
                               {"sentences", hyps.size()},
                               {"run", bundle.run.to_json()}};
  write_file_atomic(out.string() + ".config.json", echo.dump(2) + "\n");
}

std::vector<fs::path> list_checkpoints(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<std::pair<std::size_t, fs::path>> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    const std::string prefix = "checkpoint_", suffix = ".bin";
    if (!e.is_regular_file() || !name.starts_with(prefix) || !name.ends_with(suffix)) continue;
    const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      continue;
    }
    found.emplace_back(std::stoull(digits), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [n, p] : found) out.push_back(std::move(p));
  return out;
}

std::vector<fs::path> run_average(const fs::path& dir, std::size_t k, const fs::path& out) {
  if (k == 0) throw ConfigError("--last must be positive");
  auto all = list_checkpoints(dir);
  if (all.empty()) throw DataError("no checkpoint_<n>.bin files in " + dir.string());
  const std::size_t first = all.size() > k ? all.size() - k : 0;
  std::vector<fs::path> used(all.begin() + static_cast<std::ptrdiff_t>(first), all.end());
  std::vector<Checkpoint> ckpts;
  for (const auto& p : used) ckpts.push_back(load_checkpoint(p));
  Checkpoint avg;
  try {
    avg = average_checkpoints(ckpts);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  save_checkpoint(avg, out);
  return used;
}

nlohmann::json evaluate_files(const EvalRequest& request) {
  const auto hyps = read_lines(request.hypotheses);
  const auto refs = read_lines(request.references);
  if (hyps.size() != refs.size()) {
    throw DataError("hypothesis and reference files differ in line count (" + std::to_string(hyps.size()) + " vs " +
                    std::to_string(refs.size()) + ")");
  }
  std::vector<std::vector<std::string>> ht, rt;
  double meteor = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    ht.push_back(bleu_tokenize(hyps[i]));
    rt.push_back(bleu_tokenize(refs[i]));
    meteor += meteor_lite(ht.back(), rt.back());
  }
  const BleuResult bleu = corpus_bleu(ht, rt, BleuOptions{request.literal_brevity});
  nlohmann::json report;
  report["bleu"] = bleu.score;
  report["bleu_detail"] = {{"precisions", bleu.precisions},
                           {"brevity_penalty", bleu.brevity_penalty},
                           {"hypothesis_length", bleu.hypothesis_length},
                           {"reference_length", bleu.reference_length}};
  report["meteor_lite"] = hyps.empty() ? 0.0 : 100.0 * meteor / static_cast<double>(hyps.size());
  report["comet"] = "n/a";
  report["n_examples"] = hyps.size();
  report["tokenization"] = "detokenized text split on whitespace and ASCII punctuation, case-sensitive";

  if (request.items) {
    if (!request.checkpoint) throw ConfigError("--items needs --ckpt to score the contrastive targets");
    const ModelBundle bundle = ModelBundle::load(*request.checkpoint);
    std::vector<ParallelSentence> pos, neg;
    for (const auto& line : read_lines(*request.items)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("source") || !j.contains("positive") || !j.contains("negative")) {
        throw DataError(request.items->string() + ": item lines need source, positive and negative");
      }
      ParallelSentence p;
      p.id = j.value("id", "item-" + std::to_string(pos.size()));
      p.source = j.at("source").get<std::string>();
      p.target = j.at("positive").get<std::string>();
      if (request.graphs) {
        const std::size_t index = j.value("index", pos.size());
        if (auto pair = load_graph_pair(*request.graphs, "", index)) {
          p.language = std::move(pair->first);
          p.visual = std::move(pair->second);
        }
      }
      ParallelSentence n = p;
      n.target = j.at("negative").get<std::string>();
      pos.push_back(std::move(p));
      neg.push_back(std::move(n));
    }
    if (pos.empty()) throw DataError(request.items->string() + ": no items");
    const EmbeddingProvider* labels = bundle.model.use_graphs ? &bundle.labels : nullptr;
    const auto pe = make_examples(pos, bundle.bpe, labels), ne = make_examples(neg, bundle.bpe, labels);
    std::vector<DisambiguationItem> items;
    for (std::size_t i = 0; i < pe.size(); ++i) items.push_back({pe[i], ne[i]});
    report["accuracy"] = 100.0 * disambiguation_accuracy(Model(bundle.model, bundle.params), items);
    report["n_items"] = items.size();
  }
  if (request.answer_key) {
    const auto j = nlohmann::json::parse(read_text(*request.answer_key), nullptr, false);
    if (j.is_discarded() || !j.contains(request.split)) {
      throw DataError(request.answer_key->string() + ": no answer key for split '" + request.split + "'");
    }
    report["ambiguous_accuracy"] = 100.0 * ambiguous_token_accuracy(hyps, AnswerKey::from_json(j.at(request.split)));
  }

  nlohmann::json config = {{"hyp", fs::absolute(request.hypotheses).string()},
                           {"ref", fs::absolute(request.references).string()},
                           {"bleu", request.literal_brevity ? "corpus BLEU-4, literal (1 - r) brevity factor, no smoothing"
                                                            : "corpus BLEU-4, standard brevity penalty, no smoothing"},
                           {"meteor_lite", {{"alpha", 0.9}, {"beta", 3.0}, {"gamma", 0.5}}}};
  if (request.items) config["items"] = fs::absolute(*request.items).string();
  if (request.checkpoint) config["ckpt"] = fs::absolute(*request.checkpoint).string();
  if (request.answer_key) config["answer_key"] = fs::absolute(*request.answer_key).string();
  report["config"] = config;
  return report;
}

nlohmann::json graph_stats(const fs::path& dir, double threshold) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("--threshold must lie in [0, 1]");
  std::vector<SceneGraph> visual, language;
  for (auto& g : load_scene_graph_dir(dir)) {
    (g.modality() == Modality::visual ? visual : language).push_back(std::move(g));
  }
  const auto as_json = [](const EntityStats& s) {
    return nlohmann::json{{"graphs", s.graphs},
                          {"mean_entities", s.mean_entities},
                          {"mean_reliable", s.mean_reliable},
                          {"threshold", s.threshold}};
  };
  nlohmann::json report;
  report["visual"] = visual.empty() ? nlohmann::json() : as_json(entity_stats(visual, threshold));
  report["language"] = language.empty() ? nlohmann::json() : as_json(language_entity_stats(language));
  report["multi30k_reference"] = {{"visual_mean_reliable", 9.06},
                                  {"visual_mean_reliable_in_text", 9.17},
                                  {"english_mean_entities", 3.48},
                                  {"german_mean_entities", 3.66},
                                  {"french_mean_entities", 3.92},
                                  {"note", "expected outputs on extracted Multi30K graphs, threshold 0.3"}};
  report["config"] = {{"graphs", fs::absolute(dir).string()}, {"threshold", threshold}};
  return report;
}

std::pair<std::string, std::size_t> parse_example_id(const std::string& id) {
  const auto dash = id.rfind('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 == id.size()) {
    throw DataError("example id must look like <split>-<index>: " + id);
  }
  const std::string digits = id.substr(dash + 1);
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw DataError("example id must look like <split>-<index>: " + id);
  }
  return {id.substr(0, dash), std::stoull(digits)};
}

std::string attention_svg(const PruneStepTrace& step, const std::vector<std::string>& row_labels,
                          const std::vector<std::string>& column_labels, const std::vector<bool>& row_kept) {
  const std::size_t rows = step.visual_nodes, cols = step.language_nodes;
  const int cell = 28, left = 120, top = 90;
  const int width = left + static_cast<int>(cols) * cell + 20, height = top + static_cast<int>(rows) * cell + 20;
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t j = 0; j < cols; ++j) {
    const int x = left + static_cast<int>(j) * cell + cell / 2;
    os << "<text x=\"" << x << "\" y=\"" << top - 6 << "\" transform=\"rotate(-60 " << x << ' ' << top - 6 << ")\">"
       << column_labels[j] << "</text>\n";
  }
  for (std::size_t i = 0; i < rows; ++i) {
    const int y = top + static_cast<int>(i) * cell;
    os << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\""
       << (row_kept[i] ? " font-weight=\"bold\"" : " fill=\"#999999\"") << ">" << row_labels[i] << "</text>\n";
    for (std::size_t j = 0; j < cols; ++j) {
      const double a = std::clamp(step.attention[i * cols + j], 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - a)));
      os << "<rect x=\"" << left + static_cast<int>(j) * cell << "\" y=\"" << y << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" stroke=\"#ffffff\">"
         << "<title>" << a << "</title></rect>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

nlohmann::json run_prune_analysis(const fs::path& checkpoint, const fs::path& data, const std::string& example_id,
                                  const fs::path& out) {
  const ModelBundle bundle = ModelBundle::load(checkpoint);
  if (!bundle.model.use_graphs) throw ConfigError("checkpoint was trained without graphs; nothing is pruned");
  const auto [split, index] = parse_example_id(example_id);
  const auto sentences = load_split(data, split);
  if (index >= sentences.size()) throw DataError("no example " + example_id + " in " + data.string());
  const ParallelSentence& s = sentences[index];
  if (!s.visual || !s.language) throw DataError(example_id + " has no scene graphs");

  const auto examples = make_examples(std::span(&s, 1), bundle.bpe, &bundle.labels);
  const Model model(bundle.model, bundle.params);
  const Example* batch[] = {&examples[0]};
  ForwardContext ctx = ForwardContext::inference();
  Tensor loss;
  std::vector<PruneTrace> traces;
  model.encode(batch, ctx, &loss, &traces);
  const PruneTrace& trace = traces.at(0);

  std::vector<std::string> visual_labels, language_labels;
  for (const auto& e : s.visual->entities()) visual_labels.push_back(e.label);
  for (const auto& e : s.language->entities()) language_labels.push_back(e.label);

  fs::create_directories(out);
  nlohmann::json steps = nlohmann::json::array();
  std::vector<std::size_t> alive(trace.visual_nodes);
  for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = i;
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const PruneStepTrace& st = trace.steps[k];
    std::vector<std::string> rows;
    std::vector<bool> kept;
    for (std::size_t id : alive) {
      rows.push_back(visual_labels.at(id));
      kept.push_back(std::find(st.kept.begin(), st.kept.end(), id) != st.kept.end());
    }
    const std::string file = "step_" + std::to_string(k + 1) + ".svg";
    write_file_atomic(out / file, attention_svg(st, rows, language_labels, kept));
    steps.push_back({{"step", k + 1},
                     {"visual_nodes", alive},
                     {"attention", st.attention},
                     {"mean_scores", st.mean_scores},
                     {"kept", st.kept},
                     {"kl", st.kl},
                     {"weight", st.weight},
                     {"heat_map", file}});
    alive = st.kept;
  }
  std::vector<std::string> final_labels;
  for (std::size_t id : trace.final_kept) final_labels.push_back(visual_labels.at(id));
  nlohmann::json report = {{"example", example_id},
                           {"source", s.source},
                           {"visual_labels", visual_labels},
                           {"language_labels", language_labels},
                           {"threshold", bundle.model.prune.threshold},
                           {"steps", steps},
                           {"final_kept", trace.final_kept},
                           {"final_kept_labels", final_labels},
                           {"prune_loss", loss.item()},
                           {"config", {{"ckpt", fs::absolute(checkpoint).string()}, {"data", fs::absolute(data).string()}}}};
  write_file_atomic(out / "trace.json", report.dump(2) + "\n");
  return report;
}

}  // namespace psg
