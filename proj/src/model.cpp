// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "psg/loss.hpp"

namespace psg {

namespace {

constexpr int kBos = 1;
constexpr int kEos = 2;

std::uint64_t hash_id(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor::from({n, n}, std::move(v));
}

}  // namespace

void ModelConfig::validate() const {
  backbone.validate();
  prune.validate();
  if (vocab <= 4) throw std::invalid_argument("vocabulary must extend past the special ids");
  if (use_graphs && (label_dim == 0 || visual_dim == 0)) throw std::invalid_argument("graph dimensions must be positive");
  if (projection_depth == 0) throw std::invalid_argument("projection depth must be at least 1");
  if (!use_graphs && !text_only_loss) throw std::invalid_argument("a model without graphs needs the text-only loss");
}

std::vector<int> decoder_input(std::span<const int> target) {
  std::vector<int> v{kBos};
  v.insert(v.end(), target.begin(), target.end());
  return v;
}

std::vector<int> decoder_output(std::span<const int> target) {
  std::vector<int> v(target.begin(), target.end());
  v.push_back(kEos);
  return v;
}

ParameterStore Model::init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ParameterStore store;
  Backbone::init_parameters(config.backbone, config.vocab, store, rng);
  if (config.use_graphs) {
    // Column scale 1/√d keeps inner products roughly intact through the projection,
    // and W1 = I starts message passing as plain neighborhood averaging.
    const std::size_t d = config.backbone.d_model, dc = config.label_dim, dv = config.visual_dim;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const Tensor lang_w = normal_tensor({dc, d}, sd, rng);
    store.add("graph.lang.w", lang_w);
    store.add("graph.lang.b", Tensor::zeros({d}));
    store.add("graph.vis.w", dv == dc ? lang_w : normal_tensor({dv, d}, sd, rng));
    store.add("graph.vis.b", Tensor::zeros({d}));
    store.add("graph.rel.w", normal_tensor({dc, d}, sd, rng));
    store.add("graph.rel.b", Tensor::zeros({d}));
    store.add("graph.w1", identity(d));
    store.add("graph.w2", normal_tensor({d, d}, sd, rng));
    store.add("graph.b", Tensor::zeros({d}));
    for (std::size_t k = 1; k < config.projection_depth; ++k) {
      for (const char* part : {"lang", "vis", "rel"}) {
        const std::string name = "graph." + std::string(part) + "." + std::to_string(k);
        store.add(name + ".w", normal_tensor({d, d}, sd, rng));
        store.add(name + ".b", Tensor::zeros({d}));
      }
    }
  }
  return store;
}

Model::Model(ModelConfig config, const ParameterStore& store)
    : config_(std::move(config)), backbone_(config_.backbone, config_.vocab, store) {
  config_.validate();
  if (config_.use_graphs) {
    const auto& g = [&](const char* n) { return store.get(n); };
    lang_gcn_ = {g("graph.lang.w"), g("graph.lang.b"), g("graph.rel.w"), g("graph.rel.b"),
                 g("graph.w1"),     g("graph.w2"),     g("graph.b"),      {},
                 {}};
    vis_gcn_ = lang_gcn_;
    vis_gcn_.entity_weight = g("graph.vis.w");
    vis_gcn_.entity_bias = g("graph.vis.b");
    const auto layer = [&](const char* part, std::size_t k) -> std::array<Tensor, 2> {
      const std::string name = "graph." + std::string(part) + "." + std::to_string(k);
      return {store.get(name + ".w"), store.get(name + ".b")};
    };
    for (std::size_t k = 1; k < config_.projection_depth; ++k) {
      lang_gcn_.entity_hidden.push_back(layer("lang", k));
      vis_gcn_.entity_hidden.push_back(layer("vis", k));
      const auto rel = layer("rel", k);
      lang_gcn_.relation_hidden.push_back(rel);
      vis_gcn_.relation_hidden.push_back(rel);
    }
  }
}

EncodedBatch Model::encode(std::span<const Example* const> batch, ForwardContext& ctx, Tensor* prune_loss,
                           std::vector<PruneTrace>* traces) const {
  if (prune_loss) *prune_loss = Tensor::scalar(0.0);
  if (traces) traces->assign(batch.size(), PruneTrace{});
  std::vector<JointInput> inputs(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) inputs[b].source = batch[b]->source;

  std::vector<std::size_t> with_graphs;
  if (config_.use_graphs) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (batch[b]->graphs) with_graphs.push_back(b);
    }
  }
  if (with_graphs.empty()) return backbone_.encode_joint(inputs, ctx);

  std::vector<const VectorizedSceneGraph*> langs, viss;
  for (std::size_t b : with_graphs) {
    langs.push_back(&batch[b]->graphs->language);
    viss.push_back(&batch[b]->graphs->visual);
  }
  const Tensor fl_all = encode_graph(merge_graphs(langs, config_.label_dim, config_.label_dim), lang_gcn_);
  const Tensor fv_all = encode_graph(merge_graphs(viss, config_.visual_dim, config_.label_dim), vis_gcn_);

  std::vector<Tensor> losses;
  std::size_t lo = 0, vo = 0;
  for (std::size_t i = 0; i < with_graphs.size(); ++i) {
    const std::size_t b = with_graphs[i];
    const std::size_t pl = langs[i]->num_entities(), pv = viss[i]->num_entities();
    const Tensor fl = slice_rows(fl_all, lo, lo + pl);
    Tensor fv = slice_rows(fv_all, vo, vo + pv);
    lo += pl;
    vo += pv;
    if (pl > 0 && pv > 0 && config_.prune.steps > 0) {
      const std::uint64_t seed = ctx.is_training() ? ctx.next_seed() : hash_id(batch[b]->id);
      PruneResult r = multi_step_prune(fv, fl, config_.prune, seed);
      fv = r.features;
      losses.push_back(r.loss);
      if (traces) (*traces)[b] = std::move(r.trace);
    }
    inputs[b].language = fl;
    inputs[b].visual = fv;
  }
  if (prune_loss && !losses.empty()) {
    Tensor total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
    *prune_loss = scale(total, 1.0 / static_cast<double>(with_graphs.size()));
  }
  return backbone_.encode_joint(inputs, ctx);
}

LossParts Model::loss(std::span<const Example* const> batch, ForwardContext& ctx, double smoothing) const {
  std::vector<std::vector<int>> inputs, sources;
  std::vector<int> outputs;
  for (const Example* ex : batch) {
    inputs.push_back(decoder_input(ex->target));
    const auto out = decoder_output(ex->target);
    outputs.insert(outputs.end(), out.begin(), out.end());
    sources.push_back(ex->source);
  }
  LossParts parts;
  parts.tokens = outputs.size();
  const Tensor zero = Tensor::scalar(0.0);
  Tensor mmt = zero, prune = zero, nmt = zero;
  if (config_.use_graphs) {
    const EncodedBatch enc = encode(batch, ctx, &prune);
    mmt = smoothed_ce_loss(backbone_.decode_train(enc, inputs, ctx), outputs, smoothing);
  }
  if (config_.text_only_loss) {
    const EncodedBatch enc = backbone_.encode_text_only(sources, ctx);
    nmt = smoothed_ce_loss(backbone_.decode_train(enc, inputs, ctx), outputs, smoothing);
  }
  parts.total = total_loss(mmt, prune, nmt);
  parts.mmt = mmt.item();
  parts.prune = prune.item();
  parts.nmt = nmt.item();
  return parts;
}

std::vector<std::pair<double, std::size_t>> Model::target_log_likelihood(std::span<const Example* const> batch) const {
  NoGradGuard guard;
  ForwardContext ctx = ForwardContext::inference();
  const EncodedBatch enc = encode(batch, ctx);
  std::vector<std::vector<int>> inputs;
  std::vector<std::size_t> cols;
  for (const Example* ex : batch) {
    inputs.push_back(decoder_input(ex->target));
    for (int t : decoder_output(ex->target)) cols.push_back(static_cast<std::size_t>(t));
  }
  const Tensor lp = pick(log_softmax(backbone_.decode_train(enc, inputs, ctx), 1), cols);
  std::vector<std::pair<double, std::size_t>> out;
  std::size_t row = 0;
  for (const auto& in : inputs) {
    double total = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) total += lp.at(row++);
    out.emplace_back(total, in.size());
  }
  return out;
}

}  // namespace psg
