// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "psg/loss.hpp"
#include "psg/model.hpp"
#include "test_util.hpp"

using namespace psg;
using psg::testing::random_tensor;
using psg::testing::values;

namespace {

ModelConfig tiny_config(bool graphs = true) {
  ModelConfig c;
  c.backbone.layers = 1;
  c.backbone.heads = 2;
  c.backbone.d_model = 8;
  c.backbone.d_ff = 16;
  c.backbone.dropout = 0.0;
  c.backbone.max_positions = 32;
  c.vocab = 12;
  c.label_dim = 6;
  c.visual_dim = 6;
  c.use_graphs = graphs;
  return c;
}

VectorizedSceneGraph graph(Modality m, std::size_t p, std::vector<std::array<int, 2>> pairs, std::mt19937_64& rng) {
  VectorizedSceneGraph g;
  g.modality = m;
  g.entities = random_tensor({p, 6}, rng, -2, 2);
  g.relations = random_tensor({pairs.size(), 6}, rng, -1, 1);
  g.pairs = std::move(pairs);
  return g;
}

std::vector<Example> two_examples(std::mt19937_64& rng) {
  auto g1 = std::make_shared<GraphInputs>();
  g1->language = graph(Modality::language, 3, {{0, 1}, {1, 2}}, rng);
  g1->visual = graph(Modality::visual, 5, {{0, 1}, {3, 4}}, rng);
  auto g2 = std::make_shared<GraphInputs>();
  g2->language = graph(Modality::language, 2, {{0, 1}}, rng);
  g2->visual = graph(Modality::visual, 4, {}, rng);
  return {{"a", {5, 6, 7}, {8, 9, 10, 11}, g1}, {"b", {4, 9}, {6, 5}, g2}};
}

std::vector<const Example*> ptrs(const std::vector<Example>& v) {
  std::vector<const Example*> out;
  for (const auto& e : v) out.push_back(&e);
  return out;
}

}  // namespace

TEST_CASE("smoothed cross entropy") {
  const Tensor logits = Tensor::from({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  const auto lse = [](double a, double b, double c) { return std::log(std::exp(a) + std::exp(b) + std::exp(c)); };
  const double z0 = lse(1.0, 2.0, 0.5), z1 = lse(-1.0, 0.0, 3.0);

  // No smoothing: mean of −log p(target).
  const std::vector<int> t{1, 2};
  CHECK(smoothed_ce_loss(logits, t, 0.0, -1).item() == doctest::Approx(((z0 - 2.0) + (z1 - 3.0)) / 2).epsilon(1e-14));

  // Uniform logits give log V whatever the smoothing.
  CHECK(smoothed_ce_loss(Tensor::zeros({4, 7}), std::vector<int>{1, 2, 3, 4}, 0.3).item() ==
        doctest::Approx(std::log(7.0)).epsilon(1e-14));

  // Hand case with ε = 0.1: q = 0.9·onehot + 0.1/3.
  const double row0 = -(0.9 + 0.1 / 3) * (2.0 - z0) - 0.1 / 3 * ((1.0 - z0) + (0.5 - z0));
  CHECK(smoothed_ce_loss(slice_rows(logits, 0, 1), std::vector<int>{1}, 0.1, -1).item() ==
        doctest::Approx(row0).epsilon(1e-14));

  // Pad rows are ignored; all-pad is an error.
  CHECK(smoothed_ce_loss(logits, std::vector<int>{1, 0}, 0.0).item() == doctest::Approx(z0 - 2.0).epsilon(1e-14));
  CHECK_THROWS_AS(smoothed_ce_loss(logits, std::vector<int>{0, 0}, 0.1), std::invalid_argument);
}

TEST_CASE("total loss adds finite components") {
  CHECK(total_loss(Tensor::scalar(1.0), Tensor::scalar(0.5), Tensor::scalar(0.2)).item() == doctest::Approx(1.7));
  CHECK_THROWS_AS(total_loss(Tensor::scalar(NAN), Tensor::scalar(0), Tensor::scalar(0)), NonFiniteLossError);
  try {
    total_loss(Tensor::scalar(1), Tensor::scalar(INFINITY), Tensor::scalar(0));
    FAIL("expected an exception");
  } catch (const NonFiniteLossError& e) {
    CHECK(e.component() == "prune");
  }
}

TEST_CASE("decoder input and output framing") {
  const std::vector<int> t{7, 8};
  CHECK(decoder_input(t) == std::vector<int>{1, 7, 8});
  CHECK(decoder_output(t) == std::vector<int>{7, 8, 2});
}

TEST_CASE("text-only model has no graph parameters and no graph terms") {
  const ModelConfig c = tiny_config(false);
  const ParameterStore store = Model::init_parameters(c, 3);
  for (const auto& e : store.entries()) CHECK(e.name.rfind("graph.", 0) != 0);
  std::mt19937_64 rng(1);
  const auto ex = two_examples(rng);
  const Model model(c, store);
  auto ctx = ForwardContext::inference();
  const LossParts parts = model.loss(ptrs(ex), ctx, 0.1);
  CHECK(parts.mmt == 0.0);
  CHECK(parts.prune == 0.0);
  CHECK(parts.total.item() == parts.nmt);
  CHECK(parts.tokens == 5 + 3);

  ModelConfig bad = c;
  bad.text_only_loss = false;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("the objective is the sum of its three parts") {
  const ModelConfig c = tiny_config();
  const ParameterStore store = Model::init_parameters(c, 4);
  std::mt19937_64 rng(2);
  const auto ex = two_examples(rng);
  auto ctx = ForwardContext::inference();
  const LossParts full = Model(c, store).loss(ptrs(ex), ctx, 0.1);
  CHECK(full.prune > 0.0);
  CHECK(full.total.item() == (full.mmt + full.prune) + full.nmt);

  ModelConfig joint_only = c;
  joint_only.text_only_loss = false;
  const LossParts joint = Model(joint_only, store).loss(ptrs(ex), ctx, 0.1);
  const LossParts text = Model(tiny_config(false), store).loss(ptrs(ex), ctx, 0.1);
  CHECK(joint.mmt == full.mmt);
  CHECK(joint.prune == full.prune);
  CHECK(text.nmt == full.nmt);

  const Gradients gf = backward(full.total), gj = backward(joint.total), gt = backward(text.total);
  double worst = 0.0;
  for (const auto& e : store.entries()) {
    const auto f = gf.of(e.value);
    REQUIRE(f);
    const auto j = gj.of(e.value), t = gt.of(e.value);
    for (std::size_t i = 0; i < f->numel(); ++i) {
      const double expect = (j ? j->at(i) : 0.0) + (t ? t->at(i) : 0.0);
      worst = std::max(worst, std::abs(f->at(i) - expect));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("full objective passes a gradient check") {
  const ModelConfig c = tiny_config();
  const ParameterStore store = Model::init_parameters(c, 5);
  std::mt19937_64 rng(6);
  const auto ex = two_examples(rng);
  const Model model(c, store);
  std::vector<PruneTrace> traces;
  auto probe = ForwardContext::inference();
  Tensor prune;
  model.encode(ptrs(ex), probe, &prune, &traces);
  // At least one step must discard nodes for the check to cover the pruned path.
  bool pruned = false;
  for (const auto& t : traces) pruned |= t.final_kept.size() < t.steps.front().visual_nodes;
  CHECK(pruned);

  const auto objective = [&] {
    auto ctx = ForwardContext::inference();
    return model.loss(ptrs(ex), ctx, 0.1).total;
  };
  const auto report = grad_check(objective, store.tensors(), 1e-5, 24);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("inference is a pure function of parameters and inputs") {
  const ModelConfig c = tiny_config();
  const ParameterStore store = Model::init_parameters(c, 7);
  CHECK(values(store.get("graph.w1")) == values(Model::init_parameters(c, 7).get("graph.w1")));
  std::mt19937_64 rng(8);
  const auto ex = two_examples(rng);
  const Model model(c, store);
  const auto a = model.target_log_likelihood(ptrs(ex));
  const auto b = model.target_log_likelihood(ptrs(ex));
  CHECK(a == b);
  REQUIRE(a.size() == 2);
  CHECK(a[0].second == 5);
  CHECK(a[1].second == 3);
  CHECK(a[0].first < 0.0);

  // Batched and single-example scoring agree.
  const std::vector<const Example*> one{&ex[1]};
  CHECK(std::abs(model.target_log_likelihood(one)[0].first - a[1].first) < 1e-10);
}

TEST_CASE("projection depth adds hidden layers to every graph projection") {
  ModelConfig c = tiny_config();
  c.projection_depth = 3;
  const ParameterStore store = Model::init_parameters(c, 5);
  for (const char* part : {"lang", "vis", "rel"}) {
    for (int k : {1, 2}) {
      const std::string name = "graph." + std::string(part) + "." + std::to_string(k);
      CHECK(store.get(name + ".w").shape() == Shape{8, 8});
      CHECK(store.get(name + ".b").shape() == Shape{8});
    }
  }
  CHECK_FALSE(store.contains("graph.lang.3.w"));
  const Model model(c, store);
  CHECK(model.language_gcn().entity_hidden.size() == 2);
  CHECK(model.visual_gcn().relation_hidden.size() == 2);

  std::mt19937_64 rng(12);
  const auto ex = two_examples(rng);
  auto ctx = ForwardContext::inference();
  const Gradients g = backward(model.loss(ptrs(ex), ctx, 0.1).total);
  CHECK(g.contains(store.get("graph.vis.2.w")));
  CHECK(g.contains(store.get("graph.rel.1.w")));

  c.projection_depth = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
