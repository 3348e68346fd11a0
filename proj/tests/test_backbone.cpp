// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "psg/backbone.hpp"
#include "test_util.hpp"

using namespace psg;
using psg::testing::random_tensor;
using psg::testing::values;

namespace {

constexpr std::size_t kVocab = 13;

BackboneConfig small_config() {
  BackboneConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.dropout = 0.0;
  c.max_positions = 32;
  return c;
}

struct Fixture {
  BackboneConfig config = small_config();
  ParameterStore store;
  std::unique_ptr<Backbone> model;

  explicit Fixture(std::uint64_t seed = 1, BackboneConfig c = small_config()) : config(c) {
    std::mt19937_64 rng(seed);
    Backbone::init_parameters(config, kVocab, store, rng);
    model = std::make_unique<Backbone>(config, kVocab, store);
  }
};

std::vector<int> random_ids(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> id(4, kVocab - 1);
  std::vector<int> v(n);
  for (auto& x : v) x = id(rng);
  return v;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("positional encoding") {
  Fixture f;
  const Tensor pe = f.model->positional_encoding(5);
  for (std::size_t i = 0; i < 8; ++i) CHECK(pe.at(0, i) == (i % 2 ? 1.0 : 0.0));
  for (std::size_t pos : {1u, 4u}) {
    for (std::size_t i = 0; i < 4; ++i) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, 2.0 * i / 8.0);
      CHECK(pe.at(pos, 2 * i) == doctest::Approx(std::sin(angle)).epsilon(1e-15));
      CHECK(pe.at(pos, 2 * i + 1) == doctest::Approx(std::cos(angle)).epsilon(1e-15));
    }
  }
  CHECK(values(pe) == values(f.model->positional_encoding(5)));
  CHECK_THROWS_AS(f.model->positional_encoding(33), std::out_of_range);
}

TEST_CASE("configuration validation") {
  BackboneConfig c = small_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.layers = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("joint encoding shapes and the degenerate concatenation") {
  Fixture f;
  std::mt19937_64 rng(2);
  const auto src = random_ids(rng, 5);
  const Tensor lang = random_tensor({3, 8}, rng), vis = random_tensor({4, 8}, rng);
  auto ctx = ForwardContext::inference();
  const JointInput joint[] = {{src, lang, vis, 0}};
  const EncodedBatch enc = f.model->encode_joint(joint, ctx);
  CHECK(enc.states.shape() == Shape{12, 8});
  CHECK(enc.spans[0].text == 5);
  CHECK(enc.spans[0].language == 3);
  CHECK(enc.spans[0].visual == 4);

  const JointInput bare[] = {{src, Tensor::zeros({0, 8}), Tensor::zeros({0, 8}), 0}};
  const std::vector<std::vector<int>> sources{src};
  CHECK(values(f.model->encode_joint(bare, ctx).states) == values(f.model->encode_text_only(sources, ctx).states));

  const JointInput empty[] = {{std::span<const int>(), lang, vis, 0}};
  CHECK_THROWS_AS(f.model->encode_joint(empty, ctx), std::invalid_argument);
  const JointInput wrong[] = {{src, random_tensor({2, 5}, rng), vis, 0}};
  CHECK_THROWS_AS(f.model->encode_joint(wrong, ctx), ShapeError);
}

TEST_CASE("examples in one batch do not interact") {
  Fixture f;
  std::mt19937_64 rng(3);
  const auto a = random_ids(rng, 4), b = random_ids(rng, 6);
  const Tensor la = random_tensor({2, 8}, rng), vb = random_tensor({3, 8}, rng);
  auto ctx = ForwardContext::inference();
  const JointInput both[] = {{a, la, Tensor(), 0}, {b, Tensor(), vb, 0}};
  const JointInput only_b[] = {{b, Tensor(), vb, 0}};
  const Tensor joint = f.model->encode_joint(both, ctx).states;
  const Tensor alone = f.model->encode_joint(only_b, ctx).states;
  CHECK(max_abs_diff(values(slice_rows(joint, 6, 15)), values(alone)) < 1e-12);
}

TEST_CASE("padding rows leave encoder and decoder outputs unchanged") {
  Fixture f;
  std::mt19937_64 rng(4);
  const auto src = random_ids(rng, 5);
  const Tensor lang = random_tensor({2, 8}, rng), vis = random_tensor({3, 8}, rng);
  auto ctx = ForwardContext::inference();
  const JointInput plain[] = {{src, lang, vis, 0}};
  const JointInput padded[] = {{src, lang, vis, 4}};
  const EncodedBatch e0 = f.model->encode_joint(plain, ctx), e1 = f.model->encode_joint(padded, ctx);
  CHECK(e1.states.rows() == 14);
  CHECK(max_abs_diff(values(e0.states), values(slice_rows(e1.states, 0, 10))) < 1e-9);

  const auto tgt = random_ids(rng, 4);
  std::vector<int> tgt_padded = tgt;
  tgt_padded.insert(tgt_padded.end(), {0, 0, 0});
  const std::vector<std::vector<int>> t0{tgt}, t1{tgt_padded};
  const Tensor l0 = f.model->decode_train(e0, t0, ctx), l1 = f.model->decode_train(e1, t1, ctx);
  CHECK(max_abs_diff(values(l0), values(slice_rows(l1, 0, 4))) < 1e-9);
}

TEST_CASE("decoder logits depend only on earlier target tokens") {
  Fixture f;
  std::mt19937_64 rng(5);
  const std::vector<std::vector<int>> src{random_ids(rng, 5)};
  auto ctx = ForwardContext::inference();
  const EncodedBatch enc = f.model->encode_text_only(src, ctx);
  const auto tgt = random_ids(rng, 6);
  const Tensor base = f.model->decode_train(enc, std::vector<std::vector<int>>{tgt}, ctx);
  CHECK(base.shape() == Shape{6, kVocab});
  for (std::size_t t = 1; t < tgt.size(); ++t) {
    auto changed = tgt;
    changed[t] = changed[t] == 4 ? 5 : 4;
    const Tensor other = f.model->decode_train(enc, std::vector<std::vector<int>>{changed}, ctx);
    CHECK(max_abs_diff(values(slice_rows(base, 0, t)), values(slice_rows(other, 0, t))) == 0.0);
    CHECK(max_abs_diff(values(slice_rows(base, t, 6)), values(slice_rows(other, t, 6))) > 0.0);
  }
  CHECK(f.model->decode_train(enc, std::vector<std::vector<int>>{{1}}, ctx).shape() == Shape{1, kVocab});

  BackboneConfig tight = small_config();
  tight.max_positions = 4;
  Fixture g(1, tight);
  CHECK_THROWS_AS(g.model->decode_train(g.model->encode_text_only(src, ctx), std::vector<std::vector<int>>{tgt}, ctx), std::out_of_range);
}

TEST_CASE("incremental decoding matches full decoding") {
  Fixture f;
  std::mt19937_64 rng(6);
  const Tensor lang = random_tensor({2, 8}, rng), vis = random_tensor({3, 8}, rng);
  const auto src = random_ids(rng, 4);
  auto ctx = ForwardContext::inference();
  const JointInput inputs[] = {{src, lang, vis, 2}};
  const EncodedBatch enc = f.model->encode_joint(inputs, ctx);
  std::vector<int> prefix{1};
  const auto more = random_ids(rng, 7);
  DecodeCache cache = f.model->start_decoding(enc, 0);
  for (std::size_t step = 0; step <= more.size(); ++step) {
    const Tensor inc = f.model->decode_step(cache, prefix);
    const Tensor full = f.model->decode_train(enc, std::vector<std::vector<int>>{prefix}, ctx);
    CHECK(max_abs_diff(values(inc), values(slice_rows(full, prefix.size() - 1, prefix.size()))) < 1e-9);
    if (step < more.size()) prefix.push_back(more[step]);
  }
  CHECK_THROWS_AS(f.model->decode_step(cache, std::vector<int>{1, 5}), std::invalid_argument);

  // Two fresh caches fed the same prefix agree exactly.
  DecodeCache a = f.model->start_decoding(enc, 0), b = f.model->start_decoding(enc, 0);
  f.model->decode_step(a, std::vector<int>{1});
  f.model->decode_step(b, std::vector<int>{1});
  CHECK(values(f.model->decode_step(a, std::vector<int>{1, 7})) ==
        values(f.model->decode_step(b, std::vector<int>{1, 7})));
}

TEST_CASE("dropout is deterministic under a fixed seed") {
  BackboneConfig c = small_config();
  c.dropout = 0.2;
  Fixture f(1, c);
  std::mt19937_64 rng(7);
  const std::vector<std::vector<int>> src{random_ids(rng, 6)};
  auto c1 = ForwardContext::training(99, c.dropout), c2 = ForwardContext::training(99, c.dropout);
  auto c3 = ForwardContext::training(100, c.dropout);
  const auto a = values(f.model->encode_text_only(src, c1).states);
  CHECK(a == values(f.model->encode_text_only(src, c2).states));
  CHECK(a != values(f.model->encode_text_only(src, c3).states));
}

TEST_CASE("text-only and joint encoding share one parameter set") {
  Fixture f;
  std::mt19937_64 rng(8);
  const auto src = random_ids(rng, 3);
  auto ctx = ForwardContext::inference();
  const JointInput joint[] = {{src, random_tensor({2, 8}, rng), Tensor(), 0}};
  const Gradients gj = backward(sum(f.model->encode_joint(joint, ctx).states));
  const Gradients gt = backward(sum(f.model->encode_text_only(std::vector<std::vector<int>>{src}, ctx).states));
  for (const auto& e : f.store.entries()) {
    if (e.name.rfind("enc.", 0) != 0) continue;
    CHECK(gj.contains(e.value));
    CHECK(gt.contains(e.value));
  }
}

TEST_CASE("encoder and decoder pass a gradient check") {
  Fixture f(9);
  std::mt19937_64 rng(9);
  const auto s1 = random_ids(rng, 4), s2 = random_ids(rng, 3);
  const Tensor lang = random_tensor({2, 8}, rng, -1, 1, true), vis = random_tensor({3, 8}, rng, -1, 1, true);
  const std::vector<std::vector<int>> targets{{1, 5, 6, 7}, {1, 9, 4}};
  const Tensor w = random_tensor({7, kVocab}, rng);
  const auto objective = [&] {
    auto ctx = ForwardContext::inference();
    const JointInput inputs[] = {{s1, lang, vis, 1}, {s2, Tensor(), Tensor(), 0}};
    return sum(mul(f.model->decode_train(f.model->encode_joint(inputs, ctx), targets, ctx), w));
  };
  std::vector<Tensor> params = f.store.tensors();
  params.push_back(lang);
  params.push_back(vis);
  const auto report = grad_check(objective, params, 1e-5, 24);
  CHECK(report.max_rel_error < 1e-4);

  std::mt19937_64 fixed(10);
  const Tensor wt = random_tensor({7, 8}, fixed);
  const auto text_objective = [&] {
    auto ctx = ForwardContext::inference();
    return sum(mul(f.model->encode_text_only(std::vector<std::vector<int>>{s1, s2}, ctx).states, wt));
  };
  CHECK(grad_check(text_objective, f.store.tensors(), 1e-5, 24).max_rel_error < 1e-4);
}

TEST_CASE("learned positions and an untied output projection") {
  BackboneConfig c = small_config();
  c.learned_positions = true;
  c.tie_output = false;
  Fixture f(11, c);
  CHECK(f.store.contains("position"));
  CHECK(f.store.contains("output"));
  CHECK(values(f.model->positional_encoding(3)) == values(slice_rows(f.store.get("position"), 0, 3)));
  CHECK_FALSE(Fixture(11).store.contains("position"));
  CHECK_FALSE(Fixture(11).store.contains("output"));

  std::mt19937_64 rng(11);
  const auto src = random_ids(rng, 4);
  const std::vector<std::vector<int>> targets{{1, 5, 6}};
  auto ctx = ForwardContext::inference();
  const JointInput inputs[] = {{src, random_tensor({2, 8}, rng), Tensor(), 0}};
  const EncodedBatch enc = f.model->encode_joint(inputs, ctx);
  const Tensor full = f.model->decode_train(enc, targets, ctx);
  DecodeCache cache = f.model->start_decoding(enc, 0);
  f.model->decode_step(cache, std::vector<int>{1});
  f.model->decode_step(cache, std::vector<int>{1, 5});
  CHECK(max_abs_diff(values(f.model->decode_step(cache, targets[0])), values(slice_rows(full, 2, 3))) < 1e-9);

  const Tensor w = random_tensor({3, kVocab}, rng);
  const auto objective = [&] {
    auto ctx2 = ForwardContext::inference();
    return sum(mul(f.model->decode_train(f.model->encode_joint(inputs, ctx2), targets, ctx2), w));
  };
  const Gradients g = backward(objective());
  CHECK(g.contains(f.store.get("position")));
  CHECK(g.contains(f.store.get("output")));
  const std::vector<Tensor> checked{f.store.get("position"), f.store.get("output"), f.store.get("embed")};
  CHECK(grad_check(objective, checked, 1e-5, 24).max_rel_error < 1e-4);
}
