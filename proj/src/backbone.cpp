// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace psg {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr int kPad = 0;

}  // namespace

void BackboneConfig::validate() const {
  if (layers == 0 || heads == 0 || d_model == 0 || d_ff == 0 || max_positions == 0) {
    throw std::invalid_argument("backbone sizes must be positive");
  }
  if (d_model % heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) + " is not divisible by heads " +
                                std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
}

std::uint64_t ForwardContext::next_seed() noexcept { return splitmix64(seed_ ^ splitmix64(++calls_)); }

Tensor ForwardContext::dropout(const Tensor& x) {
  if (!training_ || p_ == 0.0) return x;
  return psg::dropout(x, p_, next_seed());
}

void Backbone::init_parameters(const BackboneConfig& config, std::size_t vocab, ParameterStore& store,
                               std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.d_model, ff = config.d_ff;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sff = 1.0 / std::sqrt(static_cast<double>(ff));
  store.add("embed", normal_tensor({vocab, d}, sd, rng));
  if (config.segment_embeddings) store.add("segment", normal_tensor({3, d}, sd, rng));
  if (config.learned_positions) store.add("position", normal_tensor({config.max_positions, d}, sd, rng));
  if (!config.tie_output) store.add("output", normal_tensor({vocab, d}, sd, rng));

  const auto norm = [&](const std::string& name) {
    store.add(name + ".g", Tensor::full({d}, 1.0));
    store.add(name + ".b", Tensor::zeros({d}));
  };
  const auto attn = [&](const std::string& name) {
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) store.add(name + w, normal_tensor({d, d}, sd, rng));
  };
  const auto ffn = [&](const std::string& name) {
    store.add(name + ".w1", normal_tensor({d, ff}, sd, rng));
    store.add(name + ".b1", Tensor::zeros({ff}));
    store.add(name + ".w2", normal_tensor({ff, d}, sff, rng));
    store.add(name + ".b2", Tensor::zeros({d}));
  };
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    norm(p + ".ln1");
    attn(p + ".self");
    norm(p + ".ln2");
    ffn(p + ".ff");
  }
  norm("enc.ln");
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    norm(p + ".ln1");
    attn(p + ".self");
    norm(p + ".ln2");
    attn(p + ".cross");
    norm(p + ".ln3");
    ffn(p + ".ff");
  }
  norm("dec.ln");
}

Backbone::Backbone(const BackboneConfig& config, std::size_t vocab, const ParameterStore& store)
    : config_(config), vocab_(vocab) {
  config_.validate();
  embed_ = store.get("embed");
  if (embed_.shape() != Shape{vocab, config.d_model}) {
    throw ShapeError("embed", embed_.shape(), Shape{vocab, config.d_model});
  }
  if (config.segment_embeddings) segment_ = store.get("segment");
  if (config.learned_positions) {
    position_ = store.get("position");
    if (position_.shape() != Shape{config.max_positions, config.d_model}) {
      throw ShapeError("position", position_.shape(), Shape{config.max_positions, config.d_model});
    }
  }
  output_ = config.tie_output ? embed_ : store.get("output");
  if (output_.shape() != Shape{vocab, config.d_model}) {
    throw ShapeError("output", output_.shape(), Shape{vocab, config.d_model});
  }
  const auto norm = [&](const std::string& n) { return NormParams{store.get(n + ".g"), store.get(n + ".b")}; };
  const auto attn = [&](const std::string& n) {
    return AttentionParams{store.get(n + ".wq"), store.get(n + ".wk"), store.get(n + ".wv"), store.get(n + ".wo")};
  };
  const auto ffn = [&](const std::string& n) {
    return FeedForwardParams{store.get(n + ".w1"), store.get(n + ".b1"), store.get(n + ".w2"), store.get(n + ".b2")};
  };
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    encoder_.push_back({norm(p + ".ln1"), norm(p + ".ln2"), attn(p + ".self"), ffn(p + ".ff")});
  }
  enc_norm_ = norm("enc.ln");
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    decoder_.push_back({norm(p + ".ln1"), norm(p + ".ln2"), norm(p + ".ln3"), attn(p + ".self"), attn(p + ".cross"),
                        ffn(p + ".ff")});
  }
  dec_norm_ = norm("dec.ln");

  const std::size_t d = config.d_model;
  pe_table_.resize(config.max_positions * d);
  for (std::size_t pos = 0; pos < config.max_positions; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe_table_[pos * d + i] = std::sin(angle);
      if (i + 1 < d) pe_table_[pos * d + i + 1] = std::cos(angle);
    }
  }
}

Tensor Backbone::positional_encoding(std::size_t length) const {
  if (length > config_.max_positions) {
    throw std::out_of_range("length " + std::to_string(length) + " exceeds max_positions " +
                            std::to_string(config_.max_positions));
  }
  if (config_.learned_positions) return slice_rows(position_, 0, length);
  const std::size_t d = config_.d_model;
  return Tensor::from({length, d}, std::vector<double>(pe_table_.begin(), pe_table_.begin() + length * d));
}

Tensor Backbone::embed_tokens(std::span<const int> ids, std::span<const std::size_t> positions) const {
  const std::size_t d = config_.d_model;
  std::vector<double> pe(config_.learned_positions ? 0 : ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab_) {
      throw std::out_of_range("token id " + std::to_string(ids[r]) + " outside vocabulary");
    }
    if (positions[r] >= config_.max_positions) {
      throw std::out_of_range("position " + std::to_string(positions[r]) + " exceeds max_positions " +
                              std::to_string(config_.max_positions));
    }
    if (!config_.learned_positions) {
      std::copy_n(pe_table_.begin() + static_cast<std::ptrdiff_t>(positions[r] * d), d, pe.begin() + r * d);
    }
  }
  const Tensor tokens = scale(embedding_lookup(embed_, ids), std::sqrt(static_cast<double>(d)));
  if (config_.learned_positions) {
    const std::vector<int> rows(positions.begin(), positions.end());
    return add(tokens, embedding_lookup(position_, rows));
  }
  return add(tokens, Tensor::from({ids.size(), d}, std::move(pe)));
}

Tensor Backbone::feed_forward(const FeedForwardParams& p, const Tensor& x) const {
  return add_bias(matmul(relu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

EncodedBatch Backbone::encode_joint(std::span<const JointInput> examples, ForwardContext& ctx) const {
  const std::size_t d = config_.d_model;
  EncodedBatch out;
  std::vector<int> ids;
  std::vector<std::size_t> positions;
  std::vector<Tensor> lang_parts, vis_parts;
  std::size_t n_text = 0, n_lang = 0, n_vis = 0, n_pad = 0;
  for (const auto& ex : examples) {
    if (ex.source.empty()) throw std::invalid_argument("empty text segment");
    for (const Tensor* g : {&ex.language, &ex.visual}) {
      if (g->defined() && (g->rank() != 2 || g->cols() != d)) throw ShapeError("encode_joint", g->shape(), Shape{0, d});
    }
    EncoderSpan span;
    span.begin = n_text + n_lang + n_vis + n_pad;
    span.text = ex.source.size();
    span.language = ex.language.defined() ? ex.language.rows() : 0;
    span.visual = ex.visual.defined() ? ex.visual.rows() : 0;
    span.padding = ex.padding;
    for (std::size_t i = 0; i < ex.source.size(); ++i) {
      ids.push_back(ex.source[i]);
      positions.push_back(i);
    }
    if (span.language) lang_parts.push_back(ex.language);
    if (span.visual) vis_parts.push_back(ex.visual);
    n_text += span.text;
    n_lang += span.language;
    n_vis += span.visual;
    n_pad += span.padding;
    out.spans.push_back(span);
  }

  // Stack segments type by type, then interleave into per-example order.
  std::vector<Tensor> parts{embed_tokens(ids, positions)};
  if (n_lang) parts.push_back(concat(lang_parts, 0));
  if (n_vis) parts.push_back(concat(vis_parts, 0));
  if (n_pad) parts.push_back(Tensor::zeros({n_pad, d}));
  const Tensor stacked = parts.size() == 1 ? parts[0] : concat(parts, 0);

  const std::size_t total = n_text + n_lang + n_vis + n_pad;
  std::vector<std::size_t> order;
  std::vector<int> segments;
  order.reserve(total);
  segments.reserve(total);
  out.key_valid.reserve(total);
  std::size_t t = 0, l = n_text, v = n_text + n_lang, p = n_text + n_lang + n_vis;
  for (const auto& s : out.spans) {
    const auto push = [&](std::size_t& cursor, std::size_t count, Segment seg, bool valid) {
      for (std::size_t i = 0; i < count; ++i) {
        order.push_back(cursor++);
        segments.push_back(static_cast<int>(seg));
        out.key_valid.push_back(valid);
      }
    };
    push(t, s.text, Segment::text, true);
    push(l, s.language, Segment::language, true);
    push(v, s.visual, Segment::visual, true);
    push(p, s.padding, Segment::text, false);
  }
  bool identity = true;
  for (std::size_t i = 0; i < total && identity; ++i) identity = order[i] == i;
  Tensor x = identity ? stacked : gather_rows(stacked, order);
  if (config_.segment_embeddings) x = add(x, embedding_lookup(segment_, segments));
  x = ctx.dropout(x);

  AttentionLayout layout;
  layout.heads = config_.heads;
  layout.key_valid = out.key_valid;
  for (const auto& s : out.spans) layout.blocks.push_back({s.begin, s.rows(), s.begin, s.rows()});

  for (const auto& layer : encoder_) {
    Tensor h = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    const Tensor a = attention(matmul(h, layer.self.wq), matmul(h, layer.self.wk), matmul(h, layer.self.wv), layout);
    x = add(x, ctx.dropout(matmul(a, layer.self.wo)));
    h = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    x = add(x, ctx.dropout(feed_forward(layer.ff, h)));
  }
  out.states = layer_norm(x, enc_norm_.gain, enc_norm_.bias);
  return out;
}

EncodedBatch Backbone::encode_text_only(std::span<const std::vector<int>> sources, ForwardContext& ctx) const {
  std::vector<JointInput> inputs;
  inputs.reserve(sources.size());
  for (const auto& s : sources) inputs.push_back({s, Tensor(), Tensor(), 0});
  return encode_joint(inputs, ctx);
}

Tensor Backbone::decoder_stack(Tensor x, const AttentionLayout& self_layout, const AttentionLayout& cross_layout,
                               const EncodedBatch& enc, ForwardContext& ctx) const {
  for (const auto& layer : decoder_) {
    Tensor h = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    Tensor a = attention(matmul(h, layer.self.wq), matmul(h, layer.self.wk), matmul(h, layer.self.wv), self_layout);
    x = add(x, ctx.dropout(matmul(a, layer.self.wo)));
    h = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    a = attention(matmul(h, layer.cross.wq), matmul(enc.states, layer.cross.wk), matmul(enc.states, layer.cross.wv),
                  cross_layout);
    x = add(x, ctx.dropout(matmul(a, layer.cross.wo)));
    h = layer_norm(x, layer.ln3.gain, layer.ln3.bias);
    x = add(x, ctx.dropout(feed_forward(layer.ff, h)));
  }
  return matmul_nt(layer_norm(x, dec_norm_.gain, dec_norm_.bias), output_);
}

Tensor Backbone::decode_train(const EncodedBatch& enc, std::span<const std::vector<int>> targets,
                              ForwardContext& ctx) const {
  if (targets.size() != enc.spans.size()) {
    throw std::invalid_argument("decode_train: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(enc.spans.size()) + " encoded examples");
  }
  std::vector<int> ids;
  std::vector<std::size_t> positions;
  AttentionLayout self_layout, cross_layout;
  self_layout.heads = cross_layout.heads = config_.heads;
  self_layout.causal = true;
  cross_layout.key_valid = enc.key_valid;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const auto& t = targets[b];
    if (t.empty()) throw std::invalid_argument("decode_train: empty target");
    const std::size_t begin = ids.size();
    for (std::size_t i = 0; i < t.size(); ++i) {
      ids.push_back(t[i]);
      positions.push_back(i);
      self_layout.key_valid.push_back(t[i] != kPad);
    }
    self_layout.blocks.push_back({begin, t.size(), begin, t.size()});
    cross_layout.blocks.push_back({begin, t.size(), enc.spans[b].begin, enc.spans[b].rows()});
  }
  const Tensor x = ctx.dropout(embed_tokens(ids, positions));
  return decoder_stack(x, self_layout, cross_layout, enc, ctx);
}

DecodeCache Backbone::start_decoding(const EncodedBatch& enc, std::size_t example) const {
  NoGradGuard guard;
  const EncoderSpan& span = enc.spans.at(example);
  const Tensor states = slice_rows(enc.states, span.begin, span.begin + span.rows());
  DecodeCache cache;
  cache.cross_valid.assign(enc.key_valid.begin() + static_cast<std::ptrdiff_t>(span.begin),
                           enc.key_valid.begin() + static_cast<std::ptrdiff_t>(span.begin + span.rows()));
  for (const auto& layer : decoder_) {
    cache.self_k.push_back(Tensor::zeros({0, config_.d_model}));
    cache.self_v.push_back(Tensor::zeros({0, config_.d_model}));
    cache.cross_k.push_back(matmul(states, layer.cross.wk));
    cache.cross_v.push_back(matmul(states, layer.cross.wv));
  }
  return cache;
}

Tensor Backbone::decode_step(DecodeCache& cache, std::span<const int> prefix) const {
  if (prefix.size() != cache.tokens.size() + 1 || !std::equal(cache.tokens.begin(), cache.tokens.end(), prefix.begin())) {
    throw std::invalid_argument("decode_step: prefix does not extend the cached tokens by one");
  }
  if (cache.self_k.size() != decoder_.size()) throw std::invalid_argument("decode_step: cache from another model");
  NoGradGuard guard;
  const int token = prefix.back();
  const std::size_t pos = cache.tokens.size();
  const std::size_t positions[] = {pos};
  Tensor x = embed_tokens(std::span(&token, 1), positions);
  cache.tokens.push_back(token);

  AttentionLayout self_layout, cross_layout;
  self_layout.heads = cross_layout.heads = config_.heads;
  self_layout.blocks = {{0, 1, 0, pos + 1}};
  for (int t : cache.tokens) self_layout.key_valid.push_back(t != kPad);
  cross_layout.blocks = {{0, 1, 0, cache.cross_valid.size()}};
  cross_layout.key_valid = cache.cross_valid;

  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const auto& layer = decoder_[l];
    Tensor h = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    cache.self_k[l] = concat(std::vector{cache.self_k[l], matmul(h, layer.self.wk)}, 0);
    cache.self_v[l] = concat(std::vector{cache.self_v[l], matmul(h, layer.self.wv)}, 0);
    Tensor a = attention(matmul(h, layer.self.wq), cache.self_k[l], cache.self_v[l], self_layout);
    x = add(x, matmul(a, layer.self.wo));
    h = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    a = attention(matmul(h, layer.cross.wq), cache.cross_k[l], cache.cross_v[l], cross_layout);
    x = add(x, matmul(a, layer.cross.wo));
    h = layer_norm(x, layer.ln3.gain, layer.ln3.bias);
    x = add(x, feed_forward(layer.ff, h));
  }
  return matmul_nt(layer_norm(x, dec_norm_.gain, dec_norm_.bias), output_);
}

}  // namespace psg
