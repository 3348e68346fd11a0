// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm Transformer encoder-decoder over packed rows. Every example occupies
// a contiguous run of encoder rows laid out as [text; language graph; visual
// graph; padding]; attention never crosses example boundaries.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "psg/params.hpp"
#include "psg/tensor.hpp"

namespace psg {

struct BackboneConfig {
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t d_model = 512;
  std::size_t d_ff = 2048;
  double dropout = 0.3;
  std::size_t max_positions = 256;
  bool segment_embeddings = true;
  bool learned_positions = false;  // trained "position" table instead of sinusoids
  bool tie_output = true;          // output projection shares "embed"; else "output"

  void validate() const;
};

enum class Segment : int { text = 0, language = 1, visual = 2 };

/// Dropout switch and seed stream for one forward pass.
class ForwardContext {
 public:
  static ForwardContext inference() { return ForwardContext(false, 0, 0.0); }
  static ForwardContext training(std::uint64_t seed, double dropout) { return ForwardContext(true, seed, dropout); }

  bool is_training() const noexcept { return training_; }
  /// Distinct for every call; a pure function of the seed and call order.
  std::uint64_t next_seed() noexcept;
  Tensor dropout(const Tensor& x);

 private:
  ForwardContext(bool training, std::uint64_t seed, double p) : training_(training), seed_(seed), p_(p) {}
  bool training_;
  std::uint64_t seed_;
  double p_;
  std::uint64_t calls_ = 0;
};

struct EncoderSpan {
  std::size_t begin = 0;
  std::size_t text = 0;
  std::size_t language = 0;
  std::size_t visual = 0;
  std::size_t padding = 0;

  std::size_t rows() const noexcept { return text + language + visual + padding; }
};

struct EncodedBatch {
  Tensor states;  // rows × d, after the final layer norm
  std::vector<EncoderSpan> spans;
  std::vector<char> key_valid;  // false on padding rows only
};

/// One example's encoder input; graph matrices may have zero rows.
struct JointInput {
  std::span<const int> source;
  Tensor language;  // p_l × d
  Tensor visual;    // p_v × d
  std::size_t padding = 0;
};

/// Incremental decoding state for one hypothesis.
struct DecodeCache {
  std::vector<int> tokens;
  std::vector<Tensor> self_k, self_v;    // per layer, t × d
  std::vector<Tensor> cross_k, cross_v;  // per layer, n × d
  std::vector<char> cross_valid;
};

class Backbone {
 public:
  /// Adds freshly initialized parameters under "embed", "segment", "position",
  /// "output", "enc.*", "dec.*" (the optional ones only when enabled).
  static void init_parameters(const BackboneConfig& config, std::size_t vocab, ParameterStore& store,
                              std::mt19937_64& rng);

  /// Binds to parameters already present in `store`.
  Backbone(const BackboneConfig& config, std::size_t vocab, const ParameterStore& store);

  const BackboneConfig& config() const noexcept { return config_; }
  std::size_t vocab() const noexcept { return vocab_; }
  const Tensor& embedding() const noexcept { return embed_; }

  /// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same), or the
  /// first `length` rows of the learned table.
  Tensor positional_encoding(std::size_t length) const;

  EncodedBatch encode_joint(std::span<const JointInput> examples, ForwardContext& ctx) const;
  EncodedBatch encode_text_only(std::span<const std::vector<int>> sources, ForwardContext& ctx) const;

  /// Teacher-forced logits for every target position, rows packed in example order.
  /// `targets[b]` starts with bos; pad ids are masked as keys.
  Tensor decode_train(const EncodedBatch& enc, std::span<const std::vector<int>> targets, ForwardContext& ctx) const;

  DecodeCache start_decoding(const EncodedBatch& enc, std::size_t example) const;
  /// Logits (1 × vocab) for the token after `prefix`, which must extend the cached
  /// tokens by exactly one id. Runs without gradient recording.
  Tensor decode_step(DecodeCache& cache, std::span<const int> prefix) const;

 private:
  struct AttentionParams {
    Tensor wq, wk, wv, wo;
  };
  struct NormParams {
    Tensor gain, bias;
  };
  struct FeedForwardParams {
    Tensor w1, b1, w2, b2;
  };
  struct EncoderLayer {
    NormParams ln1, ln2;
    AttentionParams self;
    FeedForwardParams ff;
  };
  struct DecoderLayer {
    NormParams ln1, ln2, ln3;
    AttentionParams self, cross;
    FeedForwardParams ff;
  };

  Tensor embed_tokens(std::span<const int> ids, std::span<const std::size_t> positions) const;
  Tensor feed_forward(const FeedForwardParams& p, const Tensor& x) const;
  Tensor decoder_stack(Tensor x, const AttentionLayout& self_layout, const AttentionLayout& cross_layout,
                       const EncodedBatch& enc, ForwardContext& ctx) const;

  BackboneConfig config_;
  std::size_t vocab_;
  Tensor embed_, segment_, position_, output_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  NormParams enc_norm_, dec_norm_;
  std::vector<double> pe_table_;  // max_positions × d
};

}  // namespace psg
