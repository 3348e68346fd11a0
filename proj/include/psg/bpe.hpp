// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-pair encoding over UTF-8 code points. Word-final symbols carry an
// end-of-word marker so that decoding restores word boundaries.

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace psg {

struct SpecialIds {
  int pad = 0;
  int bos = 1;
  int eos = 2;
  int unk = 3;
};

class BpeModel {
 public:
  static constexpr std::string_view kEndOfWord = "</w>";
  static constexpr int kNumSpecials = 4;

  BpeModel() = default;
  BpeModel(std::vector<std::string> alphabet, std::vector<std::pair<std::string, std::string>> merges);

  const std::vector<std::pair<std::string, std::string>>& merges() const noexcept { return merges_; }
  const std::vector<std::string>& alphabet() const noexcept { return alphabet_; }
  SpecialIds specials() const noexcept { return {}; }
  std::size_t vocab_size() const noexcept { return vocab_.size(); }

  /// Subword strings for `text`; word-final pieces end with kEndOfWord.
  std::vector<std::string> tokenize(std::string_view text) const;
  std::vector<int> encode(std::string_view text) const;
  /// Skips pad/bos/eos; throws std::out_of_range for ids outside the vocabulary.
  std::string decode(std::span<const int> ids) const;

  /// Id of `token`, or the unk id.
  int id(std::string_view token) const;
  const std::string& token(int id) const;

  /// Text form: `bpe v1 <merges>`, one `<left> <right>` line per merge, then
  /// `alphabet <n>` and one symbol per line.
  std::string serialize() const;
  static BpeModel deserialize(std::string_view text);

 private:
  std::vector<std::string> apply_merges(std::vector<std::string> symbols) const;

  std::vector<std::string> alphabet_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
};

/// Splits text into UTF-8 code points (invalid bytes become single-byte units).
std::vector<std::string> utf8_chars(std::string_view text);

/// Learns up to `merges` merges; the most frequent pair wins, ties go to the
/// lexicographically smallest (left, right). Throws on an empty corpus.
BpeModel bpe_train(std::span<const std::string> corpus, std::size_t merges);

}  // namespace psg
