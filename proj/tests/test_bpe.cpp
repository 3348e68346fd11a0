// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "psg/bpe.hpp"

using namespace psg;

namespace {

using Pair = std::pair<std::string, std::string>;

// Recounts every pair from scratch before each merge.
std::vector<Pair> naive_merges(const std::vector<std::string>& corpus, std::size_t merges) {
  std::vector<std::vector<std::string>> words;
  for (const auto& line : corpus) {
    std::size_t start = 0;
    while (start <= line.size()) {
      std::size_t end = line.find(' ', start);
      if (end == std::string::npos) end = line.size();
      if (end > start) {
        auto chars = utf8_chars(std::string_view(line).substr(start, end - start));
        chars.back() += BpeModel::kEndOfWord;
        words.push_back(chars);
      }
      start = end + 1;
    }
  }
  std::vector<Pair> out;
  while (out.size() < merges) {
    std::map<Pair, long> counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.size(); ++i) ++counts[{w[i], w[i + 1]}];
    }
    if (counts.empty()) break;
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const Pair p = best->first;
    out.push_back(p);
    for (auto& w : words) {
      std::vector<std::string> merged;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (i + 1 < w.size() && w[i] == p.first && w[i + 1] == p.second) {
          merged.push_back(p.first + p.second);
          ++i;
        } else {
          merged.push_back(w[i]);
        }
      }
      w = std::move(merged);
    }
  }
  return out;
}

std::vector<std::string> random_corpus(std::mt19937_64& rng, const std::vector<std::string>& alphabet, int lines) {
  std::uniform_int_distribution<std::size_t> ch(0, alphabet.size() - 1);
  std::uniform_int_distribution<int> len(1, 6), nwords(1, 5);
  std::vector<std::string> out;
  for (int l = 0; l < lines; ++l) {
    std::string line;
    const int n = nwords(rng);
    for (int w = 0; w < n; ++w) {
      if (w) line += ' ';
      const int k = len(rng);
      for (int i = 0; i < k; ++i) line += alphabet[ch(rng)];
    }
    out.push_back(line);
  }
  return out;
}

}  // namespace

TEST_CASE("zero merges give a character vocabulary plus specials") {
  const std::vector<std::string> corpus{"ab ba"};
  const BpeModel m = bpe_train(corpus, 0);
  CHECK(m.merges().empty());
  CHECK(m.vocab_size() == 4 + 2 * 2);
  CHECK(m.token(0) != m.token(1));
  CHECK(m.id("a") >= BpeModel::kNumSpecials);
  CHECK(m.id("b</w>") >= BpeModel::kNumSpecials);
}

TEST_CASE("the most frequent pair is merged first") {
  const std::vector<std::string> corpus{"aaab aab"};
  const BpeModel m = bpe_train(corpus, 1);
  REQUIRE(m.merges().size() == 1);
  CHECK(m.merges()[0] == Pair{"a", "a"});
  CHECK(m.tokenize("aaab") == std::vector<std::string>{"aa", "a", "b</w>"});
}

TEST_CASE("ties go to the lexicographically smallest pair") {
  const std::vector<std::string> corpus{"xy ab"};
  const BpeModel m = bpe_train(corpus, 1);
  CHECK(m.merges()[0] == Pair{"a", "b</w>"});
}

TEST_CASE("training stops when no pairs remain") {
  const std::vector<std::string> corpus{"ab"};
  CHECK(bpe_train(corpus, 100).merges().size() == 1);
  CHECK_THROWS(bpe_train(std::vector<std::string>{}, 5));
}

TEST_CASE("the incremental trainer agrees with a from-scratch recount") {
  std::mt19937_64 rng(21);
  const std::vector<std::string> alphabet{"a", "b", "c", "d", "\xc3\xa4", "\xc3\x9f"};
  for (int trial = 0; trial < 20; ++trial) {
    const auto corpus = random_corpus(rng, alphabet, 30);
    const BpeModel m = bpe_train(corpus, 60);
    CHECK(m.merges() == naive_merges(corpus, 60));
  }
}

TEST_CASE("empty text encodes to nothing") {
  const BpeModel m = bpe_train(std::vector<std::string>{"a b"}, 1);
  CHECK(m.encode("").empty());
  CHECK(m.decode(std::vector<int>{}).empty());
}

TEST_CASE("roundtrip over the training corpus and random alphabet strings") {
  std::mt19937_64 rng(22);
  const std::vector<std::string> alphabet{"e", "n", "r", "s", "\xc3\xbc", "t"};
  const auto corpus = random_corpus(rng, alphabet, 80);
  const BpeModel m = bpe_train(corpus, 120);
  for (const auto& line : corpus) CHECK(m.decode(m.encode(line)) == line);
  for (const auto& line : random_corpus(rng, alphabet, 80)) CHECK(m.decode(m.encode(line)) == line);
}

TEST_CASE("unknown characters map to unk and bad ids are rejected") {
  const BpeModel m = bpe_train(std::vector<std::string>{"ab"}, 0);
  const auto ids = m.encode("az");
  REQUIRE(ids.size() == 2);
  CHECK(ids[1] == m.specials().unk);
  CHECK_THROWS_AS(m.decode(std::vector<int>{static_cast<int>(m.vocab_size())}), std::out_of_range);
  CHECK_THROWS_AS(m.decode(std::vector<int>{-1}), std::out_of_range);
  const std::vector<int> framed{m.specials().bos, m.id("a"), m.id("b</w>"), m.specials().eos, m.specials().pad};
  CHECK(m.decode(framed) == "ab");
}

TEST_CASE("serialization is deterministic and lossless") {
  std::mt19937_64 rng(23);
  const auto corpus = random_corpus(rng, {"p", "q", "r", "\xe2\x82\xac"}, 40);
  const BpeModel a = bpe_train(corpus, 50), b = bpe_train(corpus, 50);
  CHECK(a.serialize() == b.serialize());
  const BpeModel c = BpeModel::deserialize(a.serialize());
  CHECK(c.serialize() == a.serialize());
  CHECK(c.vocab_size() == a.vocab_size());
  for (const auto& line : corpus) CHECK(c.encode(line) == a.encode(line));
  CHECK(a.serialize().rfind("bpe v1 50\n", 0) == 0);
  CHECK_THROWS(BpeModel::deserialize("bpe v2 0\n"));
}

TEST_CASE("multi-byte characters stay whole") {
  CHECK(utf8_chars("a\xc3\xa4\xe2\x82\xac") == std::vector<std::string>{"a", "\xc3\xa4", "\xe2\x82\xac"});
}
