// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/bpe.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace psg {

namespace {

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }
  return words;
}

std::vector<std::string> word_symbols(std::string_view word) {
  auto symbols = utf8_chars(word);
  if (!symbols.empty()) symbols.back() += BpeModel::kEndOfWord;
  return symbols;
}

using Pair = std::pair<std::string, std::string>;

// Merges every non-overlapping occurrence of `pair`, scanning left to right.
std::vector<std::string> merge_pair(const std::vector<std::string>& symbols, const Pair& pair) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
      out.push_back(symbols[i] + symbols[i + 1]);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0 && c < 0xF8) {
      len = 4;
    } else if (c >= 0xE0) {
      len = 3;
    } else if (c >= 0xC0) {
      len = 2;
    }
    if (c >= 0xF8 || i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

BpeModel::BpeModel(std::vector<std::string> alphabet, std::vector<std::pair<std::string, std::string>> merges)
    : alphabet_(std::move(alphabet)), merges_(std::move(merges)) {
  std::sort(alphabet_.begin(), alphabet_.end());
  alphabet_.erase(std::unique(alphabet_.begin(), alphabet_.end()), alphabet_.end());
  vocab_ = {"<pad>", "<s>", "</s>", "<unk>"};
  auto add = [this](const std::string& tok) {
    if (index_.emplace(tok, static_cast<int>(vocab_.size())).second) vocab_.push_back(tok);
  };
  for (const auto& t : vocab_) index_.emplace(t, static_cast<int>(index_.size()));
  for (const auto& ch : alphabet_) {
    add(ch);
    add(ch + std::string(kEndOfWord));
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    ranks_.emplace(merges_[r], r);
    add(merges_[r].first + merges_[r].second);
  }
}

std::vector<std::string> BpeModel::apply_merges(std::vector<std::string> symbols) const {
  while (symbols.size() > 1) {
    std::size_t best_rank = ranks_.size();
    const Pair* best = nullptr;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = ranks_.find({symbols[i], symbols[i + 1]});
      if (it != ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = &it->first;
      }
    }
    if (!best) break;
    symbols = merge_pair(symbols, *best);
  }
  return symbols;
}

std::vector<std::string> BpeModel::tokenize(std::string_view text) const {
  std::vector<std::string> out;
  for (auto word : split_words(text)) {
    auto pieces = apply_merges(word_symbols(word));
    out.insert(out.end(), std::make_move_iterator(pieces.begin()), std::make_move_iterator(pieces.end()));
  }
  return out;
}

std::vector<int> BpeModel::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& piece : tokenize(text)) ids.push_back(id(piece));
  return ids;
}

std::string BpeModel::decode(std::span<const int> ids) const {
  const SpecialIds sp;
  std::string out;
  for (int i : ids) {
    if (i < 0 || static_cast<std::size_t>(i) >= vocab_.size()) {
      throw std::out_of_range("decode: token id " + std::to_string(i) + " outside vocabulary of " +
                              std::to_string(vocab_.size()));
    }
    if (i == sp.pad || i == sp.bos || i == sp.eos) continue;
    const std::string& tok = vocab_[static_cast<std::size_t>(i)];
    if (tok.size() >= kEndOfWord.size() && tok.compare(tok.size() - kEndOfWord.size(), kEndOfWord.size(), kEndOfWord) == 0) {
      out.append(tok, 0, tok.size() - kEndOfWord.size());
      out.push_back(' ');
    } else {
      out += tok;
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

int BpeModel::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? SpecialIds{}.unk : it->second;
}

const std::string& BpeModel::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) throw std::out_of_range("token id");
  return vocab_[static_cast<std::size_t>(id)];
}

std::string BpeModel::serialize() const {
  std::ostringstream os;
  os << "bpe v1 " << merges_.size() << '\n';
  for (const auto& [l, r] : merges_) os << l << ' ' << r << '\n';
  os << "alphabet " << alphabet_.size() << '\n';
  for (const auto& ch : alphabet_) os << ch << '\n';
  return os.str();
}

BpeModel BpeModel::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto fail = [](const std::string& msg) { return std::runtime_error("bpe model: " + msg); };
  if (!std::getline(in, line)) throw fail("missing header");
  std::istringstream header(line);
  std::string magic, version;
  std::size_t count = 0;
  if (!(header >> magic >> version >> count) || magic != "bpe" || version != "v1") throw fail("bad header '" + line + "'");
  std::vector<Pair> merges;
  merges.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw fail("truncated merge list");
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) throw fail("bad merge line '" + line + "'");
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  std::vector<std::string> alphabet;
  if (std::getline(in, line)) {
    std::istringstream ah(line);
    std::string tag;
    std::size_t n = 0;
    if (!(ah >> tag >> n) || tag != "alphabet") throw fail("bad alphabet header '" + line + "'");
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(in, line)) throw fail("truncated alphabet");
      alphabet.push_back(line);
    }
  }
  return BpeModel(std::move(alphabet), std::move(merges));
}

BpeModel bpe_train(std::span<const std::string> corpus, std::size_t merges) {
  if (corpus.empty()) throw std::invalid_argument("bpe_train: empty corpus");
  std::map<std::string, long> freq;
  std::set<std::string> alphabet;
  for (const auto& sentence : corpus) {
    for (auto w : split_words(sentence)) {
      ++freq[std::string(w)];
      for (auto& ch : utf8_chars(w)) alphabet.insert(std::move(ch));
    }
  }

  std::vector<std::vector<std::string>> words;
  std::vector<long> counts;
  for (const auto& [w, c] : freq) {
    words.push_back(word_symbols(w));
    counts.push_back(c);
  }

  std::map<Pair, long> pair_counts;
  std::map<Pair, std::set<std::size_t>> where;
  auto account = [&](std::size_t wi, long sign) {
    const auto& s = words[wi];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      Pair p{s[i], s[i + 1]};
      auto& c = pair_counts[p];
      c += sign * counts[wi];
      if (c == 0) pair_counts.erase(p);
      if (sign > 0) where[p].insert(wi);
    }
  };
  for (std::size_t wi = 0; wi < words.size(); ++wi) account(wi, +1);

  std::vector<Pair> learned;
  while (learned.size() < merges && !pair_counts.empty()) {
    // std::map iterates pairs in lexicographic order, so the first maximum wins ties.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const Pair chosen = best->first;
    learned.push_back(chosen);
    const std::set<std::size_t> affected = where[chosen];
    for (std::size_t wi : affected) {
      account(wi, -1);
      words[wi] = merge_pair(words[wi], chosen);
      account(wi, +1);
    }
    where.erase(chosen);
  }
  return BpeModel(std::vector<std::string>(alphabet.begin(), alphabet.end()), std::move(learned));
}

}  // namespace psg
