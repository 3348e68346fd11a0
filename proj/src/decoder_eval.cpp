// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/decoder_eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace psg {

namespace {

constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;

/// Log-probabilities of the next token with pad and bos excluded.
std::vector<double> next_log_probs(const Tensor& logits) {
  std::vector<double> lp(logits.data().begin(), logits.data().end());
  lp[kPad] = lp[kBos] = -std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : lp) hi = std::max(hi, x);
  double z = 0.0;
  for (double x : lp) z += std::exp(x - hi);
  const double lse = hi + std::log(z);
  for (double& x : lp) x -= lse;
  return lp;
}

struct Live {
  DecodeCache cache;
  std::vector<int> prefix;  // starts with bos
  double log_prob = 0.0;
};

double normalized(double log_prob, std::size_t length, double alpha) {
  return log_prob / std::pow(static_cast<double>(length), alpha);
}

Hypothesis finish(const std::vector<int>& prefix, double log_prob, std::size_t length, double alpha, bool truncated) {
  Hypothesis h;
  h.tokens.assign(prefix.begin() + 1, prefix.end());
  h.log_prob = log_prob;
  h.score = normalized(log_prob, length, alpha);
  h.truncated = truncated;
  return h;
}

EncodedBatch encode_one(const Model& model, const Example& source) {
  NoGradGuard guard;
  auto ctx = ForwardContext::inference();
  const Example* batch[] = {&source};
  return model.encode(batch, ctx);
}

std::size_t length_limit(const Model& model, std::size_t max_length) {
  return std::min(max_length, model.backbone().config().max_positions);
}

}  // namespace

void BeamConfig::validate() const {
  if (beam == 0) throw std::invalid_argument("beam size must be at least 1");
  if (max_length == 0) throw std::invalid_argument("max length must be at least 1");
  if (!(length_penalty >= 0.0)) throw std::invalid_argument("length penalty must be non-negative");
}

Hypothesis beam_search(const Model& model, const Example& source, const BeamConfig& config) {
  config.validate();
  const EncodedBatch enc = encode_one(model, source);
  const std::size_t limit = length_limit(model, config.max_length);
  const std::size_t k = config.beam;

  std::vector<Live> live{{model.backbone().start_decoding(enc, 0), {kBos}, 0.0}};
  std::vector<Hypothesis> done;
  struct Candidate {
    double log_prob;
    std::size_t parent;
    int token;
  };
  for (std::size_t step = 0; step < limit && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto lp = next_log_probs(model.backbone().decode_step(live[b].cache, live[b].prefix));
      std::vector<int> ids(lp.size());
      for (std::size_t v = 0; v < ids.size(); ++v) ids[v] = static_cast<int>(v);
      const std::size_t top = std::min(k, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(top), ids.end(),
                        [&](int a, int c) { return lp[a] > lp[c] || (lp[a] == lp[c] && a < c); });
      for (std::size_t i = 0; i < top; ++i) {
        if (std::isfinite(lp[ids[i]])) cands.push_back({live[b].log_prob + lp[ids[i]], b, ids[i]});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& c) {
      if (a.log_prob != c.log_prob) return a.log_prob > c.log_prob;
      if (a.parent != c.parent) return a.parent < c.parent;
      return a.token < c.token;
    });

    std::vector<Live> next;
    for (std::size_t rank = 0; rank < cands.size() && next.size() < k; ++rank) {
      const Candidate& c = cands[rank];
      const Live& parent = live[c.parent];
      if (c.token == kEos) {
        // Only candidates inside the top k may finish.
        if (rank < k) done.push_back(finish(parent.prefix, c.log_prob, parent.prefix.size(), config.length_penalty, false));
        continue;
      }
      Live child{parent.cache, parent.prefix, c.log_prob};
      child.prefix.push_back(c.token);
      next.push_back(std::move(child));
    }
    live = std::move(next);
    if (done.size() >= k) break;
  }

  if (done.empty()) {
    if (live.empty()) throw std::logic_error("beam_search: no hypotheses survived");
    for (const Live& l : live) done.push_back(finish(l.prefix, l.log_prob, l.prefix.size() - 1, config.length_penalty, true));
  }
  // First maximum wins: hypotheses are stored in rank order.
  return *std::max_element(done.begin(), done.end(),
                           [](const Hypothesis& a, const Hypothesis& b) { return a.score < b.score; });
}

Hypothesis greedy_decode(const Model& model, const Example& source, std::size_t max_length) {
  if (max_length == 0) throw std::invalid_argument("max length must be at least 1");
  const EncodedBatch enc = encode_one(model, source);
  const std::size_t limit = length_limit(model, max_length);
  DecodeCache cache = model.backbone().start_decoding(enc, 0);
  std::vector<int> prefix{kBos};
  double log_prob = 0.0;
  for (std::size_t step = 0; step < limit; ++step) {
    const auto lp = next_log_probs(model.backbone().decode_step(cache, prefix));
    const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    log_prob += lp[best];
    if (best == kEos) return finish(prefix, log_prob, prefix.size(), 1.0, false);
    prefix.push_back(best);
  }
  return finish(prefix, log_prob, prefix.size() - 1, 1.0, true);
}

std::vector<std::string> bleu_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return out;
}

BleuResult corpus_bleu(std::span<const std::vector<std::string>> hypotheses,
                       std::span<const std::vector<std::string>> references, BleuOptions options) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                                std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");

  BleuResult r;
  std::array<std::size_t, 4> matched{}, total{};
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& ref = references[s];
    r.hypothesis_length += h.size();
    r.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) ++counts[{ref.begin() + i, ref.begin() + i + n}];
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        auto it = counts.find({h.begin() + i, h.begin() + i + n});
        if (it != counts.end() && it->second > 0) {
          --it->second;
          ++matched[n - 1];
        }
      }
      if (h.size() >= n) total[n - 1] += h.size() - n + 1;
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = total[n] ? static_cast<double>(matched[n]) / static_cast<double>(total[n]) : 0.0;
    if (r.precisions[n] == 0.0) zero = true;
    else log_sum += std::log(r.precisions[n]);
  }
  const double c = static_cast<double>(r.hypothesis_length), ref_len = static_cast<double>(r.reference_length);
  if (options.literal_brevity) {
    r.brevity_penalty = c > 0.0 ? 1.0 - ref_len / c : 0.0;
  } else {
    r.brevity_penalty = c == 0.0 ? 0.0 : (c > ref_len ? 1.0 : std::exp(1.0 - ref_len / c));
  }
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

void MeteorConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("METEOR alpha must lie in [0, 1]");
  if (!(beta >= 0.0) || !(gamma >= 0.0)) throw std::invalid_argument("METEOR beta and gamma must be non-negative");
}

double meteor_lite(std::span<const std::string> hypothesis, std::span<const std::string> reference,
                   const MeteorConfig& config) {
  config.validate();
  // Greedy tiling: repeatedly align the longest run of equal tokens over unused
  // positions (earliest in the hypothesis, then in the reference, on ties).
  // Runs of length one come last, so the match count is maximal.
  std::vector<char> used_h(hypothesis.size(), 0), used_r(reference.size(), 0);
  std::vector<std::ptrdiff_t> align(hypothesis.size(), -1);
  for (;;) {
    std::size_t best = 0, bi = 0, bj = 0;
    for (std::size_t i = 0; i < hypothesis.size(); ++i) {
      if (used_h[i]) continue;
      for (std::size_t j = 0; j < reference.size(); ++j) {
        std::size_t n = 0;
        while (i + n < hypothesis.size() && j + n < reference.size() && !used_h[i + n] && !used_r[j + n] &&
               hypothesis[i + n] == reference[j + n]) {
          ++n;
        }
        if (n > best) {
          best = n;
          bi = i;
          bj = j;
        }
      }
    }
    if (best == 0) break;
    for (std::size_t n = 0; n < best; ++n) {
      used_h[bi + n] = used_r[bj + n] = 1;
      align[bi + n] = static_cast<std::ptrdiff_t>(bj + n);
    }
  }

  std::size_t matches = 0, chunks = 0;
  for (std::size_t i = 0; i < align.size(); ++i) {
    if (align[i] < 0) continue;
    ++matches;
    if (i == 0 || align[i - 1] < 0 || align[i - 1] + 1 != align[i]) ++chunks;
  }
  if (matches == 0) return 0.0;
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(hypothesis.size()), r = m / static_cast<double>(reference.size());
  const double fmean = p * r / (config.alpha * p + (1.0 - config.alpha) * r);
  const double frag = static_cast<double>(chunks) / m;
  return (1.0 - config.gamma * std::pow(frag, config.beta)) * fmean;
}

double perplexity(const Model& model, const Example& example) {
  if (example.target.empty()) throw std::invalid_argument("perplexity: empty target");
  const Example* batch[] = {&example};
  const auto [log_lik, count] = model.target_log_likelihood(batch)[0];
  return std::exp(-log_lik / static_cast<double>(count));
}

double disambiguation_accuracy(const Model& model, std::span<const DisambiguationItem> items) {
  if (items.empty()) return 0.0;
  std::size_t wins = 0;
  for (const auto& item : items) {
    if (perplexity(model, item.positive) < perplexity(model, item.negative)) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(items.size());
}

}  // namespace psg
