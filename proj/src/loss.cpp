// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/loss.hpp"

#include <cmath>
#include <vector>

namespace psg {

Tensor smoothed_ce_loss(const Tensor& logits, std::span<const int> targets, double smoothing, int pad_id) {
  if (logits.rank() != 2 || logits.rows() != targets.size()) {
    throw ShapeError("smoothed_ce_loss", logits.shape(), Shape{targets.size()});
  }
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw std::invalid_argument("label smoothing must lie in [0, 1)");
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == pad_id) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= logits.cols()) {
      throw std::out_of_range("target id " + std::to_string(targets[i]) + " outside vocabulary");
    }
    rows.push_back(i);
    cols.push_back(static_cast<std::size_t>(targets[i]));
  }
  if (rows.empty()) throw std::invalid_argument("smoothed_ce_loss: every target is padding");
  const Tensor live = rows.size() == targets.size() ? logits : gather_rows(logits, rows);
  const Tensor lp = log_softmax(live, 1);
  const double n = static_cast<double>(rows.size());
  Tensor loss = scale(sum(pick(lp, cols)), -(1.0 - smoothing) / n);
  if (smoothing > 0.0) loss = add(loss, scale(sum(lp), -smoothing / (n * static_cast<double>(logits.cols()))));
  return loss;
}

Tensor total_loss(const Tensor& mmt, const Tensor& prune, const Tensor& nmt) {
  const std::pair<const char*, const Tensor*> parts[] = {{"mmt", &mmt}, {"prune", &prune}, {"nmt", &nmt}};
  for (const auto& [name, t] : parts) {
    if (!std::isfinite(t->item())) throw NonFiniteLossError(name, t->item());
  }
  return add(add(mmt, prune), nmt);
}

}  // namespace psg
