// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/pruner.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace psg {

void PruneConfig::validate() const {
  if (!(threshold >= 0.0)) throw std::invalid_argument("prune threshold must be non-negative");
}

Tensor cross_attention(const Tensor& fv, const Tensor& fl) {
  if (fv.rank() != 2 || fl.rank() != 2 || fv.cols() != fl.cols()) {
    throw ShapeError("cross_attention", fv.shape(), fl.shape());
  }
  if (fv.rows() == 0 || fl.rows() == 0) throw ShapeError("cross_attention", fv.shape(), fl.shape());
  return softmax(matmul_nt(fv, fl), 0);
}

std::vector<double> mean_scores(const Tensor& alpha) {
  if (alpha.rank() != 2 || alpha.cols() == 0) throw ShapeError("mean_scores", alpha.shape(), Shape{});
  const std::size_t pv = alpha.rows(), pl = alpha.cols();
  const auto a = alpha.data();
  std::vector<double> out(pv, 0.0);
  for (std::size_t i = 0; i < pv; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < pl; ++j) total += a[i * pl + j];
    out[i] = total / static_cast<double>(pl);
  }
  return out;
}

std::vector<std::size_t> select_nodes(std::span<const double> scores, double tau, bool keep_at_least_one) {
  std::vector<std::size_t> kept;
  if (scores.empty()) return kept;
  const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
  const double cut = tau / static_cast<double>(scores.size()) * total;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] >= cut) kept.push_back(i);
  }
  if (kept.empty() && keep_at_least_one) {
    kept.push_back(static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin()));
  }
  return kept;
}

PruneStep prune_step(const Tensor& fv, std::span<const double> scores, double tau, bool keep_at_least_one) {
  if (fv.rank() != 2 || fv.rows() != scores.size()) throw ShapeError("prune_step", fv.shape(), Shape{scores.size()});
  PruneStep step;
  step.kept = select_nodes(scores, tau, keep_at_least_one);
  step.features = gather_rows(fv, step.kept);
  return step;
}

Tensor pooled_kl(const Tensor& fv, const Tensor& fl) {
  const Tensor log_p = log_softmax(mean_axis(fv, 0), 0);
  const Tensor log_q = log_softmax(mean_axis(fl, 0), 0);
  return sum(mul(exp(log_p), sub(log_p, log_q)));
}

Tensor prune_loss(std::span<const Tensor> step_features, const Tensor& fl, StepWeighting weighting) {
  if (step_features.empty()) return Tensor::scalar(0.0);
  const double lambda = static_cast<double>(step_features.size());
  Tensor total;
  for (std::size_t s = 0; s < step_features.size(); ++s) {
    const double w = weighting == StepWeighting::step_index ? static_cast<double>(s + 1) : lambda;
    Tensor term = scale(pooled_kl(step_features[s], fl), w);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

PruneResult multi_step_prune(const Tensor& fv, const Tensor& fl, const PruneConfig& config, std::uint64_t seed) {
  config.validate();
  if (fv.rank() != 2 || fl.rank() != 2 || fv.cols() != fl.cols() || fv.rows() == 0 || fl.rows() == 0) {
    throw ShapeError("multi_step_prune", fv.shape(), fl.shape());
  }
  PruneResult result;
  result.trace.visual_nodes = fv.rows();
  result.trace.language_nodes = fl.rows();

  std::vector<std::size_t> ids(fv.rows());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Tensor current = fv;
  std::vector<Tensor> step_features;
  std::mt19937_64 rng(seed);

  for (std::size_t s = 0; s < config.steps; ++s) {
    PruneStepTrace st;
    std::vector<double> scores;
    {
      NoGradGuard guard;
      const Tensor alpha = cross_attention(current, fl);
      st.visual_nodes = alpha.rows();
      st.language_nodes = alpha.cols();
      st.attention.assign(alpha.data().begin(), alpha.data().end());
      scores = mean_scores(alpha);
    }
    std::vector<std::size_t> local = select_nodes(scores, config.threshold, config.keep_at_least_one);
    if (config.strategy == PruneStrategy::random) {
      std::vector<std::size_t> order(scores.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(local.size());
      std::sort(order.begin(), order.end());
      local = std::move(order);
    }
    if (local.empty()) {
      // Everything pruned: the remaining steps see no visual nodes.
      st.mean_scores = std::move(scores);
      result.trace.steps.push_back(std::move(st));
      ids.clear();
      current = Tensor::zeros({0, fv.cols()});
      break;
    }
    current = gather_rows(current, local);
    std::vector<std::size_t> next_ids;
    next_ids.reserve(local.size());
    for (std::size_t i : local) next_ids.push_back(ids[i]);
    ids = std::move(next_ids);

    st.mean_scores = std::move(scores);
    st.kept = ids;
    st.weight = config.weighting == StepWeighting::step_index ? static_cast<double>(s + 1)
                                                                : static_cast<double>(config.steps);
    step_features.push_back(current);
    result.trace.steps.push_back(std::move(st));
  }

  result.features = current;
  result.loss = Tensor::scalar(0.0);
  for (std::size_t s = 0; s < step_features.size(); ++s) {
    Tensor term = scale(pooled_kl(step_features[s], fl), result.trace.steps[s].weight);
    result.loss = s == 0 ? term : add(result.loss, term);
  }
  for (std::size_t s = 0; s < step_features.size(); ++s) {
    NoGradGuard guard;
    result.trace.steps[s].kl = pooled_kl(step_features[s], fl).item();
  }
  result.trace.final_kept = ids;
  return result;
}

}  // namespace psg
