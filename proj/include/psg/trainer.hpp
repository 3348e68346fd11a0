// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimization: learning-rate schedule, Adam, token-budget batching, the
// epoch loop with early stopping, and versioned binary checkpoints.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "psg/model.hpp"
#include "psg/params.hpp"

namespace psg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

/// peak · min(step / warmup, √(warmup / step)); step counts from 1.
double lr_at(std::size_t step, double peak, std::size_t warmup);

/// One bias-corrected Adam update of a flat parameter; `t` is the 1-based step.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::size_t t, double lr, const AdamConfig& config);

class Adam {
 public:
  Adam(const ParameterStore& params, AdamConfig config);

  /// Applies one update to every parameter. Throws NumericError before touching
  /// any value when a gradient is NaN or infinite. With `clip_norm` > 0 the
  /// gradients are rescaled to global L2 norm at most `clip_norm` before they
  /// enter the moments. Returns the global norm before clipping.
  double step(ParameterStore& params, const Gradients& grads, double lr, double clip_norm = 0.0);

  std::size_t steps() const noexcept { return t_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }
  void restore(std::size_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct Checkpoint {
  std::uint64_t step = 0;
  nlohmann::json config;
  ParameterStore params;
  /// Adam state aligned with `params`; empty when dropped.
  std::uint64_t adam_step = 0;
  std::vector<std::vector<double>> adam_m, adam_v;
};

/// "PSGCKPT1", u64 step, u64-prefixed config JSON, u64 parameter count, then per
/// parameter u64-prefixed name, u64 rank, u64 extents, f64 values; then u64 Adam
/// step and, when non-zero, the moment vectors. All little-endian.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

/// Elementwise mean of parameters; optimizer state is dropped and the step and
/// config of the last checkpoint are kept. Throws naming the first mismatched parameter.
Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints);

/// Writes `content` to a temporary sibling and renames it over `file`.
void write_file_atomic(const std::filesystem::path& file, std::string_view content);

struct TrainConfig {
  double peak_lr = 0.005;
  std::size_t warmup = 2000;
  AdamConfig adam;
  double label_smoothing = 0.1;
  std::size_t batch_tokens = 4096;
  std::size_t max_updates = 80000;
  std::size_t max_epochs = 0;  // 0: bounded by max_updates only
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  bool save_checkpoints = true;

  void validate() const;
};

/// Groups example indices into batches of at most `batch_tokens` source+target
/// tokens, neighbors in length sharing a batch; order is a function of `seed`.
std::vector<std::vector<std::size_t>> make_batches(std::span<const Example> examples, std::size_t batch_tokens,
                                                   std::uint64_t seed);

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t updates = 0;
  double train_loss = 0.0;  // token-weighted mean total loss over the epoch
  double val_loss = 0.0;
  bool improved = false;
};

struct TrainReport {
  std::size_t updates = 0;
  std::size_t epochs = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;
  std::vector<EpochSummary> history;
  std::vector<std::filesystem::path> checkpoints;
};

struct TrainHooks {
  /// Receives one JSON object per update and per epoch.
  std::ostream* log = nullptr;
  /// Returning true stops training after the epoch.
  std::function<bool(const EpochSummary&, const Model&)> on_epoch;
  /// Stored in every checkpoint.
  nlohmann::json config_snapshot = nlohmann::json::object();
  /// Checkpoints go to `<dir>/checkpoint_<epoch>.bin` when set.
  std::optional<std::filesystem::path> checkpoint_dir;
};

/// Token-weighted mean loss without dropout.
double evaluate_loss(const Model& model, std::span<const Example> examples, std::size_t batch_tokens, double smoothing);

TrainReport train(const TrainConfig& config, const ModelConfig& model_config, ParameterStore& params,
                  std::span<const Example> train_set, std::span<const Example> valid_set, const TrainHooks& hooks = {});

}  // namespace psg
