// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <stdexcept>
#include <string>

#include "psg/tensor.hpp"

namespace psg {

/// Mean over non-pad rows of −Σ_v q_v log softmax(logits)_v with
/// q = (1 − ε)·onehot(target) + ε / V. Throws when every target is pad.
Tensor smoothed_ce_loss(const Tensor& logits, std::span<const int> targets, double smoothing, int pad_id = 0);

/// Raised when a loss component is NaN or infinite.
class NonFiniteLossError : public NumericError {
 public:
  NonFiniteLossError(std::string component, double value)
      : NumericError("non-finite " + component + " loss: " + std::to_string(value)), component_(std::move(component)) {}
  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

/// mmt + prune + nmt, after checking each component is finite.
Tensor total_loss(const Tensor& mmt, const Tensor& prune, const Tensor& nmt);

}  // namespace psg
