// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named, ordered collection of trainable leaves.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "psg/tensor.hpp"

namespace psg {

class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  /// Registers a tracked copy of `value`. Names are unique; insertion order is kept.
  const Tensor& add(std::string name, const Tensor& value);
  /// Throws std::out_of_range naming the parameter.
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::span<const Entry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t numel() const;

  /// Copies values from `other`, which must hold the same names and shapes.
  void assign(const ParameterStore& other);
  /// Leaf handles in insertion order.
  std::vector<Tensor> tensors() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Entries drawn from N(0, std²).
Tensor normal_tensor(Shape shape, double std, std::mt19937_64& rng);

}  // namespace psg
