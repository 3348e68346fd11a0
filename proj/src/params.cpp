// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/params.hpp"

#include <algorithm>
#include <stdexcept>

namespace psg {

const Tensor& ParameterStore::add(std::string name, const Tensor& value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), value.detach(true)});
  return entries_.back().value;
}

const Tensor& ParameterStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].value;
}

bool ParameterStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::size_t ParameterStore::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParameterStore::assign(const ParameterStore& other) {
  if (other.size() != size()) throw std::invalid_argument("parameter count mismatch");
  for (auto& e : entries_) {
    const Tensor& src = other.get(e.name);
    if (src.shape() != e.value.shape()) throw ShapeError("assign " + e.name, e.value.shape(), src.shape());
    auto dst = e.value.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

Tensor normal_tensor(Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace psg
