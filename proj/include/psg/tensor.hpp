// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors with tape-based reverse-mode differentiation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace psg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when an operation receives incompatible operand shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string op, Shape lhs, Shape rhs);

  const std::string& op() const noexcept { return op_; }
  const Shape& lhs() const noexcept { return lhs_; }
  const Shape& rhs() const noexcept { return rhs_; }

 private:
  std::string op_;
  Shape lhs_;
  Shape rhs_;
};

/// Raised when a computation produces NaN or infinity where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Accumulates the gradient of one node into the gradients of its inputs.
// `input_grads[i]` is null when input i does not require a gradient.
using BackwardFn = std::function<void(const Node& self, const std::vector<double>& grad,
                                      std::span<std::vector<double>*> input_grads)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Handle to an immutable tensor value. Copies share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const double> data() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  /// Writable storage. Only legal on leaves (parameters and inputs); used by
  /// optimizers and finite-difference probes between graph constructions.
  std::span<double> mutable_data();

  bool requires_grad() const;
  bool is_leaf() const;
  const char* op_name() const;

  /// Identity of the underlying node; stable across handle copies.
  const void* id() const noexcept { return node_.get(); }

  /// A leaf holding a copy of this value with no history.
  Tensor detach(bool requires_grad = false) const;

  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  const detail::NodePtr& node() const noexcept { return node_; }

 private:
  detail::NodePtr node_;
};

/// Whether newly created operations are recorded for differentiation (thread-local).
bool grad_enabled() noexcept;

/// Disables recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Topologically ordered record of the operations between tracked leaves and a scalar loss.
class ComputeGraph {
 public:
  static ComputeGraph trace(const Tensor& loss);

  std::size_t size() const noexcept { return order_.size(); }
  std::span<const detail::Node* const> order() const noexcept { return order_; }

 private:
  std::vector<const detail::Node*> order_;  // inputs before consumers
};

/// Gradients of a scalar loss with respect to tracked leaves.
class Gradients {
 public:
  /// Gradient for `leaf`. Empty when the leaf is not tracked; zeros when it is tracked
  /// but the loss does not depend on it.
  std::optional<Tensor> of(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend Gradients backward(const ComputeGraph& graph, const Tensor& loss);
  std::unordered_map<const void*, std::vector<double>> grads_;
};

Gradients backward(const ComputeGraph& graph, const Tensor& loss);
Gradients backward(const Tensor& loss);

// ---- forward operations -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // (n×k)(k×m)
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // (n×k)(m×k)ᵀ
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// (n×d) + (d): the only broadcast supported.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces a matrix over `axis`; the result is a vector.
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
/// out[i] = x[i, cols[i]]
Tensor pick(const Tensor& x, std::span<const std::size_t> cols);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Inverted dropout with a Bernoulli(1-p) mask drawn from `seed`. p == 0 is the identity.
Tensor dropout(const Tensor& x, double p, std::uint64_t seed);

/// Row ranges of one attention problem inside packed query/key matrices.
struct AttentionBlock {
  std::size_t q_begin = 0;
  std::size_t q_len = 0;
  std::size_t k_begin = 0;
  std::size_t k_len = 0;
};

struct AttentionLayout {
  std::vector<AttentionBlock> blocks;
  /// Per key row; masked keys receive zero weight. Empty means all valid.
  std::vector<char> key_valid;
  /// Query i of a block sees key j iff j <= i + (k_len - q_len).
  bool causal = false;
  std::size_t heads = 1;
};

/// Multi-head scaled dot-product attention over packed rows. q, k, v are (rows × d)
/// with heads split across column groups; rows outside every block come out zero.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout);

// ---- gradient checking ------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares backward() against central differences for `params`, which must be tracked
/// leaves read by `f`. Checks at most `max_entries` entries per parameter (0 = all),
/// chosen deterministically. Relative error is |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<const Tensor> params,
                           double eps = 1e-5, std::size_t max_entries = 0);

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

}  // namespace psg
