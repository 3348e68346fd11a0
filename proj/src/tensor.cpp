// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <utility>

namespace psg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using CStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

using detail::BackwardFn;
using detail::Node;
using detail::NodePtr;

CMap cmap(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return CMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MMap mmap(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

const Node& N(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("operation on undefined tensor");
  return *t.node();
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::initializer_list<Tensor> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(const char* op, Shape shape, std::vector<double> value,
                     std::span<const Tensor> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) throw ShapeError(op, t.shape(), Shape(rank, 0));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

// A set of 1-D lanes over which a reduction or softmax runs.
struct Lanes {
  std::size_t count = 0;
  std::size_t length = 0;
  std::size_t lane_stride = 0;  // distance between lane starts
  std::size_t step = 0;         // distance between elements of a lane
};

Lanes lanes_for(const char* op, const Tensor& x, std::size_t axis) {
  if (x.rank() == 1 && axis == 0) return {1, x.dim(0), 0, 1};
  if (x.rank() == 2 && axis == 1) return {x.dim(0), x.dim(1), x.dim(1), 1};
  if (x.rank() == 2 && axis == 0) return {x.dim(1), x.dim(0), 1, x.dim(1)};
  throw ShapeError(op, x.shape(), Shape{axis});
}

}  // namespace

// ---- shapes and errors ------------------------------------------------------

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ShapeError::ShapeError(std::string op, Shape lhs, Shape rhs)
    : std::invalid_argument(op + ": incompatible shapes " + shape_str(lhs) + " and " +
                            shape_str(rhs)),
      op_(std::move(op)),
      lhs_(std::move(lhs)),
      rhs_(std::move(rhs)) {}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("from", shape, Shape{data.size()});
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return N(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("dim", s, Shape{axis});
  return s[axis];
}

std::size_t Tensor::numel() const { return N(*this).value.size(); }

std::span<const double> Tensor::data() const { return N(*this).value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item", shape(), Shape{});
  return N(*this).value[0];
}

double Tensor::at(std::size_t i) const { return N(*this).value.at(i); }

double Tensor::at(std::size_t i, std::size_t j) const {
  require_rank("at", *this, 2);
  if (i >= dim(0) || j >= dim(1)) throw std::out_of_range("Tensor::at");
  return N(*this).value[i * dim(1) + j];
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw std::logic_error("mutable_data on a non-leaf tensor");
  return node_->value;
}

bool Tensor::requires_grad() const { return N(*this).requires_grad; }

bool Tensor::is_leaf() const { return N(*this).inputs.empty(); }

const char* Tensor::op_name() const { return N(*this).op; }

Tensor Tensor::detach(bool requires_grad) const {
  return from(shape(), N(*this).value, requires_grad);
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- graph and backward -----------------------------------------------------

ComputeGraph ComputeGraph::trace(const Tensor& loss) {
  ComputeGraph graph;
  if (!loss.defined() || !loss.requires_grad()) return graph;
  std::unordered_map<const Node*, bool> visited;
  // Iterative post-order DFS: each node appears after all of its inputs.
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited[loss.node().get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited[child]) {
        visited[child] = true;
        stack.emplace_back(child, 0);
      }
    } else {
      graph.order_.push_back(node);
      stack.pop_back();
    }
  }
  return graph;
}

std::optional<Tensor> Gradients::of(const Tensor& leaf) const {
  if (!leaf.defined() || !leaf.requires_grad()) return std::nullopt;
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) return Tensor::zeros(leaf.shape());
  return Tensor::from(leaf.shape(), it->second);
}

bool Gradients::contains(const Tensor& leaf) const { return grads_.count(leaf.id()) != 0; }

Gradients backward(const ComputeGraph& graph, const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward", loss.defined() ? loss.shape() : Shape{}, Shape{});
  }
  Gradients out;
  if (graph.size() == 0) return out;
  std::unordered_map<const Node*, std::vector<double>> grads;
  grads[loss.node().get()] = {1.0};
  auto order = graph.order();
  std::vector<std::vector<double>*> in_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (node->inputs.empty()) {
      out.grads_[node] = std::move(found->second);
      continue;
    }
    in_grads.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Node* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& g = grads[in];
      if (g.empty() && !in->value.empty()) g.assign(in->value.size(), 0.0);
      in_grads[i] = &g;
    }
    // `found` may be invalidated by the insertions above.
    const std::vector<double>& g = grads.at(node);
    node->backward(*node, g, in_grads);
    grads.erase(node);
  }
  return out;
}

Gradients backward(const Tensor& loss) { return backward(ComputeGraph::trace(loss), loss); }

// ---- matrix products --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(n * m);
  mmap(out, n, m).noalias() = cmap(N(a).value, n, k) * cmap(N(b).value, k, m);
  return make_result("matmul", {n, m}, std::move(out), {a, b},
                     [n, k, m](const Node& self, const std::vector<double>& g, auto grads) {
                       const auto& A = self.inputs[0]->value;
                       const auto& B = self.inputs[1]->value;
                       if (grads[0]) {
                         mmap(*grads[0], n, k).noalias() += cmap(g, n, m) * cmap(B, k, m).transpose();
                       }
                       if (grads[1]) {
                         mmap(*grads[1], k, m).noalias() += cmap(A, n, k).transpose() * cmap(g, n, m);
                       }
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt", a.shape(), b.shape());
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  std::vector<double> out(n * m);
  mmap(out, n, m).noalias() = cmap(N(a).value, n, k) * cmap(N(b).value, m, k).transpose();
  return make_result("matmul_nt", {n, m}, std::move(out), {a, b},
                     [n, k, m](const Node& self, const std::vector<double>& g, auto grads) {
                       const auto& A = self.inputs[0]->value;
                       const auto& B = self.inputs[1]->value;
                       if (grads[0]) mmap(*grads[0], n, k).noalias() += cmap(g, n, m) * cmap(B, m, k);
                       if (grads[1]) {
                         mmap(*grads[1], m, k).noalias() += cmap(g, n, m).transpose() * cmap(A, n, k);
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<double> out(n * m);
  mmap(out, m, n) = cmap(N(a).value, n, m).transpose();
  return make_result("transpose", {m, n}, std::move(out), {a},
                     [n, m](const Node&, const std::vector<double>& g, auto grads) {
                       mmap(*grads[0], n, m) += cmap(g, m, n).transpose();
                     });
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> out(N(a).value);
  const auto& bv = N(b).value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [](const Node&, const std::vector<double>& g, auto grads) {
                       for (auto* dst : grads) {
                         if (!dst) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> out(N(a).value);
  const auto& bv = N(b).value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b},
                     [](const Node&, const std::vector<double>& g, auto grads) {
                       if (grads[0]) for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                       if (grads[1]) for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(N(a).value);
  const auto& bv = N(b).value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b},
                     [](const Node& self, const std::vector<double>& g, auto grads) {
                       const auto& av = self.inputs[0]->value;
                       const auto& bv = self.inputs[1]->value;
                       if (grads[0]) for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * bv[i];
                       if (grads[1]) for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * av[i];
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias", x.shape(), bias.shape());
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(N(x).value);
  const auto& bv = N(bias).value;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bv[j];
  }
  return make_result("add_bias", x.shape(), std::move(out), {x, bias},
                     [n, d](const Node&, const std::vector<double>& g, auto grads) {
                       if (grads[0]) for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                       if (grads[1]) {
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < d; ++j) (*grads[1])[j] += g[i * d + j];
                         }
                       }
                     });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(N(x).value);
  for (auto& v : out) v *= factor;
  return make_result("scale", x.shape(), std::move(out), {x},
                     [factor](const Node&, const std::vector<double>& g, auto grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += factor * g[i];
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(N(x).value);
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result("relu", x.shape(), std::move(out), {x},
                     [](const Node& self, const std::vector<double>& g, auto grads) {
                       const auto& xv = self.inputs[0]->value;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (xv[i] > 0.0) (*grads[0])[i] += g[i];
                       }
                     });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(N(x).value);
  for (auto& v : out) v = std::exp(v);
  return make_result("exp", x.shape(), std::move(out), {x},
                     [](const Node& self, const std::vector<double>& g, auto grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * self.value[i];
                     });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(N(x).value);
  for (auto& v : out) v = std::log(v);
  return make_result("log", x.shape(), std::move(out), {x},
                     [](const Node& self, const std::vector<double>& g, auto grads) {
                       const auto& xv = self.inputs[0]->value;
                       for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] / xv[i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
  return make_result("reshape", std::move(shape), N(x).value, {x},
                     [](const Node&, const std::vector<double>& g, auto grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                     });
}

// ---- softmax family ---------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Lanes L = lanes_for("softmax", x, axis);
  std::vector<double> out(N(x).value);
  for (std::size_t l = 0; l < L.count; ++l) {
    double* p = out.data() + l * L.lane_stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < L.length; ++i) mx = std::max(mx, p[i * L.step]);
    double total = 0.0;
    for (std::size_t i = 0; i < L.length; ++i) total += (p[i * L.step] = std::exp(p[i * L.step] - mx));
    for (std::size_t i = 0; i < L.length; ++i) p[i * L.step] /= total;
  }
  return make_result("softmax", x.shape(), std::move(out), {x},
                     [L](const Node& self, const std::vector<double>& g, auto grads) {
                       const auto& y = self.value;
                       auto& dx = *grads[0];
                       for (std::size_t l = 0; l < L.count; ++l) {
                         const std::size_t base = l * L.lane_stride;
                         double dot = 0.0;
                         for (std::size_t i = 0; i < L.length; ++i) {
                           const std::size_t at = base + i * L.step;
                           dot += g[at] * y[at];
                         }
                         for (std::size_t i = 0; i < L.length; ++i) {
                           const std::size_t at = base + i * L.step;
                           dx[at] += y[at] * (g[at] - dot);
                         }
                       }
                     });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const Lanes L = lanes_for("log_softmax", x, axis);
  std::vector<double> out(N(x).value);
  for (std::size_t l = 0; l < L.count; ++l) {
    double* p = out.data() + l * L.lane_stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < L.length; ++i) mx = std::max(mx, p[i * L.step]);
    double total = 0.0;
    for (std::size_t i = 0; i < L.length; ++i) total += std::exp(p[i * L.step] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t i = 0; i < L.length; ++i) p[i * L.step] -= lse;
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x},
                     [L](const Node& self, const std::vector<double>& g, auto grads) {
                       const auto& y = self.value;
                       auto& dx = *grads[0];
                       for (std::size_t l = 0; l < L.count; ++l) {
                         const std::size_t base = l * L.lane_stride;
                         double gsum = 0.0;
                         for (std::size_t i = 0; i < L.length; ++i) gsum += g[base + i * L.step];
                         for (std::size_t i = 0; i < L.length; ++i) {
                           const std::size_t at = base + i * L.step;
                           dx[at] += g[at] - std::exp(y[at]) * gsum;
                         }
                       }
                     });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto& v = N(x).value;
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result("sum", {}, {total}, {x},
                     [](const Node&, const std::vector<double>& g, auto grads) {
                       for (auto& d : *grads[0]) d += g[0];
                     });
}

Tensor mean(const Tensor& x) {
  const auto& v = N(x).value;
  if (v.empty()) throw ShapeError("mean", x.shape(), Shape{});
  const double n = static_cast<double>(v.size());
  const double total = std::accumulate(v.begin(), v.end(), 0.0) / n;
  return make_result("mean", {}, {total}, {x},
                     [n](const Node&, const std::vector<double>& g, auto grads) {
                       for (auto& d : *grads[0]) d += g[0] / n;
                     });
}

namespace {

Tensor reduce_axis(const char* op, const Tensor& x, std::size_t axis, bool average) {
  if (x.rank() != 2) throw ShapeError(op, x.shape(), Shape{axis});
  const Lanes L = lanes_for(op, x, axis);
  if (average && L.length == 0) throw ShapeError(op, x.shape(), Shape{axis});
  const double factor = average ? 1.0 / static_cast<double>(L.length) : 1.0;
  const auto& v = N(x).value;
  std::vector<double> out(L.count, 0.0);
  for (std::size_t l = 0; l < L.count; ++l) {
    double total = 0.0;
    for (std::size_t i = 0; i < L.length; ++i) total += v[l * L.lane_stride + i * L.step];
    out[l] = total * factor;
  }
  return make_result(op, {L.count}, std::move(out), {x},
                     [L, factor](const Node&, const std::vector<double>& g, auto grads) {
                       auto& dx = *grads[0];
                       for (std::size_t l = 0; l < L.count; ++l) {
                         for (std::size_t i = 0; i < L.length; ++i) {
                           dx[l * L.lane_stride + i * L.step] += g[l] * factor;
                         }
                       }
                     });
}

}  // namespace

Tensor sum_axis(const Tensor& x, std::size_t axis) { return reduce_axis("sum_axis", x, axis, false); }
Tensor mean_axis(const Tensor& x, std::size_t axis) { return reduce_axis("mean_axis", x, axis, true); }

// ---- structural -------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Tensor& first = parts.front();
  if (first.rank() != 2 || axis > 1) throw ShapeError("concat", first.shape(), Shape{axis});
  const std::size_t other = first.dim(1 - axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1 - axis) != other) throw ShapeError("concat", first.shape(), p.shape());
    total += p.dim(axis);
  }
  const Shape shape = axis == 0 ? Shape{total, other} : Shape{other, total};
  std::vector<double> out;
  out.reserve(total * other);
  std::vector<std::size_t> extents;
  extents.reserve(parts.size());
  for (const auto& p : parts) extents.push_back(p.dim(axis));
  if (axis == 0) {
    for (const auto& p : parts) out.insert(out.end(), N(p).value.begin(), N(p).value.end());
  } else {
    out.resize(total * other);
    std::size_t col = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.dim(1);
      const auto& v = N(p).value;
      for (std::size_t r = 0; r < other; ++r) {
        std::copy_n(v.data() + r * w, w, out.data() + r * total + col);
      }
      col += w;
    }
  }
  return make_result_n("concat", shape, std::move(out), parts,
                       [axis, other, total, extents](const Node&, const std::vector<double>& g, auto grads) {
                         std::size_t offset = 0;
                         for (std::size_t i = 0; i < extents.size(); ++i) {
                           const std::size_t e = extents[i];
                           if (grads[i]) {
                             auto& dst = *grads[i];
                             if (axis == 0) {
                               for (std::size_t j = 0; j < e * other; ++j) dst[j] += g[offset * other + j];
                             } else {
                               for (std::size_t r = 0; r < other; ++r) {
                                 for (std::size_t c = 0; c < e; ++c) dst[r * e + c] += g[r * total + offset + c];
                               }
                             }
                           }
                           offset += e;
                         }
                       });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank("gather_rows", x, 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * d);
  const auto& v = N(x).value;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw ShapeError("gather_rows", x.shape(), Shape{idx[i]});
    std::copy_n(v.data() + idx[i] * d, d, out.data() + i * d);
  }
  return make_result("gather_rows", {idx.size(), d}, std::move(out), {x},
                     [idx, d](const Node&, const std::vector<double>& g, auto grads) {
                       auto& dx = *grads[0];
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) dx[idx[i] * d + j] += g[i * d + j];
                       }
                     });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_rank("embedding_lookup", table, 2);
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.dim(0)) {
      throw ShapeError("embedding_lookup", table.shape(), Shape{static_cast<std::size_t>(id < 0 ? 0 : id)});
    }
    rows.push_back(static_cast<std::size_t>(id));
  }
  return gather_rows(table, rows);
}

Tensor pick(const Tensor& x, std::span<const std::size_t> cols) {
  require_rank("pick", x, 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (cols.size() != n) throw ShapeError("pick", x.shape(), Shape{cols.size()});
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  std::vector<double> out(n);
  const auto& v = N(x).value;
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= d) throw ShapeError("pick", x.shape(), Shape{idx[i]});
    out[i] = v[i * d + idx[i]];
  }
  return make_result("pick", {n}, std::move(out), {x},
                     [idx, d](const Node&, const std::vector<double>& g, auto grads) {
                       for (std::size_t i = 0; i < idx.size(); ++i) (*grads[0])[i * d + idx[i]] += g[i];
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank("slice_rows", x, 2);
  if (begin > end || end > x.dim(0)) throw ShapeError("slice_rows", x.shape(), Shape{begin, end});
  const std::size_t d = x.dim(1);
  const auto& v = N(x).value;
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(begin * d),
                          v.begin() + static_cast<std::ptrdiff_t>(end * d));
  return make_result("slice_rows", {end - begin, d}, std::move(out), {x},
                     [begin, d](const Node&, const std::vector<double>& g, auto grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[begin * d + i] += g[i];
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank("slice_cols", x, 2);
  if (begin > end || end > x.dim(1)) throw ShapeError("slice_cols", x.shape(), Shape{begin, end});
  const std::size_t n = x.dim(0), d = x.dim(1), w = end - begin;
  const auto& v = N(x).value;
  std::vector<double> out(n * w);
  for (std::size_t r = 0; r < n; ++r) std::copy_n(v.data() + r * d + begin, w, out.data() + r * w);
  return make_result("slice_cols", {n, w}, std::move(out), {x},
                     [n, d, w, begin](const Node&, const std::vector<double>& g, auto grads) {
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t c = 0; c < w; ++c) (*grads[0])[r * d + begin + c] += g[r * w + c];
                       }
                     });
}

// ---- normalization and regularization --------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 2 || gain.rank() != 1 || gain.dim(0) != x.dim(1)) {
    throw ShapeError("layer_norm", x.shape(), gain.shape());
  }
  require_same("layer_norm", gain, bias);
  const std::size_t n = x.dim(0), d = x.dim(1);
  const auto& xv = N(x).value;
  const auto& gv = N(gain).value;
  const auto& bv = N(bias).value;
  std::vector<double> out(n * d);
  // Normalized values and inverse deviations are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  auto inv = std::make_shared<std::vector<double>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = s;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * s;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                     [n, d, xhat, inv](const Node& self, const std::vector<double>& g, auto grads) {
                       const auto& gv = self.inputs[1]->value;
                       const auto& h = *xhat;
                       if (grads[1]) {
                         for (std::size_t i = 0; i < n * d; ++i) (*grads[1])[i % d] += g[i] * h[i];
                       }
                       if (grads[2]) {
                         for (std::size_t i = 0; i < n * d; ++i) (*grads[2])[i % d] += g[i];
                       }
                       if (grads[0]) {
                         auto& dx = *grads[0];
                         const double dd = static_cast<double>(d);
                         for (std::size_t r = 0; r < n; ++r) {
                           double s1 = 0.0, s2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dh = g[r * d + j] * gv[j];
                             s1 += dh;
                             s2 += dh * h[r * d + j];
                           }
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dh = g[r * d + j] * gv[j];
                             dx[r * d + j] += (*inv)[r] / dd * (dd * dh - s1 - h[r * d + j] * s2);
                           }
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  const double factor = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& m : *mask) m = keep(rng) ? factor : 0.0;
  std::vector<double> out(N(x).value);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  return make_result("dropout", x.shape(), std::move(out), {x},
                     [mask](const Node&, const std::vector<double>& g, auto grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * (*mask)[i];
                     });
}

// ---- attention --------------------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) throw ShapeError("attention", q.shape(), k.shape());
  require_same("attention", k, v);
  const std::size_t d = q.dim(1), heads = layout.heads;
  if (heads == 0 || d % heads != 0) throw ShapeError("attention", q.shape(), Shape{heads});
  if (!layout.key_valid.empty() && layout.key_valid.size() != k.dim(0)) {
    throw ShapeError("attention", k.shape(), Shape{layout.key_valid.size()});
  }
  const std::size_t dk = d / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto D = static_cast<Eigen::Index>(d);
  for (const auto& b : layout.blocks) {
    if (b.q_begin + b.q_len > q.dim(0) || b.k_begin + b.k_len > k.dim(0)) {
      throw ShapeError("attention", q.shape(), Shape{b.q_begin + b.q_len, b.k_begin + b.k_len});
    }
  }

  // One probability matrix per (block, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<RowMat>>();
  probs->reserve(layout.blocks.size() * heads);
  std::vector<double> out(q.dim(0) * d, 0.0);
  const auto& qv = N(q).value;
  const auto& kv = N(k).value;
  const auto& vv = N(v).value;
  const double neg_inf = -std::numeric_limits<double>::infinity();

  for (const auto& b : layout.blocks) {
    const auto ql = static_cast<Eigen::Index>(b.q_len), kl = static_cast<Eigen::Index>(b.k_len);
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(b.k_len) - static_cast<std::ptrdiff_t>(b.q_len);
    for (std::size_t h = 0; h < heads; ++h) {
      CStrided Q(qv.data() + b.q_begin * d + h * dk, ql, static_cast<Eigen::Index>(dk), Eigen::OuterStride<>(D));
      CStrided K(kv.data() + b.k_begin * d + h * dk, kl, static_cast<Eigen::Index>(dk), Eigen::OuterStride<>(D));
      CStrided V(vv.data() + b.k_begin * d + h * dk, kl, static_cast<Eigen::Index>(dk), Eigen::OuterStride<>(D));
      RowMat P = (Q * K.transpose()) * scl;
      for (Eigen::Index i = 0; i < ql; ++i) {
        double mx = neg_inf;
        for (Eigen::Index j = 0; j < kl; ++j) {
          const bool valid = (layout.key_valid.empty() || layout.key_valid[b.k_begin + static_cast<std::size_t>(j)]) &&
                             (!layout.causal || j <= i + shift);
          if (!valid) P(i, j) = neg_inf;
          mx = std::max(mx, P(i, j));
        }
        if (mx == neg_inf) {
          P.row(i).setZero();
          continue;
        }
        double total = 0.0;
        for (Eigen::Index j = 0; j < kl; ++j) total += (P(i, j) = std::exp(P(i, j) - mx));
        P.row(i) /= total;
      }
      MStrided O(out.data() + b.q_begin * d + h * dk, ql, static_cast<Eigen::Index>(dk), Eigen::OuterStride<>(D));
      O.noalias() = P * V;
      probs->push_back(std::move(P));
    }
  }

  const auto blocks = layout.blocks;
  return make_result(
      "attention", q.shape(), std::move(out), {q, k, v},
      [blocks, probs, heads, dk, d, scl, D](const Node& self, const std::vector<double>& g, auto grads) {
        const auto& qv = self.inputs[0]->value;
        const auto& kv = self.inputs[1]->value;
        const auto& vv = self.inputs[2]->value;
        const auto DK = static_cast<Eigen::Index>(dk);
        std::size_t slot = 0;
        for (const auto& b : blocks) {
          const auto ql = static_cast<Eigen::Index>(b.q_len), kl = static_cast<Eigen::Index>(b.k_len);
          for (std::size_t h = 0; h < heads; ++h, ++slot) {
            const RowMat& P = (*probs)[slot];
            CStrided dO(g.data() + b.q_begin * d + h * dk, ql, DK, Eigen::OuterStride<>(D));
            CStrided Q(qv.data() + b.q_begin * d + h * dk, ql, DK, Eigen::OuterStride<>(D));
            CStrided K(kv.data() + b.k_begin * d + h * dk, kl, DK, Eigen::OuterStride<>(D));
            CStrided V(vv.data() + b.k_begin * d + h * dk, kl, DK, Eigen::OuterStride<>(D));
            if (grads[2]) {
              MStrided dV(grads[2]->data() + b.k_begin * d + h * dk, kl, DK, Eigen::OuterStride<>(D));
              dV.noalias() += P.transpose() * dO;
            }
            if (!grads[0] && !grads[1]) continue;
            RowMat dP = dO * V.transpose();
            Eigen::VectorXd rowdot = (dP.cwiseProduct(P)).rowwise().sum();
            RowMat dS = P.cwiseProduct(dP.colwise() - rowdot) * scl;
            if (grads[0]) {
              MStrided dQ(grads[0]->data() + b.q_begin * d + h * dk, ql, DK, Eigen::OuterStride<>(D));
              dQ.noalias() += dS * K;
            }
            if (grads[1]) {
              MStrided dK(grads[1]->data() + b.k_begin * d + h * dk, kl, DK, Eigen::OuterStride<>(D));
              dK.noalias() += dS.transpose() * Q;
            }
          }
        }
      });
}

// ---- gradient checking ------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<const Tensor> params, double eps,
                           std::size_t max_entries) {
  GradCheckReport report;
  const Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss");
  const Gradients grads = backward(loss);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor param = params[p];
    const auto analytic = grads.of(param);
    if (!analytic) throw std::invalid_argument("grad_check: parameter is not tracked");
    const std::size_t n = param.numel();
    std::vector<std::size_t> entries;
    if (max_entries == 0 || n <= max_entries) {
      entries.resize(n);
      std::iota(entries.begin(), entries.end(), std::size_t{0});
    } else {
      std::mt19937_64 rng(0x9e3779b97f4a7c15ULL + p);
      std::uniform_int_distribution<std::size_t> pick_index(0, n - 1);
      for (std::size_t i = 0; i < max_entries; ++i) entries.push_back(pick_index(rng));
    }
    auto values = param.mutable_data();
    for (std::size_t idx : entries) {
      const double original = values[idx];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        values[idx] = original + eps;
        plus = f().item();
        values[idx] = original - eps;
        minus = f().item();
        values[idx] = original;
      }
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("grad_check: non-finite value under perturbation");
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic->at(idx);
      if (!std::isfinite(a)) throw NumericError("grad_check: non-finite analytic gradient");
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p;
        report.worst_index = idx;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  const Tensor leaf = x.detach(true);
  const Tensor params[] = {leaf};
  return grad_check([&] { return f(leaf); }, params, eps).max_rel_error;
}

}  // namespace psg
