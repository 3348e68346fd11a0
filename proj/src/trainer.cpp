// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "psg/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace psg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "PSGCKPT1";

void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

void put_f64s(std::string& out, std::span<const double> v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8, "integer");
    std::uint64_t v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n, "string");
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<double> f64s(std::uint64_t n) {
    if (n > bytes_.size() / sizeof(double)) throw std::runtime_error("checkpoint: array length out of range");
    need(n * sizeof(double), "array");
    std::vector<double> v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  void expect(std::string_view magic) {
    need(magic.size(), "header");
    if (bytes_.substr(pos_, magic.size()) != magic) throw std::runtime_error("checkpoint: bad magic");
    pos_ += magic.size();
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > bytes_.size() - pos_) throw std::runtime_error(std::string("checkpoint: truncated ") + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9e3779b97f4a7c15ULL + b;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<const Example*> pointers(std::span<const Example> all, std::span<const std::size_t> idx) {
  std::vector<const Example*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&all[i]);
  return out;
}

}  // namespace

double lr_at(std::size_t step, double peak, std::size_t warmup) {
  if (step == 0) throw std::invalid_argument("lr_at: steps count from 1");
  if (warmup == 0) return peak / std::sqrt(static_cast<double>(step));
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::size_t t, double lr, const AdamConfig& c) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ShapeError("adam_update", Shape{param.size()}, Shape{grad.size()});
  }
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    param[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
  }
}

Adam::Adam(const ParameterStore& params, AdamConfig config) : config_(config) {
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.value.numel(), 0.0);
    v_.emplace_back(e.value.numel(), 0.0);
  }
}

double Adam::step(ParameterStore& params, const Gradients& grads, double lr, double clip_norm) {
  const auto entries = params.entries();
  if (entries.size() != m_.size()) throw std::invalid_argument("Adam: parameter set changed");
  std::vector<std::optional<Tensor>> g(entries.size());
  double norm2 = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    g[i] = grads.of(entries[i].value);
    if (!g[i]) continue;
    for (double x : g[i]->data()) {
      if (!std::isfinite(x)) throw NumericError("non-finite gradient for parameter " + entries[i].name);
      norm2 += x * x;
    }
  }
  const double norm = std::sqrt(norm2);
  const double scale = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;
  ++t_;
  std::vector<double> scaled;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!g[i]) continue;
    std::span<const double> grad = g[i]->data();
    if (scale != 1.0) {
      scaled.assign(grad.begin(), grad.end());
      for (double& x : scaled) x *= scale;
      grad = scaled;
    }
    Tensor p = entries[i].value;
    adam_update(p.mutable_data(), grad, m_[i], v_[i], t_, lr, config_);
  }
  return norm;
}

void Adam::restore(std::size_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw std::invalid_argument("Adam: moment count mismatch");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size()) {
      throw std::invalid_argument("Adam: moment size mismatch");
    }
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic);
  put_u64(out, ckpt.step);
  const std::string config = ckpt.config.dump();
  put_u64(out, config.size());
  out += config;
  put_u64(out, ckpt.params.size());
  for (const auto& e : ckpt.params.entries()) {
    put_u64(out, e.name.size());
    out += e.name;
    put_u64(out, e.value.rank());
    for (std::size_t x : e.value.shape()) put_u64(out, x);
    put_f64s(out, e.value.data());
  }
  const bool moments = ckpt.adam_step > 0;
  put_u64(out, moments ? ckpt.adam_step : 0);
  if (moments) {
    if (ckpt.adam_m.size() != ckpt.params.size() || ckpt.adam_v.size() != ckpt.params.size()) {
      throw std::invalid_argument("checkpoint: optimizer moments do not match parameters");
    }
    for (const auto& m : ckpt.adam_m) put_f64s(out, m);
    for (const auto& v : ckpt.adam_v) put_f64s(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  in.expect(kMagic);
  Checkpoint ckpt;
  ckpt.step = in.u64();
  ckpt.config = nlohmann::json::parse(in.str());
  const std::uint64_t count = in.u64();
  std::vector<std::size_t> sizes;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = in.str();
    const std::uint64_t rank = in.u64();
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& x : shape) x = in.u64();
    const std::size_t n = shape_numel(shape);
    ckpt.params.add(std::move(name), Tensor::from(std::move(shape), in.f64s(n)));
    sizes.push_back(n);
  }
  ckpt.adam_step = in.u64();
  if (ckpt.adam_step > 0) {
    for (std::size_t n : sizes) ckpt.adam_m.push_back(in.f64s(n));
    for (std::size_t n : sizes) ckpt.adam_v.push_back(in.f64s(n));
  }
  if (!in.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ckpt;
}

void write_file_atomic(const std::filesystem::path& file, std::string_view content) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::filesystem::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
  write_file_atomic(file, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw std::invalid_argument("average_checkpoints: no checkpoints");
  const Checkpoint& first = checkpoints.front();
  for (const auto& c : checkpoints) {
    if (c.params.size() != first.params.size()) {
      throw std::invalid_argument("average_checkpoints: parameter count differs (" + std::to_string(c.params.size()) +
                                  " vs " + std::to_string(first.params.size()) + ")");
    }
    for (const auto& e : first.params.entries()) {
      if (!c.params.contains(e.name)) throw std::invalid_argument("average_checkpoints: missing parameter " + e.name);
      if (c.params.get(e.name).shape() != e.value.shape()) {
        throw std::invalid_argument("average_checkpoints: shape mismatch for parameter " + e.name);
      }
    }
  }
  Checkpoint out;
  out.step = checkpoints.back().step;
  out.config = checkpoints.back().config;
  for (const auto& e : first.params.entries()) {
    // Running mean: identical inputs reproduce their values exactly.
    std::vector<double> acc(e.value.numel(), 0.0);
    double k = 0.0;
    for (const auto& c : checkpoints) {
      const auto d = c.params.get(e.name).data();
      k += 1.0;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (d[i] - acc[i]) / k;
    }
    out.params.add(e.name, Tensor::from(e.value.shape(), std::move(acc)));
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(peak_lr > 0.0)) throw std::invalid_argument("peak learning rate must be positive");
  if (batch_tokens == 0) throw std::invalid_argument("batch_tokens must be positive");
  if (max_updates == 0) throw std::invalid_argument("max_updates must be positive");
  if (patience == 0) throw std::invalid_argument("patience must be at least 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw std::invalid_argument("label smoothing must lie in [0, 1)");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw std::invalid_argument("invalid Adam coefficients");
  }
  if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be non-negative");
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const Example> examples, std::size_t batch_tokens,
                                                   std::uint64_t seed) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto length = [&](std::size_t i) { return examples[i].source.size() + examples[i].target.size() + 1; };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return length(a) < length(b); });

  std::vector<std::vector<std::size_t>> batches;
  std::size_t tokens = 0;
  for (std::size_t i : order) {
    if (batches.empty() || (tokens + length(i) > batch_tokens && !batches.back().empty())) {
      batches.emplace_back();
      tokens = 0;
    }
    batches.back().push_back(i);
    tokens += length(i);
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

double evaluate_loss(const Model& model, std::span<const Example> examples, std::size_t batch_tokens,
                     double smoothing) {
  if (examples.empty()) throw std::invalid_argument("evaluate_loss: no examples");
  NoGradGuard guard;
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& batch : make_batches(examples, batch_tokens, 0)) {
    auto ctx = ForwardContext::inference();
    const auto ptrs = pointers(examples, batch);
    const LossParts parts = model.loss(ptrs, ctx, smoothing);
    total += parts.total.item() * static_cast<double>(parts.tokens);
    tokens += parts.tokens;
  }
  return total / static_cast<double>(tokens);
}

TrainReport train(const TrainConfig& config, const ModelConfig& model_config, ParameterStore& params,
                  std::span<const Example> train_set, std::span<const Example> valid_set, const TrainHooks& hooks) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const Model model(model_config, params);
  Adam adam(params, config.adam);
  const std::span<const Example> val = valid_set.empty() ? train_set : valid_set;

  TrainReport report;
  report.best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0, step = 0;
  for (std::size_t epoch = 1;; ++epoch) {
    if (config.max_epochs && epoch > config.max_epochs) {
      report.stop_reason = "max_epochs";
      break;
    }
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (const auto& batch : make_batches(train_set, config.batch_tokens, mix(config.seed, epoch))) {
      if (step >= config.max_updates) break;
      ++step;
      auto ctx = ForwardContext::training(mix(config.seed, step), model_config.backbone.dropout);
      const auto ptrs = pointers(train_set, batch);
      const LossParts parts = model.loss(ptrs, ctx, config.label_smoothing);
      const Gradients grads = backward(parts.total);

      const double lr = lr_at(step, config.peak_lr, config.warmup);
      adam.step(params, grads, lr, config.clip_norm);

      const double total = parts.total.item();
      epoch_loss += total * static_cast<double>(parts.tokens);
      epoch_tokens += parts.tokens;
      if (hooks.log) {
        nlohmann::json rec{{"step", step},       {"lr", lr},         {"l_mmt", parts.mmt},
                           {"l_prune", parts.prune}, {"l_nmt", parts.nmt}, {"l_total", total}};
        *hooks.log << rec.dump() << '\n';
      }
    }
    if (epoch_tokens == 0) {
      report.stop_reason = "max_updates";
      break;
    }

    EpochSummary summary;
    summary.epoch = epoch;
    summary.updates = step;
    summary.train_loss = epoch_loss / static_cast<double>(epoch_tokens);
    summary.val_loss = evaluate_loss(model, val, config.batch_tokens, config.label_smoothing);
    summary.improved = summary.val_loss < report.best_val_loss;
    if (summary.improved) {
      report.best_val_loss = summary.val_loss;
      since_best = 0;
    } else {
      ++since_best;
    }
    report.history.push_back(summary);
    report.epochs = epoch;
    report.updates = step;

    if (hooks.checkpoint_dir && config.save_checkpoints) {
      Checkpoint ckpt;
      ckpt.step = step;
      ckpt.config = hooks.config_snapshot;
      for (const auto& e : params.entries()) ckpt.params.add(e.name, e.value);
      ckpt.adam_step = adam.steps();
      ckpt.adam_m = adam.first_moments();
      ckpt.adam_v = adam.second_moments();
      const auto path = *hooks.checkpoint_dir / ("checkpoint_" + std::to_string(epoch) + ".bin");
      save_checkpoint(ckpt, path);
      report.checkpoints.push_back(path);
    }
    if (hooks.log) {
      nlohmann::json rec{{"epoch", epoch},
                         {"step", step},
                         {"train_loss", summary.train_loss},
                         {"val_loss", summary.val_loss},
                         {"improved", summary.improved}};
      *hooks.log << rec.dump() << '\n';
    }
    if (hooks.on_epoch && hooks.on_epoch(summary, model)) {
      report.stop_reason = "hook";
      break;
    }
    if (since_best >= config.patience) {
      report.stop_reason = "patience";
      break;
    }
    if (step >= config.max_updates) {
      report.stop_reason = "max_updates";
      break;
    }
  }
  return report;
}

}  // namespace psg
