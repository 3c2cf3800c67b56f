// SPDX-License-Identifier: Apache-2.0
#include "kdnas/distillation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "kdnas/error.hpp"

namespace kdnas {

void SgdConfig::validate() const {
  if (epochs < 0) throw ValidationError(fmt::format("epochs must be >= 0, got {}", epochs));
  if (!(lr > 0.0)) throw ValidationError(fmt::format("learning rate must be positive, got {}", lr));
  if (batch_size < 2) throw ValidationError(fmt::format("batch size must be >= 2, got {}", batch_size));
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight decay must be >= 0");
}

void KDConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError(fmt::format("temperature must be positive, got {}", temperature));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError(fmt::format("alpha must be in [0, 1], got {}", alpha));
  sgd.validate();
}

std::vector<double> soften(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError(fmt::format("temperature must be positive, got {}", temperature));
  if (logits.empty()) throw ValidationError("soften needs at least one logit");
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!std::isfinite(z)) throw ValidationError("non-finite logit");
    mx = std::max(mx, z);
  }
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

namespace {

// log of the temperature softmax, computed without forming p first.
std::vector<double> log_soften(std::span<const double> z, double t) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp((v - mx) / t);
  const double lse = std::log(sum);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - mx) / t - lse;
  return out;
}

void check_logits(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ValidationError("logits must be (N, K)");
  if (static_cast<std::size_t>(logits.dim(0)) != labels.size()) {
    throw ValidationError(fmt::format("{} logit rows but {} labels", logits.dim(0), labels.size()));
  }
  for (int y : labels) {
    if (y < 0 || y >= logits.dim(1)) throw ValidationError(fmt::format("label {} outside [0, {})", y, logits.dim(1)));
  }
}

}  // namespace

LossAndGrad kd_loss(const Tensor& student, const Tensor& teacher, std::span<const int> labels,
                    const KDConfig& config) {
  check_logits(student, labels);
  if (teacher.shape() != student.shape()) {
    throw ValidationError(fmt::format("teacher logits {} do not match student logits {}", shape_string(teacher.shape()),
                                      shape_string(student.shape())));
  }
  if (!(config.temperature > 0.0)) throw ValidationError("temperature must be positive");
  const int n = student.dim(0), k = student.dim(1);
  const double t = config.temperature, a = config.alpha;
  LossAndGrad out{0.0, Tensor(student.shape())};
  if (n == 0) return out;
  for (int i = 0; i < n; ++i) {
    const std::span<const double> zs(student.data() + static_cast<std::size_t>(i) * k, k);
    const std::span<const double> zt(teacher.data() + static_cast<std::size_t>(i) * k, k);
    for (double v : zs) {
      if (!std::isfinite(v)) throw ValidationError("non-finite student logit");
    }
    const auto ps = soften(zs, t);
    const auto pt = soften(zt, t);
    const auto lps = log_soften(zs, t);
    const auto lpt = log_soften(zt, t);
    double* g = out.grad.data() + static_cast<std::size_t>(i) * k;

    double soft = 0.0;
    if (config.soft_order == SoftTermOrder::TeacherStudent) {
      for (int j = 0; j < k; ++j) {
        soft -= pt[j] * lps[j];
        g[j] = (1.0 - a) * (ps[j] - pt[j]) / t;
      }
    } else {
      double mean_c = 0.0;
      for (int j = 0; j < k; ++j) {
        soft -= ps[j] * lpt[j];
        mean_c -= ps[j] * lpt[j];
      }
      for (int j = 0; j < k; ++j) g[j] = (1.0 - a) * ps[j] * (-lpt[j] - mean_c) / t;
    }
    const int y = labels[i];
    for (int j = 0; j < k; ++j) g[j] += a * (ps[j] - (j == y ? 1.0 : 0.0)) / t;
    out.loss += a * (-lps[y]) + (1.0 - a) * soft;
  }
  out.loss /= n;
  for (auto& v : out.grad.values()) v /= n;
  return out;
}

LossAndGrad cross_entropy(const Tensor& logits, std::span<const int> labels) {
  KDConfig c;
  c.temperature = 1.0;
  c.alpha = 1.0;
  return kd_loss(logits, logits, labels, c);
}

Tensor predict_logits(const StagedNetwork& net, const Dataset& split, int batch_size) {
  if (split.empty()) throw ValidationError(fmt::format("dataset split '{}' is empty", split.id));
  const int n = static_cast<int>(split.size());
  Tensor out({n, net.num_classes()});
  std::vector<std::size_t> idx;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), static_cast<std::size_t>(start));
    const Tensor logits = net.predict(gather_images(split, idx));
    std::copy(logits.values().begin(), logits.values().end(),
              out.data() + static_cast<std::size_t>(start) * net.num_classes());
  }
  return out;
}

double evaluate(const StagedNetwork& net, const Dataset& split) {
  if (split.num_classes != net.num_classes()) {
    throw ValidationError(fmt::format("network has {} classes, split has {}", net.num_classes(), split.num_classes));
  }
  const Tensor logits = predict_logits(net, split);
  const int k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const double* row = logits.data() + i * k;
    const int arg = static_cast<int>(std::max_element(row, row + k) - row);
    correct += arg == split.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

namespace {

using BatchLoss = std::function<LossAndGrad(std::span<const std::size_t> indices, const Tensor& logits)>;

TrainResult train_loop(StagedNetwork& net, const Dataset& train, const Dataset& val, const SgdConfig& cfg,
                       const BatchLoss& loss_fn) {
  cfg.validate();
  if (train.empty()) throw ValidationError("training split is empty");
  if (val.empty()) throw ValidationError("validation split is empty");
  if (train.num_classes != net.num_classes() || val.num_classes != net.num_classes()) {
    throw ValidationError(fmt::format("network has {} classes, dataset has {}", net.num_classes(), train.num_classes));
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  result.best_val_accuracy = evaluate(net, val);
  result.val_history.push_back(result.best_val_accuracy);
  ParameterTable best_params = net.params();
  ParameterTable best_buffers = net.buffers();

  ParameterTable velocity;
  for (const auto& [name, p] : net.params()) velocity.emplace(name, Tensor(p.shape()));
  std::mt19937_64 rng(cfg.seed ^ 0x5deece66dULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      if (end - start < 2) continue;  // batch statistics need two samples
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      ForwardTape tape;
      const Tensor logits = net.forward(gather_images(train, idx), Mode::Train, &tape);
      const LossAndGrad lg = loss_fn(idx, logits);
      if (!std::isfinite(lg.loss)) throw InternalError(fmt::format("non-finite training loss at epoch {}", epoch + 1));
      const ParameterTable grads = net.backward(tape, lg.grad);
      for (auto& [name, p] : net.params()) {
        const Tensor& g = grads.at(name);
        Tensor& v = velocity.at(name);
        for (std::size_t j = 0; j < p.size(); ++j) {
          v[j] = cfg.momentum * v[j] + g[j] + cfg.weight_decay * p[j];
          p[j] -= lr * v[j];
        }
      }
    }
    const double acc = evaluate(net, val);
    result.val_history.push_back(acc);
    if (acc > result.best_val_accuracy) {
      result.best_val_accuracy = acc;
      result.best_epoch = epoch + 1;
      best_params = net.params();
      best_buffers = net.buffers();
    }
  }
  net.params() = std::move(best_params);
  net.buffers() = std::move(best_buffers);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<int> gather_labels(const Dataset& d, std::span<const std::size_t> idx) {
  std::vector<int> y;
  y.reserve(idx.size());
  for (auto i : idx) y.push_back(d.labels[i]);
  return y;
}

}  // namespace

TrainResult train_supervised(StagedNetwork& net, const Dataset& train, const Dataset& val, const SgdConfig& config) {
  return train_loop(net, train, val, config, [&](std::span<const std::size_t> idx, const Tensor& logits) {
    return cross_entropy(logits, gather_labels(train, idx));
  });
}

DistillResult distill(const StagedNetwork& teacher, const ArchConfig& student_config, const Dataset& train,
                      const Dataset& val, const KDConfig& config) {
  config.validate();
  if (train.empty() || val.empty()) throw ValidationError("distillation needs non-empty train and val splits");
  if (teacher.num_classes() != train.num_classes) {
    throw ValidationError(
        fmt::format("teacher has {} classes, dataset has {}", teacher.num_classes(), train.num_classes));
  }
  const Tensor teacher_logits = predict_logits(teacher, train);
  const int k = teacher.num_classes();
  DistillResult out{StagedNetwork::build(teacher.spec(), student_config, k, config.sgd.seed), {}};
  out.train = train_loop(out.student, train, val, config.sgd, [&](std::span<const std::size_t> idx, const Tensor& logits) {
    Tensor t({static_cast<int>(idx.size()), k});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(teacher_logits.data() + idx[i] * k, k, t.data() + i * k);
    }
    return kd_loss(logits, t, gather_labels(train, idx), config);
  });
  return out;
}

}  // namespace kdnas
