// SPDX-License-Identifier: Apache-2.0
#include "kdnas/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fused_mlp.hpp"
#include "kdnas/distillation.hpp"
#include "kdnas/error.hpp"
#include "kdnas/io.hpp"
#include "kdnas/rank_correlation.hpp"

namespace kdnas {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw AdaptationError(fmt::format("non-finite {}", what));
  }
}

std::vector<double> support_gradient(const Regressor& model, std::span<const double> phi, std::size_t support,
                                     double target) {
  std::vector<double> g(model.num_params(), 0.0);
  model.accumulate_sq_grad(phi, support, target, 1.0, g);
  require_finite(g, "inner gradient");
  return g;
}

void check_sizes(const Regressor& model, std::span<const double> phi, std::span<const double> alpha) {
  if (phi.size() != model.num_params() || alpha.size() != model.num_params()) {
    throw ValidationError(fmt::format("phi/alpha sizes {}/{} do not match model size {}", phi.size(), alpha.size(),
                                      model.num_params()));
  }
}

}  // namespace

std::vector<double> inner_adapt(const Regressor& model, std::span<const double> phi, std::span<const double> alpha,
                                std::size_t support, double target, int steps) {
  check_sizes(model, phi, alpha);
  if (steps < 0) throw ValidationError(fmt::format("inner step count must be >= 0, got {}", steps));
  std::vector<double> cur(phi.begin(), phi.end());
  for (int i = 0; i < steps; ++i) {
    const auto g = support_gradient(model, cur, support, target);
    for (std::size_t j = 0; j < cur.size(); ++j) cur[j] -= alpha[j] * g[j];
  }
  return cur;
}

MetaGradient meta_gradient(const Regressor& model, std::span<const double> phi, std::span<const double> alpha,
                           const MetaTask& task, int inner_steps, bool first_order) {
  check_sizes(model, phi, alpha);
  if (inner_steps < 0) throw ValidationError(fmt::format("inner step count must be >= 0, got {}", inner_steps));
  if (task.queries.empty() || task.queries.size() != task.query_targets.size()) {
    throw UsageError("meta task needs matching, non-empty queries and targets");
  }
  const std::size_t n = phi.size();

  std::vector<std::vector<double>> iterates{{phi.begin(), phi.end()}};
  std::vector<std::vector<double>> inner_grads;
  for (int i = 0; i < inner_steps; ++i) {
    inner_grads.push_back(support_gradient(model, iterates.back(), task.support, task.support_target));
    std::vector<double> next = iterates.back();
    for (std::size_t j = 0; j < n; ++j) next[j] -= alpha[j] * inner_grads.back()[j];
    iterates.push_back(std::move(next));
  }

  MetaGradient out;
  std::vector<double> lambda(n, 0.0);
  const double w = 1.0 / static_cast<double>(task.queries.size());
  for (std::size_t q = 0; q < task.queries.size(); ++q) {
    out.loss += model.accumulate_sq_grad(iterates.back(), task.queries[q], task.query_targets[q], w, lambda);
  }
  require_finite(lambda, "outer gradient");

  out.d_alpha.assign(n, 0.0);
  std::vector<Dual> phi_dual(n);
  std::vector<Dual> grad_dual(n);
  for (int i = inner_steps - 1; i >= 0; --i) {
    const auto& g = inner_grads[i];
    for (std::size_t j = 0; j < n; ++j) out.d_alpha[j] -= g[j] * lambda[j];
    if (first_order) continue;
    // lambda <- (I - H_i diag(alpha)) lambda, H_i by forward-over-reverse.
    for (std::size_t j = 0; j < n; ++j) {
      phi_dual[j] = Dual(iterates[i][j], alpha[j] * lambda[j]);
      grad_dual[j] = Dual();
    }
    model.accumulate_sq_grad(std::span<const Dual>(phi_dual), task.support, task.support_target, 1.0,
                             std::span<Dual>(grad_dual));
    for (std::size_t j = 0; j < n; ++j) lambda[j] -= grad_dual[j].d;
    require_finite(lambda, "second-order term");
  }
  out.d_phi = std::move(lambda);
  return out;
}

void adam_update(const AdamConfig& config, long t, std::span<double> params, std::span<const double> grad,
                 AdamMoments& moments) {
  if (moments.m.size() != params.size()) moments.m.assign(params.size(), 0.0);
  if (moments.v.size() != params.size()) moments.v.assign(params.size(), 0.0);
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t j = 0; j < params.size(); ++j) {
    moments.m[j] = config.beta1 * moments.m[j] + (1.0 - config.beta1) * grad[j];
    moments.v[j] = config.beta2 * moments.v[j] + (1.0 - config.beta2) * grad[j] * grad[j];
    const double mhat = moments.m[j] / c1;
    const double vhat = moments.v[j] / c2;
    params[j] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

PredictorState init_predictor(const PredictorConfig& config) {
  if (config.inner_steps < 0) throw ValidationError("inner_steps must be >= 0");
  if (!(config.meta_lr > 0.0)) throw ValidationError("meta_lr must be positive");
  PredictorState s;
  s.config = config;
  const ParamLayout layout(config.dims);
  s.phi.assign(layout.size(), 0.0);
  std::mt19937_64 rng(config.seed);
  for (const auto& b : layout.blocks()) {
    if (b.name.ends_with(".bias")) continue;
    const double limit = b.name == "head.weight" ? 1.0 / std::sqrt(static_cast<double>(b.cols))
                                                 : std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t i = 0; i < b.size(); ++i) s.phi[b.offset + i] = u(rng);
  }
  s.alpha.assign(layout.size(), config.alpha_init);
  return s;
}

PairRegressor::PairRegressor(const ParamLayout& layout, std::vector<const PairFeatures*> inputs)
    : layout_(&layout), inputs_(std::move(inputs)) {
  for (const auto* f : inputs_) {
    if (f == nullptr) throw ValidationError("null pair features");
    if (f->onehot.size() != layout.dims().onehot || f->student.size() != layout.dims().feature ||
        f->teacher.size() != layout.dims().feature) {
      throw ValidationError("pair features do not match the predictor dimensions");
    }
  }
}

namespace {

template <class T>
T sq_grad(const ParamLayout& layout, std::span<const T> phi, const PairFeatures& f, double target, double weight,
          std::span<T> grad) {
  const detail::Offsets o(layout);
  detail::FusedPass<T> pass;
  detail::fused_forward(o, phi.data(), f, pass);
  const T r = pass.pred - target;
  detail::fused_backward<T>(o, phi.data(), f, pass, nullptr, (2.0 * weight) * r, grad.data());
  return weight * (r * r);
}

}  // namespace

double PairRegressor::predict(std::span<const double> phi, std::size_t input) const {
  const detail::Offsets o(*layout_);
  detail::FusedPass<double> pass;
  detail::fused_forward(o, phi.data(), *inputs_.at(input), pass);
  return pass.pred;
}

double PairRegressor::accumulate_sq_grad(std::span<const double> phi, std::size_t input, double target,
                                         double weight, std::span<double> grad) const {
  return sq_grad<double>(*layout_, phi, *inputs_.at(input), target, weight, grad);
}

Dual PairRegressor::accumulate_sq_grad(std::span<const Dual> phi, std::size_t input, double target, double weight,
                                       std::span<Dual> grad) const {
  return sq_grad<Dual>(*layout_, phi, *inputs_.at(input), target, weight, grad);
}

double predict(const PredictorState& state, const PairFeatures& features) {
  const ParamLayout layout = state.layout();
  return PairRegressor(layout, {&features}).predict(state.phi, 0);
}

double predict(const PredictorState& state, const ArchConfig& student, const StagedNetwork& teacher,
               const NoiseProbe& probe) {
  return predict(state, TeacherEncoder(teacher, probe).encode(student));
}

PredictorState adapt(const PredictorState& state, const PairFeatures& teacher_pair, double teacher_accuracy) {
  const ParamLayout layout = state.layout();
  const PairRegressor model(layout, {&teacher_pair});
  PredictorState out = state;
  out.phi = inner_adapt(model, state.phi, state.alpha, 0, teacher_accuracy, state.config.inner_steps);
  return out;
}

PredictorState adapt_to_unseen(const PredictorState& state, const StagedNetwork& teacher, const NoiseProbe& probe,
                               const Dataset& val, double* teacher_accuracy) {
  if (val.empty()) throw ValidationError("adaptation needs a non-empty validation split");
  const double acc = evaluate(teacher, val);
  if (teacher_accuracy) *teacher_accuracy = acc;
  return adapt(state, TeacherEncoder(teacher, probe).encode_teacher(), acc);
}

double meta_step(PredictorState& state, const std::vector<TaskBatch>& batch) {
  if (batch.empty()) throw UsageError("meta_step needs at least one task");
  const ParamLayout layout = state.layout();
  const std::size_t n = layout.size();
  std::vector<double> d_phi(n, 0.0), d_alpha(n, 0.0);
  double loss = 0.0;
  for (const auto& task : batch) {
    if (task.teacher_pair == nullptr) throw UsageError("task has no teacher pair");
    if (task.queries.empty() || task.queries.size() != task.accuracies.size()) {
      throw UsageError("task needs at least one query pair with a matching accuracy");
    }
    std::vector<const PairFeatures*> inputs{task.teacher_pair};
    inputs.insert(inputs.end(), task.queries.begin(), task.queries.end());
    const PairRegressor model(layout, std::move(inputs));
    MetaTask mt;
    mt.support = 0;
    mt.support_target = task.teacher_accuracy;
    mt.queries.resize(task.queries.size());
    std::iota(mt.queries.begin(), mt.queries.end(), std::size_t{1});
    mt.query_targets = task.accuracies;
    const auto g = meta_gradient(model, state.phi, state.alpha, mt, state.config.inner_steps,
                                 state.config.first_order);
    loss += g.loss;
    for (std::size_t j = 0; j < n; ++j) {
      d_phi[j] += g.d_phi[j];
      d_alpha[j] += g.d_alpha[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t j = 0; j < n; ++j) {
    d_phi[j] *= inv;
    d_alpha[j] *= inv;
  }
  const AdamConfig adam{state.config.meta_lr};
  ++state.step;
  adam_update(adam, state.step, state.phi, d_phi, state.adam_phi);
  adam_update(adam, state.step, state.alpha, d_alpha, state.adam_alpha);
  return loss * inv;
}

double validation_src(const PredictorState& state, const std::vector<EncodedTask>& tasks) {
  if (tasks.empty()) throw UsageError("validation needs at least one task");
  double total = 0.0;
  for (const auto& t : tasks) {
    const PredictorState adapted = adapt(state, t.teacher_pair, t.teacher_accuracy);
    std::vector<double> preds;
    preds.reserve(t.features.size());
    for (const auto& f : t.features) preds.push_back(predict(adapted, f));
    total += spearman(preds, t.accuracies);
  }
  return total / static_cast<double>(tasks.size());
}

MetaTrainResult meta_train(const PredictorState& initial, const std::vector<EncodedTask>& train,
                           const std::vector<EncodedTask>& val, const MetaSchedule& schedule,
                           const MetaTrainCallback& on_eval) {
  if (train.empty()) throw UsageError("meta-training needs at least one meta-train task");
  if (val.empty()) throw UsageError("meta-training needs at least one meta-validation task");
  if (schedule.iterations < 0 || schedule.meta_batch < 1 || schedule.queries_per_task < 1 || schedule.eval_every < 1) {
    throw ValidationError("invalid meta-training schedule");
  }
  for (const auto& t : train) {
    if (t.features.empty() || t.features.size() != t.accuracies.size()) {
      throw SchemaError(fmt::format("task '{}' has no usable query pairs", t.id));
    }
  }

  MetaTrainResult result;
  result.best = initial;
  result.last = initial;
  if (schedule.iterations == 0) return result;

  auto evaluate = [&](int step, double loss) {
    MetaTrainRecord rec{step, loss, validation_src(result.last, val)};
    result.history.push_back(rec);
    if (on_eval) on_eval(rec);
    if (result.history.size() == 1 || rec.val_src > result.best_val_src) {
      result.best = result.last;
      result.best_step = step;
      result.best_val_src = rec.val_src;
      if (!schedule.checkpoint.empty()) save_predictor(result.best, schedule.checkpoint);
    }
  };
  evaluate(0, 0.0);

  std::mt19937_64 rng(schedule.seed);
  std::vector<std::size_t> task_order(train.size());
  std::iota(task_order.begin(), task_order.end(), 0);
  for (int it = 1; it <= schedule.iterations; ++it) {
    std::shuffle(task_order.begin(), task_order.end(), rng);
    const std::size_t nb = std::min<std::size_t>(schedule.meta_batch, train.size());
    std::vector<TaskBatch> batch;
    for (std::size_t b = 0; b < nb; ++b) {
      const auto& t = train[task_order[b]];
      std::vector<std::size_t> idx(t.features.size());
      std::iota(idx.begin(), idx.end(), 0);
      const std::size_t nq = std::min<std::size_t>(schedule.queries_per_task, idx.size());
      for (std::size_t k = 0; k < nq; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
        std::swap(idx[k], idx[pick(rng)]);
      }
      TaskBatch tb;
      tb.teacher_pair = &t.teacher_pair;
      tb.teacher_accuracy = t.teacher_accuracy;
      for (std::size_t k = 0; k < nq; ++k) {
        tb.queries.push_back(&t.features[idx[k]]);
        tb.accuracies.push_back(t.accuracies[idx[k]]);
      }
      batch.push_back(std::move(tb));
    }
    const double loss = meta_step(result.last, batch);
    if (it % schedule.eval_every == 0 || it == schedule.iterations) evaluate(it, loss);
  }
  return result;
}

namespace {

constexpr const char* kPredictorFormat = "kdnas-predictor";

Tensor vec_tensor(std::span<const double> v, std::size_t offset, std::vector<int> shape) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(v.begin() + offset, v.begin() + offset + n));
}

}  // namespace

void save_predictor(const PredictorState& state, const std::filesystem::path& stem) {
  const ParamLayout layout = state.layout();
  ParameterTable table;
  for (const auto& b : layout.blocks()) {
    const std::vector<int> shape{static_cast<int>(b.rows), static_cast<int>(b.cols)};
    table.emplace("phi/" + b.name, vec_tensor(state.phi, b.offset, shape));
    table.emplace("alpha/" + b.name, vec_tensor(state.alpha, b.offset, shape));
  }
  auto put_moments = [&](const std::string& name, const AdamMoments& m) {
    if (m.m.empty()) return;
    table.emplace("adam/" + name + ".m", vec_tensor(m.m, 0, {static_cast<int>(m.m.size())}));
    table.emplace("adam/" + name + ".v", vec_tensor(m.v, 0, {static_cast<int>(m.v.size())}));
  };
  put_moments("phi", state.adam_phi);
  put_moments("alpha", state.adam_alpha);
  const std::string bytes = encode_tensor_archive(table);

  const auto& c = state.config;
  nlohmann::ordered_json m;
  m["format"] = kPredictorFormat;
  m["version"] = 1;
  m["dims"] = {{"onehot", c.dims.onehot},
               {"feature", c.dims.feature},
               {"embed", c.dims.embed},
               {"hidden", c.dims.hidden},
               {"sigma_layers", c.dims.sigma_layers}};
  m["inner_steps"] = c.inner_steps;
  m["meta_lr"] = c.meta_lr;
  m["alpha_init"] = c.alpha_init;
  m["first_order"] = c.first_order;
  m["seed"] = c.seed;
  m["probe_seed"] = c.probe_seed;
  m["spec_hash"] = c.spec_hash;
  m["step"] = state.step;
  m["tensors_hash"] = content_hash(bytes);
  auto bin = stem;
  bin += ".bin";
  auto json = stem;
  json += ".json";
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  write_file_atomic(bin, bytes);
  write_file_atomic(json, m.dump(2) + "\n");
}

PredictorState load_predictor(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto json = stem;
  json += ".json";
  PredictorState s;
  std::string bytes;
  try {
    const auto m = nlohmann::json::parse(read_file(json));
    if (m.at("format").get<std::string>() != kPredictorFormat) {
      throw SchemaError(fmt::format("{}: not a predictor checkpoint", json.string()));
    }
    auto& c = s.config;
    const auto& d = m.at("dims");
    c.dims = {d.at("onehot").get<std::size_t>(), d.at("feature").get<std::size_t>(), d.at("embed").get<std::size_t>(),
              d.at("hidden").get<std::size_t>(), d.at("sigma_layers").get<int>()};
    c.inner_steps = m.at("inner_steps").get<int>();
    c.meta_lr = m.at("meta_lr").get<double>();
    c.alpha_init = m.at("alpha_init").get<double>();
    c.first_order = m.at("first_order").get<bool>();
    c.seed = m.at("seed").get<std::uint64_t>();
    c.probe_seed = m.at("probe_seed").get<std::uint64_t>();
    c.spec_hash = m.at("spec_hash").get<std::string>();
    s.step = m.at("step").get<long>();
    bytes = read_file(bin);
    if (content_hash(bytes) != m.at("tensors_hash").get<std::string>()) {
      throw SchemaError(fmt::format("{}: tensor hash mismatch", bin.string()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(fmt::format("{}: {}", json.string(), e.what()));
  }
  const auto table = decode_tensor_archive(bytes);
  const ParamLayout layout(s.config.dims);
  s.phi.assign(layout.size(), 0.0);
  s.alpha.assign(layout.size(), 0.0);
  auto fetch = [&](const std::string& name, std::size_t size) -> const Tensor& {
    const auto it = table.find(name);
    if (it == table.end()) throw SchemaError(fmt::format("{}: missing tensor '{}'", bin.string(), name));
    if (it->second.size() != size) throw SchemaError(fmt::format("{}: tensor '{}' has the wrong size", bin.string(), name));
    return it->second;
  };
  for (const auto& b : layout.blocks()) {
    const auto& p = fetch("phi/" + b.name, b.size());
    const auto& a = fetch("alpha/" + b.name, b.size());
    std::copy(p.values().begin(), p.values().end(), s.phi.begin() + b.offset);
    std::copy(a.values().begin(), a.values().end(), s.alpha.begin() + b.offset);
  }
  auto get_moments = [&](const std::string& name, AdamMoments& m) {
    if (!table.contains("adam/" + name + ".m")) return;
    const auto& mt = fetch("adam/" + name + ".m", layout.size());
    const auto& vt = fetch("adam/" + name + ".v", layout.size());
    m.m.assign(mt.values().begin(), mt.values().end());
    m.v.assign(vt.values().begin(), vt.values().end());
  };
  get_moments("phi", s.adam_phi);
  get_moments("alpha", s.adam_alpha);
  return s;
}

}  // namespace kdnas
