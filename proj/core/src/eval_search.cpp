// SPDX-License-Identifier: Apache-2.0
#include "kdnas/eval_search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "kdnas/error.hpp"
#include "kdnas/remapping.hpp"

namespace kdnas {

double evaluate_scores(const PairScorer& score, const EncodedTask& task, std::size_t n_eval) {
  if (n_eval < 2) throw ValidationError("n_eval must be >= 2");
  if (task.accuracies.size() < n_eval) {
    throw ValidationError(
        fmt::format("task '{}' has {} pairs, fewer than n_eval = {}", task.id, task.accuracies.size(), n_eval));
  }
  std::vector<double> pred(n_eval);
  for (std::size_t i = 0; i < n_eval; ++i) pred[i] = score(i);
  return spearman(pred, std::span<const double>(task.accuracies.data(), n_eval));
}

double evaluate_predictor(const PredictorState& state, const EncodedTask& task, std::size_t n_eval) {
  const PredictorState adapted = adapt(state, task.teacher_pair, task.teacher_accuracy);
  return evaluate_scores([&](std::size_t i) { return predict(adapted, task.features.at(i)); }, task, n_eval);
}

const RankedEntry& SearchResult::top() const {
  if (ranked.empty()) throw ValidationError("search result is empty");
  return ranked.front();
}

SearchResult search_with(const SearchSpaceSpec& spec, const ArchConfig& teacher_config, int num_classes,
                         const ArchScorer& scorer, const std::string& method, int n_candidates,
                         const CostBudget& budget, std::uint64_t seed) {
  if (n_candidates < 1) throw ValidationError(fmt::format("need at least one candidate, got {}", n_candidates));
  SearchResult r;
  r.method = method;
  r.budget = budget;
  r.sampled = static_cast<std::size_t>(n_candidates);
  std::mt19937_64 rng(seed);
  std::set<std::string> seen;
  std::vector<RankedEntry> admissible;
  for (int i = 0; i < n_candidates; ++i) {
    ArchConfig c = sample(spec, rng);
    if (!seen.insert(c.serialize()).second) continue;
    const CostReport cost = count_costs(spec, c, spec.input_shape, num_classes);
    if (!within_budget(cost, budget)) continue;
    if (!validate_remap_feasibility(spec, teacher_config, c).feasible) continue;
    admissible.push_back({std::move(c), 0.0, cost});
  }
  r.unique = seen.size();
  r.admissible = admissible.size();
  if (admissible.empty()) {
    throw ValidationError(fmt::format("none of {} sampled candidates satisfies the budget", n_candidates));
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (auto& e : admissible) e.score = scorer(e.config);
  r.scoring_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.per_arch_seconds = r.scoring_seconds / static_cast<double>(admissible.size());
  for (const auto& e : admissible) {
    if (!std::isfinite(e.score) && !(e.score == -std::numeric_limits<double>::infinity())) {
      throw ValidationError(fmt::format("scorer returned {} for {}", e.score, e.config.serialize()));
    }
  }
  std::sort(admissible.begin(), admissible.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return serialized_less(a.config, b.config);
  });
  r.ranked = std::move(admissible);
  return r;
}

SearchResult search(const PredictorState& state, const StagedNetwork& teacher, const NoiseProbe& probe,
                    int n_candidates, const CostBudget& budget, std::uint64_t seed) {
  const TeacherEncoder enc(teacher, probe);
  return search_with(
      teacher.spec(), teacher.config(), teacher.num_classes(),
      [&](const ArchConfig& c) { return predict(state, enc.encode(c)); }, "predictor", n_candidates, budget, seed);
}

std::string to_string(ZeroCostMethod method) {
  return method == ZeroCostMethod::GradNorm ? "grad-norm" : "activation-overlap";
}

ZeroCostMethod parse_zero_cost_method(std::string_view name) {
  if (name == "grad-norm") return ZeroCostMethod::GradNorm;
  if (name == "activation-overlap") return ZeroCostMethod::ActivationOverlap;
  throw UsageError(fmt::format("unknown zero-cost method '{}' (grad-norm, activation-overlap)", name));
}

double zero_cost_score(ZeroCostMethod method, const StagedNetwork& net, const Tensor& images,
                       std::span<const int> labels) {
  StagedNetwork work = net;  // train-mode passes update running moments
  ForwardTape tape;
  const Tensor logits = work.forward(images, Mode::Train, &tape);
  if (method == ZeroCostMethod::GradNorm) {
    const auto lg = cross_entropy(logits, labels);
    double sq = 0.0;
    for (const auto& [name, g] : work.backward(tape, lg.grad)) {
      for (double v : g.values()) sq += v * v;
    }
    return std::sqrt(sq);
  }
  const auto codes = activation_codes(tape);
  const auto n = static_cast<Eigen::Index>(codes.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      std::size_t agree = 0;
      for (std::size_t u = 0; u < codes[i].size(); ++u) agree += codes[i][u] == codes[j][u];
      k(i, j) = k(j, i) = static_cast<double>(agree);
    }
  }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
  if (lu.rank() < n) return -std::numeric_limits<double>::infinity();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(std::abs(lu.matrixLU()(i, i)));
  return logdet;
}

double zero_cost_score(ZeroCostMethod method, const SearchSpaceSpec& spec, const ArchConfig& config, int num_classes,
                       const Tensor& images, std::span<const int> labels, std::uint64_t seed) {
  return zero_cost_score(method, StagedNetwork::build(spec, config, num_classes, seed), images, labels);
}

EndToEndResult end_to_end(const StagedNetwork& teacher, const ArchScorer& scorer, const std::string& method,
                          const Dataset& train, const Dataset& val, const KDConfig& kd, int n_candidates,
                          const CostBudget& budget, std::uint64_t seed) {
  EndToEndResult out;
  out.search = search_with(teacher.spec(), teacher.config(), teacher.num_classes(), scorer, method, n_candidates,
                           budget, seed);
  out.selected = out.search.top().config;
  out.distilled_accuracy = distill(teacher, out.selected, train, val, kd).train.best_val_accuracy;
  return out;
}

}  // namespace kdnas
