// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kdnas/dataset.hpp"
#include "kdnas/distillation.hpp"
#include "kdnas/predictor.hpp"
#include "kdnas/rank_correlation.hpp"
#include "kdnas/search_space.hpp"

namespace kdnas {

/// Scores the i-th pair of a task (used to plug stubs into evaluation).
using PairScorer = std::function<double(std::size_t pair)>;

/// Spearman correlation of `score` against the measured accuracies of the
/// first n_eval pairs. Throws ValidationError if the task has fewer pairs.
double evaluate_scores(const PairScorer& score, const EncodedTask& task, std::size_t n_eval);

/// Adapts to the task's teacher, then scores its first n_eval pairs.
/// Never trains on the pairs themselves.
double evaluate_predictor(const PredictorState& state, const EncodedTask& task, std::size_t n_eval = 50);

struct RankedEntry {
  ArchConfig config;
  double score = 0.0;
  CostReport cost;
};

struct SearchResult {
  std::string method;
  std::vector<RankedEntry> ranked;  // score descending, ties by serialized config
  CostBudget budget;
  std::size_t sampled = 0;
  std::size_t unique = 0;
  std::size_t admissible = 0;
  double scoring_seconds = 0.0;  // total time spent inside the scorer
  double per_arch_seconds = 0.0;

  const RankedEntry& top() const;
};

using ArchScorer = std::function<double(const ArchConfig&)>;

/// Samples n_candidates configs, drops duplicates, keeps those within the
/// budget (costs counted at the spec input with a `num_classes` head) and
/// remap-feasible under `teacher_config`, scores them and ranks them.
/// Throws ValidationError when no candidate survives.
SearchResult search_with(const SearchSpaceSpec& spec, const ArchConfig& teacher_config, int num_classes,
                         const ArchScorer& scorer, const std::string& method, int n_candidates,
                         const CostBudget& budget, std::uint64_t seed);

/// search_with() scoring by the (already adapted) predictor.
SearchResult search(const PredictorState& state, const StagedNetwork& teacher, const NoiseProbe& probe,
                    int n_candidates, const CostBudget& budget, std::uint64_t seed);

enum class ZeroCostMethod { GradNorm, ActivationOverlap };

std::string to_string(ZeroCostMethod method);
ZeroCostMethod parse_zero_cost_method(std::string_view name);

/// Training-free score of a freshly initialised network (seeded) on one
/// batch. Grad-norm: L2 norm of every cross-entropy parameter gradient.
/// Activation overlap: log|det K| with K_ij = number of ReLU units on which
/// samples i and j agree; -infinity when K is singular.
double zero_cost_score(ZeroCostMethod method, const SearchSpaceSpec& spec, const ArchConfig& config, int num_classes,
                       const Tensor& images, std::span<const int> labels, std::uint64_t seed);
/// Same on an explicit network (its parameters are not modified).
double zero_cost_score(ZeroCostMethod method, const StagedNetwork& net, const Tensor& images,
                       std::span<const int> labels);

struct EndToEndResult {
  SearchResult search;
  ArchConfig selected;
  double distilled_accuracy = 0.0;
};

/// Search with `scorer`, then distil the top-1 student from `teacher`.
EndToEndResult end_to_end(const StagedNetwork& teacher, const ArchScorer& scorer, const std::string& method,
                          const Dataset& train, const Dataset& val, const KDConfig& kd, int n_candidates,
                          const CostBudget& budget, std::uint64_t seed);

}  // namespace kdnas
