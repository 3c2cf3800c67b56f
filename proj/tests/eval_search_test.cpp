// SPDX-License-Identifier: Apache-2.0
#include "kdnas/eval_search.hpp"

#include <cmath>
#include <limits>
#include <set>

#include <gtest/gtest.h>

#include "kdnas/error.hpp"
#include "kdnas/network.hpp"
#include "kdnas/task_db.hpp"
#include "test_util.hpp"

using namespace kdnas;
using kdnas::testing::random_tensor;
using kdnas::testing::toy_spec;

namespace {

EncodedTask ranked_task(std::size_t n) {
  EncodedTask t;
  t.id = "t";
  for (std::size_t i = 0; i < n; ++i) t.accuracies.push_back(0.1 * static_cast<double>(i));
  return t;
}

int active_layers(const ArchConfig& c) {
  int n = 0;
  for (int d : c.depths) n += d;
  return n;
}

}  // namespace

TEST(EvaluateScores, PerfectAndReversedScorers) {
  const auto task = ranked_task(8);
  EXPECT_DOUBLE_EQ(evaluate_scores([](std::size_t i) { return static_cast<double>(i); }, task, 8), 1.0);
  EXPECT_DOUBLE_EQ(evaluate_scores([](std::size_t i) { return -static_cast<double>(i); }, task, 5), -1.0);
}

TEST(EvaluateScores, UsesOnlyTheFirstPairs) {
  auto task = ranked_task(6);
  task.accuracies[5] = -1.0;  // would break monotonicity if used
  EXPECT_DOUBLE_EQ(evaluate_scores([](std::size_t i) { return static_cast<double>(i); }, task, 5), 1.0);
}

TEST(EvaluateScores, TooFewPairsThrows) {
  EXPECT_THROW(evaluate_scores([](std::size_t) { return 0.0; }, ranked_task(3), 4), ValidationError);
  EXPECT_THROW(evaluate_scores([](std::size_t) { return 0.0; }, ranked_task(3), 1), ValidationError);
}

TEST(Search, RanksDeduplicatesAndRespectsBudget) {
  const auto spec = toy_spec();
  const auto teacher = largest(spec);
  const CostReport big = count_costs(spec, teacher, spec.input_shape, 4);
  CostBudget budget;
  budget.max_macs = big.macs;  // strict: the largest config is excluded
  const auto r = search_with(
      spec, teacher, 4, [](const ArchConfig& c) { return static_cast<double>(active_layers(c)); }, "layers", 100,
      budget, 3);
  EXPECT_EQ(r.method, "layers");
  EXPECT_EQ(r.sampled, 100u);
  EXPECT_LE(r.unique, 16u);
  EXPECT_EQ(r.admissible, r.ranked.size());
  std::set<std::string> seen;
  for (std::size_t i = 0; i < r.ranked.size(); ++i) {
    const auto& e = r.ranked[i];
    EXPECT_TRUE(seen.insert(e.config.serialize()).second);
    EXPECT_LT(e.cost.macs, *budget.max_macs);
    EXPECT_EQ(e.cost, count_costs(spec, e.config, spec.input_shape, 4));
    if (i > 0) {
      const auto& p = r.ranked[i - 1];
      EXPECT_TRUE(p.score > e.score || (p.score == e.score && serialized_less(p.config, e.config)));
    }
  }
  EXPECT_NE(r.top().config.serialize(), teacher.serialize());
  EXPECT_GE(r.per_arch_seconds, 0.0);
}

TEST(Search, DeterministicPerSeed) {
  const auto spec = toy_spec();
  auto score = [](const ArchConfig& c) { return static_cast<double>(c.serialize().size() % 3); };
  const auto a = search_with(spec, largest(spec), 4, score, "s", 30, {}, 9);
  const auto b = search_with(spec, largest(spec), 4, score, "s", 30, {}, 9);
  ASSERT_EQ(a.ranked.size(), b.ranked.size());
  for (std::size_t i = 0; i < a.ranked.size(); ++i) EXPECT_EQ(a.ranked[i].config, b.ranked[i].config);
}

TEST(Search, EmptyAfterBudgetThrows) {
  const auto spec = toy_spec();
  CostBudget budget;
  budget.max_params = 1;
  EXPECT_THROW(search_with(spec, largest(spec), 4, [](const ArchConfig&) { return 0.0; }, "s", 20, budget, 1),
               ValidationError);
  EXPECT_THROW(search_with(spec, largest(spec), 4, [](const ArchConfig&) { return 0.0; }, "s", 0, {}, 1),
               ValidationError);
}

TEST(Search, NonFiniteScoreRejected) {
  const auto spec = toy_spec();
  EXPECT_THROW(search_with(spec, largest(spec), 4, [](const ArchConfig&) { return std::nan(""); }, "s", 5, {}, 1),
               ValidationError);
}

TEST(Search, PredictorScoresMatchDirectPrediction) {
  const auto spec = toy_spec();
  auto teacher = StagedNetwork::build(spec, largest(spec), 4, 2);
  const auto probe = NoiseProbe::make(spec.input_shape, 7);
  PredictorConfig pc;
  pc.dims = {spec.encoding_length(), static_cast<std::size_t>(teacher.plan().feature_channels), 8, 16, 2};
  pc.seed = 4;
  const auto state = init_predictor(pc);
  const auto r = search(state, teacher, probe, 40, {}, 5);
  for (const auto& e : r.ranked) {
    EXPECT_NEAR(e.score, predict(state, e.config, teacher, probe), 1e-12);
  }
}

TEST(ZeroCost, GradNormOfZeroNetworkIsZero) {
  const auto spec = toy_spec();
  auto net = StagedNetwork::build(spec, largest(spec), 4, 1);
  for (auto& [name, t] : net.params()) t.fill(0.0);
  const auto images = random_tensor({8, 3, 6, 6}, 2);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};  // balanced, so the bias gradient cancels
  EXPECT_EQ(zero_cost_score(ZeroCostMethod::GradNorm, net, images, labels), 0.0);
}

TEST(ZeroCost, GradNormMatchesBackward) {
  const auto spec = toy_spec();
  const auto net = StagedNetwork::build(spec, largest(spec), 4, 3);
  const auto images = random_tensor({6, 3, 6, 6}, 4);
  const std::vector<int> labels{0, 1, 2, 3, 1, 2};
  auto work = net;
  ForwardTape tape;
  const auto logits = work.forward(images, Mode::Train, &tape);
  double sq = 0.0;
  for (const auto& [name, g] : work.backward(tape, cross_entropy(logits, labels).grad)) {
    for (double v : g.values()) sq += v * v;
  }
  const double s = zero_cost_score(ZeroCostMethod::GradNorm, net, images, labels);
  EXPECT_GT(s, 0.0);
  EXPECT_NEAR(s, std::sqrt(sq), 1e-12 * std::sqrt(sq));
}

TEST(ZeroCost, ActivationOverlapTwoSampleClosedForm) {
  const auto spec = toy_spec();
  const auto net = StagedNetwork::build(spec, largest(spec), 4, 5);
  const auto images = random_tensor({2, 3, 6, 6}, 6);
  const std::vector<int> labels{0, 1};
  auto work = net;
  ForwardTape tape;
  work.forward(images, Mode::Train, &tape);
  const auto codes = activation_codes(tape);
  const double n = static_cast<double>(codes[0].size());
  double agree = 0;
  for (std::size_t u = 0; u < codes[0].size(); ++u) agree += codes[0][u] == codes[1][u];
  const double expected = std::log(n * n - agree * agree);
  EXPECT_NEAR(zero_cost_score(ZeroCostMethod::ActivationOverlap, net, images, labels), expected, 1e-9);
}

TEST(ZeroCost, IdenticalSamplesGiveMinusInfinity) {
  const auto spec = toy_spec();
  const auto one = random_tensor({1, 3, 6, 6}, 8);
  Tensor images({3, 3, 6, 6});
  for (int n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < one.values().size(); ++i) images.values()[n * one.values().size() + i] = one.values()[i];
  }
  const std::vector<int> labels{0, 1, 2};
  EXPECT_EQ(zero_cost_score(ZeroCostMethod::ActivationOverlap, spec, largest(spec), 4, images, labels, 1),
            -std::numeric_limits<double>::infinity());
}

TEST(ZeroCost, MethodNames) {
  EXPECT_EQ(parse_zero_cost_method("grad-norm"), ZeroCostMethod::GradNorm);
  EXPECT_EQ(parse_zero_cost_method(to_string(ZeroCostMethod::ActivationOverlap)),
            ZeroCostMethod::ActivationOverlap);
  EXPECT_THROW(parse_zero_cost_method("synflow"), UsageError);
}

TEST(EndToEnd, DistilsTheTopCandidate) {
  const auto spec = toy_spec();
  SyntheticImageConfig ic;
  ic.num_classes = 3;
  ic.per_class = 12;
  ic.shape = spec.input_shape;
  ic.seed = 2;
  const auto split = split_train_val(make_synthetic_images(ic), 0.25, 1);
  const auto teacher = StagedNetwork::build(spec, largest(spec), 3, 1);
  KDConfig kd;
  kd.sgd.epochs = 1;
  kd.sgd.batch_size = 8;
  const auto r = end_to_end(teacher, [](const ArchConfig& c) { return -static_cast<double>(active_layers(c)); },
                            "fewest-layers", split.train, split.val, kd, 20, {}, 3);
  EXPECT_EQ(r.selected, r.search.top().config);
  EXPECT_EQ(active_layers(r.selected), 2);
  EXPECT_GE(r.distilled_accuracy, 0.0);
  EXPECT_LE(r.distilled_accuracy, 1.0);
}

TEST(EvaluateScores, RandomScorerIsNearZeroOnAverage) {
  auto task = ranked_task(50);
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> s(50);
    for (auto& v : s) v = u(rng);
    sum += evaluate_scores([&](std::size_t i) { return s[i]; }, task, 50);
  }
  EXPECT_LT(std::abs(sum / 100.0), 0.15);
}

TEST(Search, SingleCandidateIsTopOne) {
  const auto spec = toy_spec();
  std::mt19937_64 rng(21);
  const auto expected = sample(spec, rng);
  const auto r = search_with(spec, largest(spec), 4, [](const ArchConfig&) { return 0.5; }, "s", 1, {}, 21);
  ASSERT_EQ(r.ranked.size(), 1u);
  EXPECT_EQ(r.top().config, expected);
}

TEST(Search, OracleSelectionBeatsRandomSelection) {
  const auto spec = SearchSpaceSpec::paper_default();
  TaskRecord task;
  task.teacher_accuracy = 0.8;
  task.oracle_weights = {0.4, 0.3, 0.2, 0.1};
  task.oracle_lambda = 0.3;
  auto oracle = [&](const ArchConfig& c) { return oracle_accuracy(spec, task, c, 0.0, 0, 0); };
  CostBudget budget;
  budget.max_macs = count_costs(spec, largest(spec), spec.input_shape, 10).macs / 2;
  double picked = 0.0, random = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = search_with(spec, largest(spec), 10, oracle, "oracle", 200, budget, seed);
    picked += oracle(r.top().config);
    std::vector<double> all;
    for (const auto& e : r.ranked) all.push_back(e.score);
    std::sort(all.begin(), all.end(), std::greater<>());
    // top-1 lies in the top 10% of every sampled admissible candidate
    EXPECT_GE(oracle(r.top().config), all[all.size() / 10]);
    std::mt19937_64 rng(seed + 100);
    const auto rr = search_with(
        spec, largest(spec), 10, [&](const ArchConfig&) { return std::uniform_real_distribution<double>()(rng); },
        "random", 200, budget, seed);
    random += oracle(rr.top().config);
  }
  EXPECT_GT(picked, random);
}

TEST(ZeroCost, AllMethodsDefinedOnRandomConfigs) {
  const auto spec = toy_spec();
  const auto images = random_tensor({8, 3, 6, 6}, 12);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  std::mt19937_64 rng(13);
  for (int i = 0; i < 50; ++i) {
    const auto c = sample(spec, rng);
    for (auto m : {ZeroCostMethod::GradNorm, ZeroCostMethod::ActivationOverlap}) {
      const double a = zero_cost_score(m, spec, c, 4, images, labels, 3);
      EXPECT_FALSE(std::isnan(a));
      EXPECT_EQ(a, zero_cost_score(m, spec, c, 4, images, labels, 3));
    }
  }
}
