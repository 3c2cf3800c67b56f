// SPDX-License-Identifier: Apache-2.0
#include "kdnas/network.hpp"

#include <gtest/gtest.h>

#include "kdnas/error.hpp"
#include "kdnas/layers.hpp"
#include "test_util.hpp"

using namespace kdnas;
using kdnas::testing::random_tensor;
using kdnas::testing::rel_error;
using kdnas::testing::toy_spec;

namespace {

double weighted_logit_sum(StagedNetwork& net, const Tensor& x, const Tensor& w, Mode mode) {
  Tensor logits = net.forward(x, mode);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += logits[i] * w[i];
  return s;
}

}  // namespace

TEST(NetworkTest, MinimalConfigLogitShape) {
  auto spec = toy_spec();
  ArchConfig minimal{{1, 1}, {{1.0}, {1.0}}};
  auto net = StagedNetwork::build(spec, minimal, 2, 1);
  auto logits = net.predict(Tensor({4, 3, 6, 6}, 0.5));
  EXPECT_EQ(logits.shape(), (std::vector<int>{4, 2}));
}

TEST(NetworkTest, BuildIsSeedDeterministic) {
  auto spec = toy_spec();
  auto c = sample(spec, 5);
  auto a = StagedNetwork::build(spec, c, 3, 42);
  auto b = StagedNetwork::build(spec, c, 3, 42);
  auto d = StagedNetwork::build(spec, c, 3, 43);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_NE(a.params(), d.params());
}

TEST(NetworkTest, ParameterCountMatchesCostModel) {
  auto spec = SearchSpaceSpec::paper_default();
  spec.input_shape = {3, 8, 8};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto c = sample(spec, seed);
    auto net = StagedNetwork::build(spec, c, 7, seed);
    EXPECT_EQ(static_cast<std::int64_t>(net.parameter_count()), count_costs(spec, c, spec.input_shape, 7).params);
  }
}

TEST(NetworkTest, LastStageShapeIsConfigIndependent) {
  auto spec = SearchSpaceSpec::paper_default();
  spec.input_shape = {3, 16, 16};
  const Tensor x = random_tensor({1, 3, 16, 16}, 9);
  std::vector<int> reference;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto net = StagedNetwork::build(spec, sample(spec, seed), 4, seed);
    auto feats = net.forward_features(x);
    ASSERT_EQ(feats.size(), 4u);
    if (reference.empty()) reference = feats.back().shape();
    EXPECT_EQ(feats.back().shape(), reference);
  }
  EXPECT_EQ(reference, (std::vector<int>{1, 256, 2, 2}));
}

TEST(NetworkTest, ZeroInputGivesFiniteOutputs) {
  auto spec = toy_spec();
  auto net = StagedNetwork::build(spec, largest(spec), 3, 2);
  for (auto& [name, t] : net.params()) {
    if (name.ends_with(".shift") || name == "head.bias") t.fill(0.0);
  }
  Tensor zeros({2, 3, 6, 6});
  EXPECT_TRUE(net.predict(zeros).all_finite());
  EXPECT_TRUE(net.forward(zeros, Mode::Train).all_finite());
}

TEST(NetworkTest, StagesComposeToForward) {
  auto spec = toy_spec();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto net = StagedNetwork::build(spec, sample(spec, seed), 3, seed);
    Tensor x = random_tensor({2, 3, 6, 6}, seed + 100);
    Tensor h = net.run_stem(x);
    auto feats = net.forward_features(x);
    for (int s = 0; s < spec.num_stages; ++s) {
      h = net.run_stage(s, h);
      EXPECT_EQ(h, feats[s]);
    }
    EXPECT_EQ(net.run_head(h), net.predict(x));
  }
}

TEST(NetworkTest, RejectsWrongInputShape) {
  auto spec = toy_spec();
  auto net = StagedNetwork::build(spec, largest(spec), 3, 2);
  EXPECT_THROW(net.predict(Tensor({1, 3, 5, 6})), ValidationError);
  EXPECT_THROW(net.run_stage(1, Tensor({1, 3, 6, 6})), ValidationError);
}

TEST(NetworkTest, BackwardMatchesFiniteDifferences) {
  auto spec = toy_spec();
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    ArchConfig c{{2, 2}, {{0.5, 1.0}, {0.25, 1.0}}};
    auto net = StagedNetwork::build(spec, c, 3, 17);
    // Non-trivial running stats so the eval path is exercised too.
    for (auto& [name, t] : net.buffers()) {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = name.ends_with("var") ? 0.5 + 0.1 * i : 0.05 * i;
    }
    Tensor x = random_tensor({3, 3, 6, 6}, 5);
    Tensor w = random_tensor({3, 3}, 6);
    ForwardTape tape;
    net.forward(x, mode, &tape);
    auto grads = net.backward(tape, w);
    const auto buffers = net.buffers();
    const double h = 1e-5;
    int checked = 0;
    for (auto& [name, t] : net.params()) {
      for (std::size_t i = 0; i < t.size(); i += std::max<std::size_t>(1, t.size() / 5)) {
        const double orig = t[i];
        t[i] = orig + h;
        double up = weighted_logit_sum(net, x, w, mode);
        net.buffers() = buffers;
        t[i] = orig - h;
        double down = weighted_logit_sum(net, x, w, mode);
        net.buffers() = buffers;
        t[i] = orig;
        double fd = (up - down) / (2 * h);
        double an = grads.at(name)[i];
        if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
        EXPECT_LT(rel_error(an, fd), 1e-4) << name << "[" << i << "] mode " << static_cast<int>(mode);
        ++checked;
      }
    }
    EXPECT_GT(checked, 20);
  }
}

TEST(NetworkTest, TrainModeUpdatesRunningStats) {
  auto spec = toy_spec();
  auto net = StagedNetwork::build(spec, largest(spec), 3, 2);
  auto before = net.buffers();
  net.forward(random_tensor({4, 3, 6, 6}, 1), Mode::Train);
  EXPECT_NE(before, net.buffers());
  auto after = net.buffers();
  net.predict(random_tensor({4, 3, 6, 6}, 1));
  EXPECT_EQ(after, net.buffers());
}

TEST(NetworkTest, CheckpointRoundTrip) {
  auto dir = kdnas::testing::temp_dir("ckpt");
  auto spec = toy_spec();
  auto net = StagedNetwork::build(spec, sample(spec, 3), 5, 8);
  net.forward(random_tensor({4, 3, 6, 6}, 1), Mode::Train);
  auto hash = save_checkpoint(net, dir / "teacher", {{"epochs", "3"}});
  EXPECT_EQ(hash.size(), 16u);
  Metadata meta;
  auto loaded = load_checkpoint(dir / "teacher", &meta);
  EXPECT_EQ(loaded.params(), net.params());
  EXPECT_EQ(loaded.buffers(), net.buffers());
  EXPECT_EQ(loaded.config(), net.config());
  EXPECT_EQ(meta.at("epochs"), "3");
  EXPECT_THROW(load_checkpoint(dir / "missing"), IoError);
}

TEST(NetworkTest, FromStateRejectsWrongShapes) {
  auto spec = toy_spec();
  auto c = largest(spec);
  auto params = StagedNetwork::parameter_shapes(spec, c, 3);
  auto buffers = StagedNetwork::buffer_shapes(spec, c);
  EXPECT_NO_THROW(StagedNetwork::from_state(spec, c, 3, params, buffers));
  params.at("head.bias") = Tensor({4});
  EXPECT_THROW(StagedNetwork::from_state(spec, c, 3, params, buffers), ValidationError);
}
