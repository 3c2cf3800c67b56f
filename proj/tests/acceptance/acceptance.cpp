// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "kdnas/distillation.hpp"
#include "kdnas/error.hpp"
#include "kdnas/eval_search.hpp"
#include "kdnas/predictor.hpp"
#include "kdnas/rank_correlation.hpp"
#include "kdnas/remapping.hpp"
#include "kdnas/search_space.hpp"
#include "kdnas/task_db.hpp"
#include "kdnas/task_encoding.hpp"

using namespace kdnas;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> gaussian(std::size_t n, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// ---------------------------------------------------------------- 1: remap

SearchSpaceSpec toy_spec() {
  SearchSpaceSpec s;
  s.num_stages = 2;
  s.depth_choices = {1, 2};
  s.base_widths = {8, 12};
  s.ratio_choices = {0.25, 0.5, 1.0};
  s.max_layers_per_stage = 2;
  s.input_shape = {3, 6, 6};
  return s;
}

void randomize(StagedNetwork& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  for (auto& [n, t] : net.params())
    for (auto& v : t.values()) v = g(rng);
  for (auto& [n, t] : net.buffers())
    for (auto& v : t.values()) v = n.ends_with("var") ? std::abs(g(rng)) + 0.1 : g(rng);
}

// Every student element against the teacher element at the same
// multi-index, walking the student shape with an explicit counter.
bool slices_match(const Tensor& s, const Tensor& t) {
  if (s.rank() != t.rank()) return false;
  std::vector<int> idx(s.rank(), 0);
  for (std::size_t flat = 0; flat < s.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      if (idx[a] >= t.dim(a)) return false;
      off = off * t.dim(a) + idx[a];
    }
    if (s[flat] != t[off]) return false;
    for (std::size_t a = idx.size(); a-- > 0;) {
      if (++idx[a] < s.dim(a)) break;
      idx[a] = 0;
    }
  }
  return true;
}

bool tables_match(const ParameterTable& student, const ParameterTable& expected_shapes,
                  const ParameterTable& teacher) {
  if (student.size() != expected_shapes.size()) return false;
  for (const auto& [name, shape_only] : expected_shapes) {
    auto it = student.find(name);
    if (it == student.end() || it->second.shape() != shape_only.shape()) return false;
    if (!slices_match(it->second, teacher.at(name))) return false;
  }
  return true;
}

Outcome criterion1() {
  const auto spec = toy_spec();
  std::mt19937_64 rng(2024);
  int checked = 0, failures = 0, attempts = 0;
  std::size_t elements = 0;
  while (checked < 200) {
    ++attempts;
    const ArchConfig tc = sample(spec, rng);
    const ArchConfig sc = sample(spec, rng);
    if (!validate_remap_feasibility(spec, tc, sc).feasible) continue;
    auto teacher = StagedNetwork::build(spec, tc, 5, rng());
    randomize(teacher, rng());
    const auto state = remap(teacher, sc);
    const bool ok = tables_match(state.params, StagedNetwork::parameter_shapes(spec, sc, 5), teacher.params()) &&
                    tables_match(state.buffers, StagedNetwork::buffer_shapes(spec, sc), teacher.buffers());
    if (!ok) ++failures;
    elements += total_numel(state.params) + total_numel(state.buffers);
    ++checked;
  }
  return {failures == 0, fmt::format("{} feasible pairs ({} sampled), {} elements, {} mismatched pairs", checked,
                                     attempts, elements, failures)};
}

// ------------------------------------------------------------ 2: gradients

struct FdStats {
  double max_rel = 0.0;
  int checked = 0;
  int bad = 0;

  void add(double analytic, double fd) {
    if (std::abs(fd) < 1e-10 && std::abs(analytic) < 1e-10) return;
    const double r = rel_error(analytic, fd);
    max_rel = std::max(max_rel, r);
    ++checked;
    if (r > 1e-3) ++bad;
  }
};

void fd_check(FdStats& st, const std::vector<double>& analytic, std::vector<double>& x,
              const std::function<double()>& f) {
  const double h = 1e-4;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double keep = x[j];
    x[j] = keep + h;
    const double up = f();
    x[j] = keep - h;
    const double down = f();
    x[j] = keep;
    st.add(analytic[j], (up - down) / (2 * h));
  }
}

double two_level(const Regressor& m, const std::vector<double>& phi, const std::vector<double>& alpha,
                 const MetaTask& t, int steps) {
  const auto adapted = inner_adapt(m, phi, alpha, t.support, t.support_target, steps);
  double loss = 0.0;
  for (std::size_t q = 0; q < t.queries.size(); ++q) {
    const double r = m.predict(adapted, t.queries[q]) - t.query_targets[q];
    loss += r * r;
  }
  return loss / static_cast<double>(t.queries.size());
}

Outcome criterion2() {
  FdStats inner, outer, composed, kd, fused;
  const ParamLayout layout(EncoderDims{1, 1, 1, 1, 1});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto f = gaussian(6, 100 + seed, 0.8);
    const PairFeatures teacher{{1.0}, {f[0]}, {f[0]}};
    const PairFeatures s1{{1.0}, {f[1]}, {f[0]}}, s2{{0.0}, {f[2]}, {f[0]}};
    const PairRegressor m(layout, {&teacher, &s1, &s2});
    auto phi = gaussian(layout.size(), 200 + seed, 0.7);
    auto alpha = gaussian(layout.size(), 300 + seed, 0.1);
    for (auto& a : alpha) a = std::abs(a);

    std::vector<double> g(phi.size(), 0.0);
    m.accumulate_sq_grad(std::span<const double>(phi), 0, 0.8, 1.0, std::span<double>(g));
    fd_check(inner, g, phi, [&] { return std::pow(m.predict(phi, 0) - 0.8, 2); });

    std::fill(g.begin(), g.end(), 0.0);
    m.accumulate_sq_grad(std::span<const double>(phi), 1, 0.5, 0.5, std::span<double>(g));
    m.accumulate_sq_grad(std::span<const double>(phi), 2, 0.3, 0.5, std::span<double>(g));
    fd_check(outer, g, phi,
             [&] { return 0.5 * (std::pow(m.predict(phi, 1) - 0.5, 2) + std::pow(m.predict(phi, 2) - 0.3, 2)); });

    const MetaTask t{0, 0.8, {1, 2}, {0.5, 0.3}};
    for (int steps : {1, 2}) {
      const auto mg = meta_gradient(m, phi, alpha, t, steps);
      fd_check(composed, mg.d_phi, phi, [&] { return two_level(m, phi, alpha, t, steps); });
      fd_check(composed, mg.d_alpha, alpha, [&] { return two_level(m, phi, alpha, t, steps); });
    }

    // fused embedding: random cotangent on the fused output
    const auto cot = gaussian(layout.dims().hidden, 400 + seed, 1.0);
    std::vector<double> fg(phi.size(), 0.0);
    fused_vjp(layout, phi, s1, cot, fg);
    fd_check(fused, fg, phi, [&] {
      const auto e = embed(layout, phi, s1);
      double s = 0.0;
      for (std::size_t i = 0; i < cot.size(); ++i) s += cot[i] * e.fused[i];
      return s;
    });
  }

  // kd_loss on 2x3 logits: 6 parameters per instance
  const std::vector<int> y{2, 0};
  std::uint64_t seed = 500;
  for (auto order : {SoftTermOrder::TeacherStudent, SoftTermOrder::StudentTeacher}) {
    for (double a : {0.0, 0.3, 0.5, 1.0}) {
      for (double temp : {1.0, 4.0, 6.0}) {
        KDConfig c;
        c.alpha = a;
        c.temperature = temp;
        c.soft_order = order;
        Tensor s({2, 3}, gaussian(6, ++seed, 2.0));
        const Tensor t({2, 3}, gaussian(6, ++seed, 2.0));
        const auto analytic = kd_loss(s, t, y, c).grad;
        std::vector<double> x(s.values().begin(), s.values().end());
        fd_check(kd, std::vector<double>(analytic.values().begin(), analytic.values().end()), x, [&] {
          std::copy(x.begin(), x.end(), s.values().begin());
          return kd_loss(s, t, y, c).loss;
        });
      }
    }
  }

  const int bad = inner.bad + outer.bad + composed.bad + kd.bad + fused.bad;
  const int n = inner.checked + outer.checked + composed.checked + kd.checked + fused.checked;
  return {bad == 0,
          fmt::format("{} partials, {} over 1e-3; max rel err inner {:.1e} outer {:.1e} meta {:.1e} kd {:.1e} "
                      "fused {:.1e} ({} params)",
                      n, bad, inner.max_rel, outer.max_rel, composed.max_rel, kd.max_rel, fused.max_rel,
                      layout.size())};
}

// ----------------------------------------------------------- 3: degeneracy

struct RandomPairs {
  std::vector<PairFeatures> pool;
  std::vector<TaskBatch> batch;

  RandomPairs(const EncoderDims& d, int tasks, int queries, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.3, 0.9);
    pool.reserve(static_cast<std::size_t>(tasks) * (queries + 1));
    auto make = [&](const std::vector<double>& teacher) {
      PairFeatures f;
      f.onehot.resize(d.onehot);
      for (auto& v : f.onehot) v = (rng() & 1) ? 1.0 : 0.0;
      f.student.resize(d.feature);
      for (auto& v : f.student) v = g(rng);
      f.teacher = teacher;
      return f;
    };
    for (int t = 0; t < tasks; ++t) {
      std::vector<double> teacher(d.feature);
      for (auto& v : teacher) v = g(rng);
      pool.push_back(make(teacher));
      TaskBatch b;
      b.teacher_pair = &pool.back();
      b.teacher_accuracy = u(rng);
      for (int q = 0; q < queries; ++q) {
        pool.push_back(make(teacher));
        b.queries.push_back(&pool.back());
        b.accuracies.push_back(u(rng));
      }
      batch.push_back(std::move(b));
    }
  }
};

Outcome criterion3() {
  const EncoderDims dims{10, 6, 8, 12, 2};
  std::vector<std::string> notes;
  bool ok = true;

  {  // I = 0: the meta step is plain regression on the query loss
    RandomPairs rp(dims, 4, 6, 31);
    PredictorConfig pc;
    pc.dims = dims;
    pc.inner_steps = 0;
    pc.seed = 5;
    auto state = init_predictor(pc);
    auto ref = state.phi;
    AdamMoments moments;
    const ParamLayout layout(dims);
    int steps_equal = 0;
    for (long step = 1; step <= 30; ++step) {
      meta_step(state, rp.batch);
      std::vector<double> grad(ref.size(), 0.0);
      for (const auto& b : rp.batch) {
        std::vector<double> tg(ref.size(), 0.0);
        const PairRegressor m(layout, b.queries);
        for (std::size_t q = 0; q < b.queries.size(); ++q) {
          m.accumulate_sq_grad(std::span<const double>(ref), q, b.accuracies[q], 1.0 / b.queries.size(),
                               std::span<double>(tg));
        }
        for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += tg[j];
      }
      for (auto& g : grad) g /= static_cast<double>(rp.batch.size());
      adam_update(AdamConfig{pc.meta_lr}, step, ref, grad, moments);
      if (state.phi == ref) ++steps_equal;
    }
    const bool alpha_fixed = state.alpha == std::vector<double>(state.alpha.size(), pc.alpha_init);
    ok = ok && steps_equal == 30 && alpha_fixed;
    notes.push_back(fmt::format("I=0 trajectory {}/30 steps identical", steps_equal));
  }

  {  // alpha = 0: adaptation is the identity
    RandomPairs rp(dims, 5, 10, 32);
    PredictorConfig pc;
    pc.dims = dims;
    pc.inner_steps = 3;
    pc.seed = 6;
    auto state = init_predictor(pc);
    std::fill(state.alpha.begin(), state.alpha.end(), 0.0);
    int equal = 0, total = 0;
    for (const auto& b : rp.batch) {
      const auto guided = adapt(state, *b.teacher_pair, b.teacher_accuracy);
      for (const auto* q : b.queries) {
        ++total;
        if (predict(guided, *q) == predict(state, *q)) ++equal;
      }
    }
    ok = ok && equal == total;
    notes.push_back(fmt::format("alpha=0 guided==unguided {}/{}", equal, total));
  }

  {  // alpha = 1: only the hard-label term, bit for bit
    int equal = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const int n = 7, k = 5;
      const Tensor s({n, k}, gaussian(n * k, 600 + seed, 3.0));
      const Tensor t1({n, k}, gaussian(n * k, 700 + seed, 3.0));
      const Tensor t2({n, k}, gaussian(n * k, 800 + seed, 3.0));
      std::vector<int> y(n);
      for (int i = 0; i < n; ++i) y[i] = static_cast<int>((seed + 3 * i) % k);
      for (double temp : {1.0, 6.0}) {
        for (auto order : {SoftTermOrder::TeacherStudent, SoftTermOrder::StudentTeacher}) {
          KDConfig c;
          c.alpha = 1.0;
          c.temperature = temp;
          c.soft_order = order;
          double hard = 0.0;
          for (int i = 0; i < n; ++i) {
            const double* z = s.data() + static_cast<std::size_t>(i) * k;
            const double mx = *std::max_element(z, z + k);
            double sum = 0.0;
            for (int j = 0; j < k; ++j) sum += std::exp((z[j] - mx) / temp);
            hard += -((z[y[i]] - mx) / temp - std::log(sum));
          }
          hard /= n;
          const auto a = kd_loss(s, t1, y, c);
          const auto b = kd_loss(s, t2, y, c);
          ++total;
          if (a.loss == hard && b.loss == hard && a.grad == b.grad) ++equal;
        }
      }
    }
    ok = ok && equal == total;
    notes.push_back(fmt::format("kd alpha=1 exact {}/{}", equal, total));
  }
  return {ok, fmt::format("{}; {}; {}", notes[0], notes[1], notes[2])};
}

// ------------------------------------------------- 4: synthetic meta-learning

SearchSpaceSpec synthetic_spec() {
  SearchSpaceSpec s;
  s.num_stages = 4;
  s.depth_choices = {1, 2, 3, 4};
  s.base_widths = {16, 32, 64, 128};
  s.max_layers_per_stage = 4;
  s.input_shape = {3, 32, 32};
  return s;
}

double held_out_src(const PredictorState& state, const std::vector<EncodedTask>& tasks) {
  double s = 0.0;
  for (const auto& t : tasks) s += evaluate_predictor(state, t, 50);
  return s / static_cast<double>(tasks.size());
}

Outcome criterion4(const fs::path& work) {
  const auto spec = synthetic_spec();
  double guided_sum = 0.0, plain_sum = 0.0;
  std::vector<std::string> per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticDbConfig sc;
    sc.train_tasks = 8;
    sc.val_tasks = 0;
    sc.test_tasks = 2;
    sc.pairs_per_task = 100;
    sc.oracle_seed = 100 + seed;
    const auto path = work / fmt::format("synthetic{}.jsonl", seed);
    const TaskDb db = make_synthetic_db(spec, sc);
    write_db(db, path);
    const auto probe = NoiseProbe::make(spec.input_shape, 0);
    const auto train = encode_tasks(db, path, probe, {"train"});
    const auto test = encode_tasks(db, path, probe, {"test"});

    MetaSchedule sched;
    sched.iterations = 500;
    sched.meta_batch = 8;
    sched.queries_per_task = 50;
    sched.eval_every = 25;
    sched.seed = seed;
    auto run = [&](int inner_steps) {
      PredictorConfig pc;
      pc.dims.onehot = spec.encoding_length();
      pc.dims.feature = train.front().teacher_pair.teacher.size();
      pc.inner_steps = inner_steps;
      pc.meta_lr = 3e-3;
      pc.seed = seed;
      pc.spec_hash = spec.hash();
      // no meta-validation tasks: select on the meta-train tasks
      return held_out_src(meta_train(init_predictor(pc), train, train, sched).best, test);
    };
    const double g = run(1), p = run(0);
    guided_sum += g;
    plain_sum += p;
    per_seed.push_back(fmt::format("{:.3f}/{:.3f}", g, p));
  }
  const double guided = guided_sum / 5, plain = plain_sum / 5;
  std::string seeds;
  for (const auto& s : per_seed) seeds += (seeds.empty() ? "" : " ") + s;
  return {guided >= 0.5 && guided >= plain - 0.02,
          fmt::format("held-out SRC guided {:.3f} (>= 0.5), non-guided {:.3f}; per seed guided/non-guided {}",
                      guided, plain, seeds)};
}

// -------------------------------------------------- 5: mini end-to-end run

SearchSpaceSpec tiny_spec() {
  SearchSpaceSpec s;
  s.num_stages = 2;
  s.depth_choices = {1, 2};
  s.base_widths = {16, 32};
  s.ratio_choices = {0.25, 0.5, 1.0};
  s.max_layers_per_stage = 2;
  s.input_shape = {3, 16, 16};
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct MiniRun {
  bool won = false;
  std::string line;
};

MiniRun mini_run(const fs::path& work, std::uint64_t seed) {
  const auto spec = tiny_spec();
  SyntheticImageConfig ic;
  ic.num_classes = 40;
  ic.per_class = 40;
  ic.shape = spec.input_shape;
  ic.noise = 1.0;
  ic.max_shift = 2;
  ic.seed = seed;
  const Dataset data = make_synthetic_images(ic);
  // class-wise split: 4 meta-train tasks, 1 target task
  const auto plan = plan_splits(data, 5, seed, 4, 0, 0.25);

  BuildDbConfig bc = BuildDbConfig::mini();
  bc.num_splits = 5;
  bc.train_splits = 4;
  bc.val_splits = 0;
  bc.test_pairs_per_task = 0;
  bc.val_fraction = 0.25;
  bc.kd.sgd.lr = 0.2;
  bc.seed = seed;
  const auto path = work / fmt::format("mini{}.jsonl", seed);
  fs::remove(path);
  fs::remove_all(checkpoint_dir(path));
  build_db(spec, data, plan, bc, path);
  const TaskDb db = load_db(path);

  const auto probe = NoiseProbe::make(spec.input_shape, seed);
  const auto train = encode_tasks(db, path, probe, {"train"});
  PredictorConfig pc;
  pc.dims.onehot = spec.encoding_length();
  pc.dims.feature = train.front().teacher_pair.teacher.size();
  pc.inner_steps = 1;
  pc.meta_lr = 3e-3;
  pc.seed = seed;
  pc.probe_seed = seed;
  pc.spec_hash = spec.hash();
  MetaSchedule sched;
  sched.iterations = 300;
  sched.meta_batch = 4;
  sched.queries_per_task = 8;
  sched.eval_every = 25;
  sched.seed = seed;
  const auto meta = meta_train(init_predictor(pc), train, train, sched);

  const TaskRecord& target = db.tasks.back();
  const StagedNetwork teacher = resolve_teacher(db, target, path);
  const auto split = plan.materialize(data, target.split);
  const TeacherEncoder enc(teacher, probe);
  const auto adapted = adapt(meta.best, enc.encode_teacher(), target.teacher_accuracy);

  const int k = split.train.num_classes;
  CostBudget budget;
  budget.max_macs = count_costs(spec, largest(spec), spec.input_shape, k).macs * 8 / 10;
  const auto found = search(adapted, teacher, probe, 100, budget, derive_seed(seed, 0x73));

  KDConfig kd = bc.kd;
  kd.sgd.seed = derive_seed(seed, 0x6b64);
  const double chosen = distill(teacher, found.top().config, split.train, split.val, kd).train.best_val_accuracy;

  std::mt19937_64 rng(derive_seed(seed, 0x726e));
  std::vector<double> random_acc;
  while (random_acc.size() < 5) {
    const ArchConfig c = sample(spec, rng);
    if (!within_budget(count_costs(spec, c, spec.input_shape, k), budget)) continue;
    random_acc.push_back(distill(teacher, c, split.train, split.val, kd).train.best_val_accuracy);
  }
  const double med = median(random_acc);
  std::string rs;
  for (double a : random_acc) rs += fmt::format("{}{:.3f}", rs.empty() ? "" : ",", a);
  return {chosen > med, fmt::format("seed {}: selected {} acc {:.3f} vs random median {:.3f} [{}] (teacher {:.3f})",
                                    seed, found.top().config.serialize(), chosen, med, rs, target.teacher_accuracy)};
}

Outcome criterion5(const fs::path& work) {
  int wins = 0;
  for (std::uint64_t seed = 10; seed < 13; ++seed) {
    const auto r = mini_run(work, seed);
    wins += r.won ? 1 : 0;
    std::cout << "    " << r.line << std::endl;
  }
  return {wins >= 2, fmt::format("{}/3 seeds beat the random median", wins)};
}

// ----------------------------------------------- 6: one-hot and spearman

// Tie-corrected rank formula over brute-force mid-ranks.
double spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  auto midranks = [&](const std::vector<double>& v) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      double less = 0, same = 0;
      for (std::size_t j = 0; j < n; ++j) {
        less += v[j] < v[i];
        same += v[j] == v[i];
      }
      r[i] = less + (same + 1) / 2;
    }
    return r;
  };
  auto tie_term = [&](const std::vector<double>& v) {
    std::map<double, double> counts;
    for (double x : v) counts[x] += 1;
    double s = 0;
    for (const auto& [x, t] : counts) s += (t * t * t - t) / 12;
    return s;
  };
  const auto ra = midranks(a), rb = midranks(b);
  const double nn = static_cast<double>(n);
  const double sx = (nn * nn * nn - nn) / 12 - tie_term(a);
  const double sy = (nn * nn * nn - nn) / 12 - tie_term(b);
  if (sx == 0 || sy == 0) return 0.0;
  double d2 = 0;
  for (std::size_t i = 0; i < n; ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return (sx + sy - d2) / (2 * std::sqrt(sx * sy));
}

Outcome criterion6() {
  const auto spec = SearchSpaceSpec::paper_default();
  int round_trips = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const ArchConfig c = sample(spec, seed);
    const auto bits = encode_onehot(spec, c);
    if (bits.size() == spec.encoding_length() && decode_onehot(spec, bits) == c) ++round_trips;
  }
  std::mt19937_64 rng(6);
  double worst = 0.0;
  int tied_pairs = 0;
  for (int p = 0; p < 1000; ++p) {
    const int n = 2 + static_cast<int>(rng() % 40);
    const int levels = 1 + static_cast<int>(rng() % 8);
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = static_cast<double>(rng() % levels) * 0.5;
    for (auto& v : b) v = static_cast<double>(rng() % (levels + 3)) - 1.0;
    if (std::set<double>(a.begin(), a.end()).size() < a.size()) ++tied_pairs;
    worst = std::max(worst, std::abs(spearman(a, b) - spearman_oracle(a, b)));
  }
  return {round_trips == 1000 && worst <= 1e-12,
          fmt::format("one-hot round trips {}/1000; spearman max |diff| {:.1e} over 1000 pairs ({} with ties)",
                      round_trips, worst, tied_pairs)};
}

// ----------------------------------------------------- 7: scoring time

Outcome criterion7() {
  const auto spec = synthetic_spec();
  const auto teacher = StagedNetwork::build(spec, largest(spec), 10, 71);
  const auto probe = NoiseProbe::make(spec.input_shape, 0);
  PredictorConfig pc;
  pc.dims.onehot = spec.encoding_length();
  pc.dims.feature = static_cast<std::size_t>(spec.base_widths.back());
  pc.seed = 7;
  const auto state = init_predictor(pc);
  search(state, teacher, probe, 300, {}, 1);  // warm-up
  std::vector<double> per_arch;
  for (int run = 0; run < 3; ++run) per_arch.push_back(search(state, teacher, probe, 300, {}, 1).per_arch_seconds);
  const double mean = std::accumulate(per_arch.begin(), per_arch.end(), 0.0) / 3;
  double dev = 0.0;
  for (double v : per_arch) dev = std::max(dev, std::abs(v - mean) / mean);
  return {dev <= 0.2, fmt::format("per-architecture scoring {:.3f} / {:.3f} / {:.3f} ms, max deviation {:.1f}%",
                                  per_arch[0] * 1e3, per_arch[1] * 1e3, per_arch[2] * 1e3, dev * 100)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kdnas acceptance checks"};
  std::vector<int> only;
  std::string work_dir;
  app.add_option("criteria", only, "Criteria to run (default: all)")->check(CLI::Range(1, 7));
  app.add_option("--work", work_dir, "Scratch directory for generated databases");
  CLI11_PARSE(app, argc, argv);
  if (only.empty()) only = {1, 2, 3, 4, 5, 6, 7};

  const fs::path work = work_dir.empty() ? fs::temp_directory_path() / "kdnas_acceptance" : fs::path(work_dir);
  fs::create_directories(work);

  const std::map<int, double> limits{{1, 30}, {2, 60}, {3, 60}, {4, 900}, {5, 3 * 3600}, {6, 10}, {7, 600}};
  const std::map<int, std::function<Outcome()>> checks{
      {1, criterion1}, {2, criterion2},
      {3, criterion3}, {4, [&] { return criterion4(work); }},
      {5, [&] { return criterion5(work); }}, {6, criterion6},
      {7, criterion7},
  };

  int failed = 0;
  for (int id : only) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = checks.at(id)();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_time = secs < limits.at(id);
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::cout << fmt::format("criterion {}: {} {} ({:.1f}s{})", id, pass ? "PASS" : "FAIL", o.detail, secs,
                             in_time ? "" : fmt::format(", over the {:.0f}s limit", limits.at(id)))
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
