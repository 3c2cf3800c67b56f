// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "kdnas/error.hpp"
#include "kdnas/eval_search.hpp"
#include "kdnas/io.hpp"
#include "kdnas/remapping.hpp"
#include "kdnas/task_db.hpp"

namespace kdnas::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const std::map<std::string, std::vector<std::string>>& command_flags() {
  static const std::map<std::string, std::vector<std::string>> flags{
      {"build-db", {"out", "data"}},
      {"make-synth-db", {"out"}},
      {"meta-train", {"db", "out"}},
      {"adapt", {"predictor", "db", "task", "teacher", "teacher-accuracy", "data", "out"}},
      {"predict", {"predictor", "db", "task", "teacher", "teacher-accuracy", "data", "adapt", "arch", "arch-file", "out"}},
      {"search", {"predictor", "db", "task", "teacher", "teacher-accuracy", "data", "adapt", "method", "out"}},
      {"distill", {"db", "task", "teacher", "data", "arch", "out"}},
      {"eval", {"predictor", "db", "roles", "out"}},
  };
  return flags;
}

bool Context::has(const std::string& name) const {
  const auto it = inv.args.find(name);
  return it != inv.args.end() && !it->second.empty();
}

const std::string& Context::arg(const std::string& name) const {
  static const std::string empty;
  const auto it = inv.args.find(name);
  return it == inv.args.end() ? empty : it->second;
}

const std::string& Context::need(const std::string& name) const {
  if (!has(name)) throw UsageError(fmt::format("{} requires --{}", inv.command, name));
  return arg(name);
}

namespace {

// ---------------------------------------------------------------- plumbing

/// Exclusive marker in the output directory, removed when the run ends.
class DirLock {
 public:
  explicit DirLock(const fs::path& output) {
    fs::path dir = output.parent_path();
    if (dir.empty()) dir = ".";
    fs::create_directories(dir);
    path_ = dir / ".kdnas.lock";
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
      throw IoError(fmt::format("{} exists: another run is writing to {} (delete it if none is)", path_.string(),
                                dir.string()));
    }
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

std::string file_hash(const fs::path& p) { return content_hash(read_file(p)); }

std::string folder_hash(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += f.generic_string() + ":" + file_hash(root / f) + "\n";
  return content_hash(acc);
}

fs::path with_suffix(const fs::path& stem, const std::string& suffix) { return fs::path(stem.string() + suffix); }

void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

void write_manifest(const Context& ctx, const fs::path& out, const SearchSpaceSpec& spec,
                    const std::vector<fs::path>& outputs) {
  json j;
  j["format"] = "kdnas-manifest";
  j["version"] = 1;
  j["tool"] = "kdnas 0.1.0";
  j["command"] = ctx.inv.command;
  json args = json::object();
  for (const auto& [k, v] : ctx.inv.args) {
    if (!v.empty()) args[k] = v;
  }
  j["arguments"] = args;
  if (!ctx.inv.archs.empty()) j["archs"] = ctx.inv.archs;
  json cfg = json::object();
  for (const auto& [k, v] : ctx.cfg.values()) cfg[k] = v;
  j["config"] = cfg;
  j["seeds"] = {{"seed", ctx.cfg.get("seed")}, {"probe_seed", ctx.cfg.get("probe_seed")},
                {"data.seed", ctx.cfg.get("data.seed")}};
  j["spec"] = {{"hash", spec.hash()}, {"text", spec.serialize()}};
  json inputs = json::object();
  for (const auto& [k, v] : ctx.inputs) inputs[k] = v;
  j["inputs"] = inputs;
  json outs = json::object();
  for (const auto& p : outputs) outs[p.generic_string()] = file_hash(p);
  j["outputs"] = outs;
  write_json(with_suffix(out, ".manifest.json"), j);
}

// ---------------------------------------------------------------- settings

SearchSpaceSpec tiny_space() {
  SearchSpaceSpec s;
  s.num_stages = 2;
  s.depth_choices = {1, 2};
  s.base_widths = {16, 32};
  s.ratio_choices = {0.25, 0.5, 1.0};
  s.max_layers_per_stage = 2;
  s.input_shape = {3, 16, 16};
  return s;
}

SearchSpaceSpec config_spec(Context& ctx) {
  const auto& c = ctx.cfg;
  SearchSpaceSpec s;
  if (!c.get("space.file").empty()) {
    s = SearchSpaceSpec::parse(read_file(c.get("space.file")));
    ctx.inputs["space.file"] = file_hash(c.get("space.file"));
  } else if (c.get("space") == "paper") {
    s = SearchSpaceSpec::paper_default();
  } else if (c.get("space") == "tiny") {
    s = tiny_space();
  } else if (c.get("space") == "imagenet") {
    s = SearchSpaceSpec::imagenet_preset();
  } else {
    throw UsageError(fmt::format("config key 'space': unknown preset '{}' (paper, tiny, imagenet)", c.get("space")));
  }
  if (const auto& in = c.get("space.input"); !in.empty()) {
    InputShape shape;
    char tail = 0;
    if (std::sscanf(in.c_str(), "%dx%dx%d%c", &shape.channels, &shape.height, &shape.width, &tail) != 3) {
      throw UsageError(fmt::format("config key 'space.input': expected CxHxW, got '{}'", in));
    }
    s.input_shape = shape;
  }
  s.validate();
  return s;
}

KDConfig kd_config(const RunConfig& c) {
  KDConfig kd;
  kd.temperature = c.get_double("kd.temperature");
  kd.alpha = c.get_double("kd.alpha");
  const auto& order = c.get("kd.soft_order");
  if (order == "teacher-student") {
    kd.soft_order = SoftTermOrder::TeacherStudent;
  } else if (order == "student-teacher") {
    kd.soft_order = SoftTermOrder::StudentTeacher;
  } else {
    throw UsageError(fmt::format("config key 'kd.soft_order': expected teacher-student or student-teacher, got '{}'",
                                 order));
  }
  kd.sgd.epochs = c.get_int("kd.epochs");
  kd.sgd.lr = c.get_double("kd.lr");
  kd.sgd.batch_size = c.get_int("kd.batch_size");
  kd.sgd.seed = c.get_u64("seed");
  kd.validate();
  return kd;
}

CostBudget config_budget(const RunConfig& c) {
  CostBudget b;
  if (const auto m = c.get_i64("budget.macs"); m > 0) b.max_macs = m;
  if (const auto p = c.get_i64("budget.params"); p > 0) b.max_params = p;
  return b;
}

Dataset load_data(Context& ctx, const InputShape& shape) {
  Dataset data;
  if (ctx.has("data")) {
    data = load_image_folder(ctx.arg("data"));
    ctx.inputs["data"] = folder_hash(ctx.arg("data"));
  } else {
    SyntheticImageConfig s;
    s.num_classes = ctx.cfg.get_int("data.classes");
    s.per_class = ctx.cfg.get_int("data.per_class");
    s.noise = ctx.cfg.get_double("data.noise");
    s.max_shift = ctx.cfg.get_int("data.shift");
    s.seed = ctx.cfg.get_u64("data.seed");
    s.shape = shape;
    data = make_synthetic_images(s);
    ctx.inputs["data"] = "generated:" + data.id;
  }
  if (!(data.shape() == shape)) {
    const auto d = data.shape();
    throw ValidationError(fmt::format("images are {}x{}x{} but the search space expects {}x{}x{}", d.channels,
                                      d.height, d.width, shape.channels, shape.height, shape.width));
  }
  return data;
}

PredictorState load_state(Context& ctx) {
  const auto& stem = ctx.need("predictor");
  ctx.inputs["predictor"] = file_hash(with_suffix(stem, ".bin"));
  return load_predictor(stem);
}

void check_spec(const PredictorState& state, const SearchSpaceSpec& spec) {
  if (!state.config.spec_hash.empty() && state.config.spec_hash != spec.hash()) {
    throw ValidationError(fmt::format("predictor was trained on search space {} but the teacher uses {}",
                                      state.config.spec_hash, spec.hash()));
  }
}

struct TeacherSource {
  std::optional<StagedNetwork> net;
  std::optional<double> accuracy;
  std::function<TrainValSplit()> split;
};

TeacherSource teacher_source(Context& ctx) {
  TeacherSource src;
  if (ctx.has("db")) {
    const fs::path db_path = ctx.arg("db");
    auto db = std::make_shared<TaskDb>(load_db(db_path));
    ctx.inputs["db"] = file_hash(db_path);
    const int index = std::stoi(ctx.need("task"));
    if (index < 0 || index >= static_cast<int>(db->tasks.size())) {
      throw UsageError(fmt::format("--task {} out of range: {} has {} tasks", index, db_path.string(), db->tasks.size()));
    }
    const auto& task = db->tasks[index];
    src.net = resolve_teacher(*db, task, db_path);
    src.accuracy = task.teacher_accuracy;
    src.split = [&ctx, db, index]() {
      if (db->header.kind != "distilled") throw UsageError("synthetic database tasks carry no images");
      const auto plan = plan_from_header(*db);
      const auto data = load_data(ctx, db->header.spec.input_shape);
      if (data.id != plan.dataset_id) {
        throw ValidationError(
            fmt::format("the database was built from dataset '{}', not '{}'", plan.dataset_id, data.id));
      }
      return plan.materialize(data, db->tasks[index].split);
    };
  } else if (ctx.has("teacher")) {
    const auto& stem = ctx.arg("teacher");
    src.net = load_checkpoint(stem);
    ctx.inputs["teacher"] = file_hash(with_suffix(stem, ".bin"));
    const InputShape shape = src.net->spec().input_shape;
    const double val_fraction = ctx.cfg.get_double("val_fraction");
    const auto seed = derive_seed(ctx.cfg.get_u64("seed"), 0x7661);
    src.split = [&ctx, shape, val_fraction, seed]() {
      return split_train_val(load_data(ctx, shape), val_fraction, seed);
    };
  } else {
    throw UsageError(fmt::format("{} needs a teacher: --db with --task, or --teacher", ctx.inv.command));
  }
  if (ctx.has("teacher-accuracy")) src.accuracy = std::stod(ctx.arg("teacher-accuracy"));
  return src;
}

double teacher_accuracy(Context& ctx, TeacherSource& src) {
  if (!src.accuracy) {
    src.accuracy = evaluate(*src.net, src.split().val);
    ctx.err << fmt::format("teacher accuracy measured on the validation split: {:.4f}\n", *src.accuracy);
  }
  return *src.accuracy;
}

std::vector<ArchConfig> requested_archs(const Context& ctx, const SearchSpaceSpec& spec) {
  std::vector<std::string> lines = ctx.inv.archs;
  if (ctx.has("arch-file")) {
    std::istringstream in(read_file(ctx.arg("arch-file")));
    for (std::string l; std::getline(in, l);) {
      if (!l.empty() && l.front() != '#') lines.push_back(l);
    }
  }
  if (lines.empty()) throw UsageError(fmt::format("{} requires --arch or --arch-file", ctx.inv.command));
  std::vector<ArchConfig> out;
  for (const auto& l : lines) {
    auto c = ArchConfig::parse(l);
    validate_config(spec, c);
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------- commands

void build_db_cmd(Context& ctx) {
  const fs::path out = ctx.need("out");
  const auto spec = config_spec(ctx);
  const auto data = load_data(ctx, spec.input_shape);
  const auto& c = ctx.cfg;
  BuildDbConfig b;
  b.num_splits = c.get_int("splits");
  b.train_splits = c.get_int("train_splits");
  b.val_splits = c.get_int("val_splits");
  b.val_fraction = c.get_double("val_fraction");
  b.pool_size = c.get_int("pool_size");
  b.pairs_per_task = c.get_int("pairs_per_task");
  b.test_pairs_per_task = c.get_int("test_pairs_per_task");
  b.teacher.epochs = c.get_int("teacher_epochs");
  b.teacher.lr = c.get_double("teacher.lr");
  b.teacher.batch_size = c.get_int("teacher.batch_size");
  b.kd = kd_config(c);
  b.seed = c.get_u64("seed");
  const auto plan = plan_splits(data, b.num_splits, b.seed, b.train_splits, b.val_splits, b.val_fraction);
  DirLock lock(out);
  build_db(spec, data, plan, b, out, [&](const BuildProgress& p) {
    if (p.pair < 0) {
      ctx.err << fmt::format("split {}: teacher accuracy {:.4f} ({:.1f}s)\n", p.split, p.accuracy, p.seconds);
    } else {
      ctx.err << fmt::format("split {} pair {}: {:.4f} ({:.1f}s)\n", p.split, p.pair, p.accuracy, p.seconds);
    }
  });
  const auto db = load_db(out);
  std::size_t pairs = 0;
  for (const auto& t : db.tasks) pairs += t.pairs.size();
  write_manifest(ctx, out, spec, {out});
  ctx.out << fmt::format("wrote {}: {} tasks, {} pairs\n", out.string(), db.tasks.size(), pairs);
}

void make_synth_db_cmd(Context& ctx) {
  const fs::path out = ctx.need("out");
  const auto spec = config_spec(ctx);
  const auto& c = ctx.cfg;
  SyntheticDbConfig s;
  s.train_tasks = c.get_int("synth.train_tasks");
  s.val_tasks = c.get_int("synth.val_tasks");
  s.test_tasks = c.get_int("synth.test_tasks");
  s.num_classes = c.get_int("synth.num_classes");
  s.noise_sd = c.get_double("synth.noise_sd");
  s.pairs_per_task = c.get_int("pairs_per_task");
  s.pool_size = c.get_int("pool_size");
  s.oracle_seed = c.get_u64("seed");
  DirLock lock(out);
  const auto db = make_synthetic_db(spec, s);
  write_db(db, out);
  write_manifest(ctx, out, spec, {out});
  ctx.out << fmt::format("wrote {}: {} synthetic tasks x {} pairs\n", out.string(), db.tasks.size(),
                         s.pairs_per_task);
}

void meta_train_cmd(Context& ctx) {
  const fs::path out = ctx.need("out");
  const fs::path db_path = ctx.need("db");
  const auto db = load_db(db_path);
  ctx.inputs["db"] = file_hash(db_path);
  const auto& c = ctx.cfg;
  const auto& spec = db.header.spec;
  const auto probe = NoiseProbe::make(spec.input_shape, c.get_u64("probe_seed"));
  const auto train = encode_tasks(db, db_path, probe, {"train"});
  auto val = encode_tasks(db, db_path, probe, {"val"});
  if (train.empty()) throw ValidationError(fmt::format("{} has no train tasks", db_path.string()));
  if (val.empty()) {
    ctx.err << "no val tasks in the database; model selection uses the train tasks\n";
    val = train;
  }
  PredictorConfig pc;
  pc.dims.onehot = static_cast<int>(spec.encoding_length());
  pc.dims.feature = static_cast<int>(train.front().teacher_pair.teacher.size());
  pc.dims.embed = c.get_int("embed_dim");
  pc.dims.hidden = c.get_int("hidden_dim");
  pc.inner_steps = c.get_int("inner_steps");
  pc.meta_lr = c.get_double("meta_lr");
  pc.alpha_init = c.get_double("alpha_init");
  pc.first_order = c.get_bool("first_order");
  pc.seed = c.get_u64("seed");
  pc.probe_seed = c.get_u64("probe_seed");
  pc.spec_hash = spec.hash();
  MetaSchedule sched;
  sched.iterations = c.get_int("meta_iterations");
  sched.meta_batch = c.get_int("meta_batch");
  sched.queries_per_task = c.get_int("query_pairs");
  sched.eval_every = c.get_int("eval_every");
  sched.seed = c.get_u64("seed");
  DirLock lock(out);
  const auto result = meta_train(init_predictor(pc), train, val, sched, [&](const MetaTrainRecord& r) {
    ctx.err << fmt::format("step {:>5}  loss {:.6f}  val SRC {:.4f}\n", r.step, r.loss, r.val_src);
  });
  save_predictor(result.best, out);
  json hist = json::array();
  for (const auto& r : result.history) hist.push_back({{"step", r.step}, {"loss", r.loss}, {"val_src", r.val_src}});
  const auto history = with_suffix(out, ".history.json");
  write_json(history, {{"best_step", result.best_step}, {"best_val_src", result.best_val_src}, {"history", hist}});
  write_manifest(ctx, out, spec, {with_suffix(out, ".json"), with_suffix(out, ".bin"), history});
  ctx.out << fmt::format("best val SRC {:.4f} at step {}; wrote {}\n", result.best_val_src, result.best_step,
                         out.string());
}

PredictorState maybe_adapt(Context& ctx, const PredictorState& state, TeacherSource& src, const NoiseProbe& probe,
                           bool force) {
  if (!force && ctx.arg("adapt") != "true") return state;
  const TeacherEncoder enc(*src.net, probe);
  return adapt(state, enc.encode_teacher(), teacher_accuracy(ctx, src));
}

void adapt_cmd(Context& ctx) {
  const fs::path out = ctx.need("out");
  const auto state = load_state(ctx);
  auto src = teacher_source(ctx);
  check_spec(state, src.net->spec());
  const auto probe = NoiseProbe::make(src.net->spec().input_shape, state.config.probe_seed);
  DirLock lock(out);
  const auto adapted = maybe_adapt(ctx, state, src, probe, true);
  save_predictor(adapted, out);
  write_manifest(ctx, out, src.net->spec(), {with_suffix(out, ".json"), with_suffix(out, ".bin")});
  ctx.out << fmt::format("adapted to teacher accuracy {:.4f}; wrote {}\n", *src.accuracy, out.string());
}

void predict_cmd(Context& ctx) {
  const fs::path out = ctx.need("out");
  const auto base = load_state(ctx);
  auto src = teacher_source(ctx);
  const auto& spec = src.net->spec();
  check_spec(base, spec);
  const auto archs = requested_archs(ctx, spec);
  const auto probe = NoiseProbe::make(spec.input_shape, base.config.probe_seed);
  const auto state = maybe_adapt(ctx, base, src, probe, false);
  const TeacherEncoder enc(*src.net, probe);
  json rows = json::array();
  for (const auto& a : archs) {
    const double y = predict(state, enc.encode(a));
    rows.push_back({{"config", a.serialize()}, {"predicted", y}});
    ctx.out << fmt::format("{:.6f}  {}\n", y, a.serialize());
  }
  DirLock lock(out);
  write_json(out, {{"format", "kdnas-predictions"}, {"adapted", ctx.arg("adapt") == "true"}, {"predictions", rows}});
  write_manifest(ctx, out, spec, {out});
}

void search_cmd(Context& ctx) {
  const fs::path out = ctx.need("out");
  const std::string method = ctx.has("method") ? ctx.arg("method") : "predictor";
  auto src = teacher_source(ctx);
  const auto& teacher = *src.net;
  const auto& spec = teacher.spec();
  const auto seed = ctx.cfg.get_u64("seed");
  const auto budget = config_budget(ctx.cfg);
  const int n = ctx.cfg.get_int("n_candidates");

  SearchResult r;
  if (method == "predictor") {
    const auto base = load_state(ctx);
    check_spec(base, spec);
    const auto probe = NoiseProbe::make(spec.input_shape, base.config.probe_seed);
    const auto state = maybe_adapt(ctx, base, src, probe, false);
    r = search(state, teacher, probe, n, budget, seed);
  } else {
    const auto zc = parse_zero_cost_method(method);
    const auto split = src.split();
    std::vector<std::size_t> idx(split.train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(derive_seed(seed, 0x7a63));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(ctx.cfg.get_int("zero_cost.batch"))));
    const Tensor images = gather_images(split.train, idx);
    std::vector<int> labels;
    for (auto i : idx) labels.push_back(split.train.labels[i]);
    const auto init_seed = derive_seed(seed, 0x696e);
    r = search_with(
        spec, teacher.config(), teacher.num_classes(),
        [&](const ArchConfig& c) {
          return zero_cost_score(zc, spec, c, teacher.num_classes(), images, labels, init_seed);
        },
        method, n, budget, seed);
  }

  json ranked = json::array();
  for (std::size_t i = 0; i < r.ranked.size(); ++i) {
    const auto& e = r.ranked[i];
    json score = std::isfinite(e.score) ? json(e.score) : json("-inf");
    ranked.push_back({{"rank", i + 1},
                      {"config", e.config.serialize()},
                      {"score", score},
                      {"macs", e.cost.macs},
                      {"params", e.cost.params}});
  }
  json budget_j = json::object();
  if (budget.max_macs) budget_j["max_macs"] = *budget.max_macs;
  if (budget.max_params) budget_j["max_params"] = *budget.max_params;
  const auto timing = with_suffix(out, ".timing.json");
  DirLock lock(out);
  write_json(out, {{"format", "kdnas-search"},
                   {"method", r.method},
                   {"budget", budget_j},
                   {"sampled", r.sampled},
                   {"unique", r.unique},
                   {"admissible", r.admissible},
                   {"ranked", ranked}});
  // wall-clock lives apart so reruns reproduce the result file byte for byte
  write_json(timing, {{"scored", r.admissible},
                      {"scoring_seconds", r.scoring_seconds},
                      {"per_arch_seconds", r.per_arch_seconds}});
  write_manifest(ctx, out, spec, {out});

  ctx.out << fmt::format("{}: {} sampled, {} unique, {} within budget\n", r.method, r.sampled, r.unique,
                         r.admissible);
  for (std::size_t i = 0; i < std::min<std::size_t>(5, r.ranked.size()); ++i) {
    const auto& e = r.ranked[i];
    ctx.out << fmt::format("{:>3}  {:>12.6g}  {:>12} MACs  {}\n", i + 1, e.score, e.cost.macs, e.config.serialize());
  }
  ctx.out << fmt::format("scoring time per architecture: {:.6f} s\n", r.per_arch_seconds);
}

void distill_cmd(Context& ctx) {
  const fs::path out = ctx.need("out");
  auto src = teacher_source(ctx);
  const auto& spec = src.net->spec();
  if (ctx.inv.archs.size() != 1) throw UsageError("distill requires exactly one --arch");
  const auto student = requested_archs(ctx, spec).front();
  const auto feas = validate_remap_feasibility(spec, src.net->config(), student);
  if (!feas.feasible) throw RemapError(fmt::format("student {} exceeds the teacher", student.serialize()));
  const auto split = src.split();
  const auto kd = kd_config(ctx.cfg);
  DirLock lock(out);
  const auto res = distill(*src.net, student, split.train, split.val, kd);
  save_checkpoint(res.student, out, {{"config", student.serialize()}});
  const auto result = with_suffix(out, ".result.json");
  write_json(result, {{"format", "kdnas-distill"},
                      {"config", student.serialize()},
                      {"best_val_accuracy", res.train.best_val_accuracy},
                      {"best_epoch", res.train.best_epoch},
                      {"val_history", res.train.val_history}});
  write_manifest(ctx, out, spec, {with_suffix(out, ".json"), with_suffix(out, ".bin"), result});
  ctx.out << fmt::format("best validation accuracy {:.4f} at epoch {} ({:.1f}s)\n", res.train.best_val_accuracy,
                         res.train.best_epoch, res.train.seconds);
}

void eval_cmd(Context& ctx) {
  const fs::path out = ctx.need("out");
  const auto state = load_state(ctx);
  const fs::path db_path = ctx.need("db");
  const auto db = load_db(db_path);
  ctx.inputs["db"] = file_hash(db_path);
  check_spec(state, db.header.spec);
  std::vector<std::string> roles;
  {
    std::istringstream in(ctx.has("roles") ? ctx.arg("roles") : std::string("test"));
    for (std::string r; std::getline(in, r, ',');) roles.push_back(r);
  }
  const auto probe = NoiseProbe::make(db.header.spec.input_shape, state.config.probe_seed);
  const auto tasks = encode_tasks(db, db_path, probe, roles);
  if (tasks.empty()) throw ValidationError(fmt::format("{} has no tasks with the requested roles", db_path.string()));
  const auto n_eval = static_cast<std::size_t>(ctx.cfg.get_int("n_eval"));

  json rows = json::array();
  double sum_g = 0.0, sum_u = 0.0;
  ctx.out << fmt::format("{:<12} {:>6} {:>10} {:>10}\n", "task", "pairs", "guided", "unguided");
  for (const auto& t : tasks) {
    const auto adapted = adapt(state, t.teacher_pair, t.teacher_accuracy);
    auto src_of = [&](const PredictorState& s) {
      std::vector<double> p(std::min(n_eval, t.features.size()));
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = predict(s, t.features[i]);
      if (std::adjacent_find(p.begin(), p.end(), std::not_equal_to<>()) == p.end()) {
        ctx.err << fmt::format("warning: constant predictions on task {}; SRC reported as 0\n", t.id);
      }
      return evaluate_scores([&](std::size_t i) { return p.at(i); }, t, n_eval);
    };
    const double g = src_of(adapted);
    const double u = src_of(state);
    sum_g += g;
    sum_u += u;
    rows.push_back({{"task", t.id}, {"pairs", t.accuracies.size()}, {"src_guided", g}, {"src_unguided", u}});
    ctx.out << fmt::format("{:<12} {:>6} {:>10.4f} {:>10.4f}\n", t.id, t.accuracies.size(), g, u);
  }
  const double k = static_cast<double>(tasks.size());
  ctx.out << fmt::format("{:<12} {:>6} {:>10.4f} {:>10.4f}\n", "mean", "", sum_g / k, sum_u / k);
  DirLock lock(out);
  write_json(out, {{"format", "kdnas-eval"},
                   {"n_eval", n_eval},
                   {"tasks", rows},
                   {"mean_src_guided", sum_g / k},
                   {"mean_src_unguided", sum_u / k}});
  write_manifest(ctx, out, db.header.spec, {out});
}

}  // namespace

void run_command(Context& ctx) {
  static const std::map<std::string, void (*)(Context&)> table{
      {"build-db", build_db_cmd}, {"make-synth-db", make_synth_db_cmd}, {"meta-train", meta_train_cmd},
      {"adapt", adapt_cmd},       {"predict", predict_cmd},             {"search", search_cmd},
      {"distill", distill_cmd},   {"eval", eval_cmd},
  };
  const auto it = table.find(ctx.inv.command);
  if (it == table.end()) throw UsageError(fmt::format("unknown command '{}'", ctx.inv.command));
  it->second(ctx);
}

}  // namespace kdnas::cli
