// SPDX-License-Identifier: Apache-2.0
#include "kdnas/task_db.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "kdnas/error.hpp"
#include "kdnas/io.hpp"
#include "kdnas/remapping.hpp"
#include "text_util.hpp"

namespace kdnas {

using json = nlohmann::ordered_json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit_open(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53; }

constexpr const char* kDbFormat = "kdnas-taskdb";

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ b);
}

std::string format_accuracy(double accuracy) { return fmt::format("{:.6f}", accuracy); }

// ---------------------------------------------------------------- splits

std::string DatasetSplitPlan::role(int split) const {
  if (split < 0 || split >= num_splits) throw ValidationError(fmt::format("split {} out of range", split));
  if (split < train_splits) return "train";
  if (split < train_splits + val_splits) return "val";
  return "test";
}

TrainValSplit DatasetSplitPlan::materialize(const Dataset& data, int split) const {
  if (split < 0 || split >= num_splits) throw ValidationError(fmt::format("split {} out of range", split));
  return split_train_val(select_classes(data, classes[split]), val_fraction, derive_seed(seed, 0x7661, split));
}

DatasetSplitPlan plan_splits(const Dataset& data, int num_splits, std::uint64_t seed, int train_splits,
                             int val_splits, double val_fraction) {
  if (num_splits < 1) throw ValidationError(fmt::format("need at least one split, got {}", num_splits));
  if (data.num_classes < num_splits) {
    throw ValidationError(
        fmt::format("dataset '{}' has {} classes, fewer than {} splits", data.id, data.num_classes, num_splits));
  }
  if (train_splits < 0) train_splits = num_splits - (num_splits >= 5 ? num_splits / 5 : 0);
  if (val_splits < 0) val_splits = num_splits - train_splits;
  if (train_splits + val_splits > num_splits) {
    throw ValidationError(fmt::format("{} train + {} val splits exceed {} splits", train_splits, val_splits, num_splits));
  }
  DatasetSplitPlan plan;
  plan.dataset_id = data.id;
  plan.num_splits = num_splits;
  plan.train_splits = train_splits;
  plan.val_splits = val_splits;
  plan.val_fraction = val_fraction;
  plan.seed = seed;
  std::vector<int> classes(data.num_classes);
  std::iota(classes.begin(), classes.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x706c616e));
  std::shuffle(classes.begin(), classes.end(), rng);
  plan.classes.assign(num_splits, {});
  for (std::size_t i = 0; i < classes.size(); ++i) plan.classes[i % num_splits].push_back(classes[i]);
  for (auto& c : plan.classes) std::sort(c.begin(), c.end());
  return plan;
}

DatasetSplitPlan plan_from_header(const TaskDb& db) {
  if (db.header.kind != "distilled") throw SchemaError("only distilled databases carry a split plan");
  const auto& p = db.header.params;
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = p.find(key);
    if (it == p.end()) throw SchemaError(fmt::format("database header lacks '{}'", key));
    return it->second;
  };
  DatasetSplitPlan plan;
  try {
    plan.dataset_id = get("dataset");
    plan.num_splits = std::stoi(get("splits"));
    plan.train_splits = std::stoi(get("train_splits"));
    plan.val_splits = std::stoi(get("val_splits"));
    plan.val_fraction = std::stod(get("val_fraction"));
    plan.seed = std::stoull(get("plan.seed"));
    std::string_view text = get("plan.classes");
    while (!text.empty()) {
      const auto slash = text.find('/');
      const auto part = text.substr(0, slash);
      std::vector<int> cls;
      std::size_t pos = 0;
      while (pos < part.size()) {
        const auto comma = part.find(',', pos);
        cls.push_back(std::stoi(std::string(part.substr(pos, comma - pos))));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
      }
      plan.classes.push_back(std::move(cls));
      if (slash == std::string_view::npos) break;
      text.remove_prefix(slash + 1);
    }
  } catch (const std::logic_error& e) {
    throw SchemaError(fmt::format("malformed split plan in database header: {}", e.what()));
  }
  if (static_cast<int>(plan.classes.size()) != plan.num_splits) {
    throw SchemaError(fmt::format("split plan lists {} class groups for {} splits", plan.classes.size(), plan.num_splits));
  }
  return plan;
}

// ---------------------------------------------------------------- presets

BuildDbConfig BuildDbConfig::paper_scale() { return BuildDbConfig{}; }

BuildDbConfig BuildDbConfig::mini() {
  BuildDbConfig c;
  c.num_splits = 5;
  c.train_splits = 4;
  c.val_splits = 0;
  c.pool_size = 30;
  c.pairs_per_task = 8;
  c.teacher.epochs = 10;
  c.teacher.batch_size = 32;
  c.val_fraction = 0.25;
  c.kd.sgd.epochs = 10;
  c.kd.sgd.batch_size = 32;
  // at T = 6 the KD gradient is scaled by 1/T; 0.05 stalls in 10 epochs
  c.kd.sgd.lr = 0.2;
  return c;
}

namespace {

void put_sgd(Metadata& m, const std::string& prefix, const SgdConfig& s) {
  m[prefix + ".epochs"] = std::to_string(s.epochs);
  m[prefix + ".lr"] = fmt::format("{}", s.lr);
  m[prefix + ".batch_size"] = std::to_string(s.batch_size);
  m[prefix + ".momentum"] = fmt::format("{}", s.momentum);
  m[prefix + ".weight_decay"] = fmt::format("{}", s.weight_decay);
}

}  // namespace

Metadata BuildDbConfig::describe() const {
  Metadata m;
  m["splits"] = std::to_string(num_splits);
  m["train_splits"] = std::to_string(train_splits);
  m["val_splits"] = std::to_string(val_splits);
  m["pool_size"] = std::to_string(pool_size);
  m["pairs_per_task"] = std::to_string(pairs_per_task);
  m["test_pairs_per_task"] = std::to_string(test_pairs_per_task);
  m["val_fraction"] = fmt::format("{}", val_fraction);
  put_sgd(m, "teacher", teacher);
  m["kd.temperature"] = fmt::format("{}", kd.temperature);
  m["kd.alpha"] = fmt::format("{}", kd.alpha);
  m["kd.soft_order"] = kd.soft_order == SoftTermOrder::TeacherStudent ? "teacher-student" : "student-teacher";
  put_sgd(m, "kd", kd.sgd);
  m["seed"] = std::to_string(seed);
  return m;
}

Metadata SyntheticDbConfig::describe() const {
  Metadata m;
  m["train_tasks"] = std::to_string(train_tasks);
  m["val_tasks"] = std::to_string(val_tasks);
  m["test_tasks"] = std::to_string(test_tasks);
  m["pairs_per_task"] = std::to_string(pairs_per_task);
  m["pool_size"] = std::to_string(pool_size);
  m["num_classes"] = std::to_string(num_classes);
  m["noise_sd"] = fmt::format("{}", noise_sd);
  m["oracle_seed"] = std::to_string(oracle_seed);
  return m;
}

std::vector<ArchConfig> sample_pool(const SearchSpaceSpec& spec, int pool_size, std::uint64_t seed) {
  if (pool_size < 0) throw ValidationError("pool size must be >= 0");
  std::mt19937_64 rng(seed);
  std::vector<ArchConfig> pool;
  pool.reserve(pool_size);
  for (int i = 0; i < pool_size; ++i) pool.push_back(sample(spec, rng));
  return pool;
}

namespace {

std::vector<std::size_t> pick_pairs(std::size_t pool, int count, std::uint64_t seed) {
  if (count < 0 || static_cast<std::size_t>(count) > pool) {
    throw ValidationError(fmt::format("cannot draw {} pairs from a pool of {}", count, pool));
  }
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (int k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> d(k, pool - 1);
    std::swap(idx[k], idx[d(rng)]);
  }
  idx.resize(count);
  return idx;
}

// ---------------------------------------------------------------- lines

json oracle_block(const Metadata& params) {
  json o;
  o["formula"] = "y = clamp(teacher_accuracy - lambda * (1 - w . phi(c)) + noise_sd * eps, 0, 1)";
  o["features"] =
      "phi = (macs/macs_max, params/params_max, active layers/max layers, mean active ratio); costs without "
      "classifier head at spec input; max over the largest config";
  o["noise"] =
      "s = derive_seed(seed, task, pair); u1 = ((splitmix64(s) >> 11) + 0.5) * 2^-53; u2 likewise from "
      "splitmix64(s + 1); eps = sqrt(-2 ln u1) cos(2 pi u2); derive_seed(b, x, y) = "
      "splitmix64(splitmix64(splitmix64(b) ^ x) ^ y)";
  o["noise_sd"] = params.at("noise_sd");
  o["seed"] = params.at("oracle_seed");
  return o;
}

std::string header_line(const DbHeader& h) {
  json j;
  j["format"] = kDbFormat;
  j["version"] = 1;
  j["kind"] = h.kind;
  j["spec"] = h.spec.serialize();
  j["spec_hash"] = h.spec.hash();
  j["num_classes"] = h.num_classes;
  j["params"] = json::object();
  for (const auto& [k, v] : h.params) j["params"][k] = v;
  if (h.kind == "synthetic") j["oracle"] = oracle_block(h.params);
  return j.dump();
}

std::string task_line(const TaskRecord& t) {
  json j;
  j["type"] = "task";
  j["split"] = t.split;
  j["role"] = t.role;
  j["classes"] = t.classes;
  j["teacher"] = t.teacher;
  j["teacher_accuracy"] = format_accuracy(t.teacher_accuracy);
  if (!t.oracle_weights.empty()) {
    j["oracle_weights"] = t.oracle_weights;
    j["oracle_lambda"] = t.oracle_lambda;
  }
  return j.dump();
}

std::string pair_line(int split, std::size_t index, const PairRecord& p) {
  json j;
  j["type"] = "pair";
  j["split"] = split;
  j["index"] = index;
  j["config"] = p.config.serialize();
  j["accuracy"] = format_accuracy(p.accuracy);
  return j.dump();
}

[[noreturn]] void fail_line(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw SchemaError(fmt::format("{}:{}: {}", path.string(), line, what));
}

double parse_accuracy(const json& v, const char* field) {
  if (!v.is_string()) throw std::invalid_argument(fmt::format("{} must be decimal text", field));
  const double a = detail::parse_number<double>(v.get<std::string>(), field);
  if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument(fmt::format("{} {} outside [0, 1]", field, a));
  return a;
}

ArchConfig teacher_config_of(const DbHeader& h, const std::string& ref, const std::filesystem::path& db_path) {
  if (ref.starts_with("init:")) {
    detail::parse_number<std::uint64_t>(ref.substr(5), "teacher seed");
    return largest(h.spec);
  }
  if (ref.starts_with("ckpt:")) {
    const std::string hash = ref.substr(5);
    const auto stem = checkpoint_dir(db_path) / hash;
    auto manifest = stem;
    manifest += ".json";
    auto bin = stem;
    bin += ".bin";
    if (!std::filesystem::exists(manifest) || !std::filesystem::exists(bin)) {
      throw std::invalid_argument(fmt::format("dangling teacher checkpoint '{}'", ref));
    }
    const auto m = nlohmann::json::parse(read_file(manifest));
    return ArchConfig::parse(m.at("config").get<std::string>());
  }
  throw std::invalid_argument(fmt::format("teacher reference '{}' is neither init:<seed> nor ckpt:<hash>", ref));
}

// Parses complete lines (without their newline). `lines[0]` is the header.
TaskDb parse_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  TaskDb db;
  if (lines.empty()) return db;
  std::vector<ArchConfig> teacher_cfgs;
  std::set<int> splits;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::size_t no = ln + 1;
    try {
      const auto j = nlohmann::json::parse(lines[ln]);
      if (ln == 0) {
        if (j.value("format", "") != kDbFormat) throw std::invalid_argument("not a task database header");
        if (j.value("version", 0) != 1) throw std::invalid_argument("unsupported database version");
        db.header.kind = j.at("kind").get<std::string>();
        if (db.header.kind != "distilled" && db.header.kind != "synthetic") {
          throw std::invalid_argument(fmt::format("unknown database kind '{}'", db.header.kind));
        }
        db.header.spec = SearchSpaceSpec::parse(j.at("spec").get<std::string>());
        if (db.header.spec.hash() != j.at("spec_hash").get<std::string>()) {
          throw std::invalid_argument("spec hash does not match the spec text");
        }
        db.header.num_classes = j.at("num_classes").get<int>();
        for (const auto& [k, v] : j.at("params").items()) db.header.params[k] = v.get<std::string>();
        continue;
      }
      const std::string type = j.at("type").get<std::string>();
      if (type == "task") {
        TaskRecord t;
        t.split = j.at("split").get<int>();
        if (!splits.insert(t.split).second) throw std::invalid_argument(fmt::format("duplicate task {}", t.split));
        t.role = j.at("role").get<std::string>();
        if (t.role != "train" && t.role != "val" && t.role != "test") {
          throw std::invalid_argument(fmt::format("unknown role '{}'", t.role));
        }
        t.classes = j.at("classes").get<std::vector<int>>();
        t.teacher = j.at("teacher").get<std::string>();
        t.teacher_accuracy = parse_accuracy(j.at("teacher_accuracy"), "teacher_accuracy");
        if (j.contains("oracle_weights")) {
          t.oracle_weights = j.at("oracle_weights").get<std::vector<double>>();
          t.oracle_lambda = j.at("oracle_lambda").get<double>();
        }
        teacher_cfgs.push_back(teacher_config_of(db.header, t.teacher, path));
        db.tasks.push_back(std::move(t));
      } else if (type == "pair") {
        if (db.tasks.empty()) throw std::invalid_argument("pair before any task");
        auto& t = db.tasks.back();
        const int split = j.at("split").get<int>();
        if (split != t.split) {
          throw std::invalid_argument(fmt::format("pair for task {} follows task {}", split, t.split));
        }
        const auto index = j.at("index").get<std::size_t>();
        if (index != t.pairs.size()) {
          throw std::invalid_argument(fmt::format("pair index {} where {} was expected", index, t.pairs.size()));
        }
        PairRecord p{ArchConfig::parse(j.at("config").get<std::string>()), parse_accuracy(j.at("accuracy"), "accuracy")};
        validate_config(db.header.spec, p.config);
        const auto feas = validate_remap_feasibility(db.header.spec, teacher_cfgs.back(), p.config);
        if (!feas.feasible) throw std::invalid_argument("config not remap-feasible: " + feas.violations.front());
        t.pairs.push_back(std::move(p));
      } else {
        throw std::invalid_argument(fmt::format("unknown line type '{}'", type));
      }
    } catch (const nlohmann::json::exception& e) {
      fail_line(path, no, e.what());
    } catch (const std::invalid_argument& e) {
      fail_line(path, no, e.what());
    } catch (const SchemaError&) {
      throw;
    } catch (const Error& e) {
      fail_line(path, no, e.what());
    }
  }
  return db;
}

std::vector<std::string> split_lines(const std::string& bytes) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < bytes.size()) {
    const auto nl = bytes.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(bytes.substr(start));
      break;
    }
    lines.push_back(bytes.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

class Appender {
 public:
  explicit Appender(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::app) {
    if (!out_) throw IoError(fmt::format("{}: cannot open for appending", path.string()));
  }
  void line(const std::string& s) {
    out_ << s << '\n';
    out_.flush();
    if (!out_) throw IoError("write to task database failed");
  }

 private:
  std::ofstream out_;
};

}  // namespace

std::filesystem::path checkpoint_dir(const std::filesystem::path& db_path) {
  auto dir = db_path;
  dir += ".ckpt";
  return dir;
}

TaskDb load_db(const std::filesystem::path& db_path) {
  const std::string bytes = read_file(db_path);
  if (!bytes.empty() && bytes.back() != '\n') {
    fail_line(db_path, std::count(bytes.begin(), bytes.end(), '\n') + 1, "truncated line (no newline)");
  }
  return parse_lines(split_lines(bytes), db_path);
}

void write_db(const TaskDb& db, const std::filesystem::path& db_path) {
  std::string out = header_line(db.header) + "\n";
  for (const auto& t : db.tasks) {
    out += task_line(t) + "\n";
    for (std::size_t i = 0; i < t.pairs.size(); ++i) out += pair_line(t.split, i, t.pairs[i]) + "\n";
  }
  write_file_atomic(db_path, out);
}

StagedNetwork resolve_teacher(const TaskDb& db, const TaskRecord& task, const std::filesystem::path& db_path) {
  if (task.teacher.starts_with("init:")) {
    const auto seed = detail::parse_number<std::uint64_t>(task.teacher.substr(5), "teacher seed");
    const int k = task.classes.empty() ? db.header.num_classes : static_cast<int>(task.classes.size());
    return StagedNetwork::build(db.header.spec, largest(db.header.spec), k, seed);
  }
  if (task.teacher.starts_with("ckpt:")) {
    Metadata meta;
    auto net = load_checkpoint(checkpoint_dir(db_path) / task.teacher.substr(5), &meta);
    if (!(net.spec() == db.header.spec)) {
      throw SchemaError(fmt::format("teacher {} was built for a different search space", task.teacher));
    }
    return net;
  }
  throw SchemaError(fmt::format("bad teacher reference '{}'", task.teacher));
}

void build_db(const SearchSpaceSpec& spec, const Dataset& data, const DatasetSplitPlan& plan,
              const BuildDbConfig& config, const std::filesystem::path& db_path, const BuildCallback& progress) {
  spec.validate();
  config.teacher.validate();
  config.kd.validate();
  if (plan.num_splits != config.num_splits || plan.train_splits != config.train_splits ||
      plan.val_splits != config.val_splits) {
    throw ValidationError("split plan does not match the build configuration");
  }
  if (!(data.shape() == spec.input_shape)) {
    throw ValidationError("dataset image shape does not match the search-space input shape");
  }
  DbHeader header;
  header.kind = "distilled";
  header.spec = spec;
  header.num_classes = data.num_classes;
  header.params = config.describe();
  header.params["dataset"] = data.id;
  header.params["plan.seed"] = std::to_string(plan.seed);
  std::string classes_text;
  for (const auto& c : plan.classes) classes_text += (classes_text.empty() ? "" : "/") + detail::join(c, ",");
  header.params["plan.classes"] = classes_text;
  const std::string expected = header_line(header);

  TaskDb existing;
  if (std::filesystem::exists(db_path) && std::filesystem::file_size(db_path) > 0) {
    std::string bytes = read_file(db_path);
    if (bytes.back() != '\n') {
      bytes.erase(bytes.rfind('\n') == std::string::npos ? 0 : bytes.rfind('\n') + 1);
      write_file_atomic(db_path, bytes);
    }
    const auto lines = split_lines(bytes);
    if (!lines.empty() && lines.front() != expected) {
      throw ValidationError(
          fmt::format("{}: existing database was built with different parameters", db_path.string()));
    }
    existing = parse_lines(lines, db_path);
  }
  if (db_path.has_parent_path()) std::filesystem::create_directories(db_path.parent_path());
  if (!std::filesystem::exists(db_path) || std::filesystem::file_size(db_path) == 0) {
    write_file_atomic(db_path, expected + "\n");
  }
  Appender out(db_path);
  auto timing_path = db_path;
  timing_path += ".timing.jsonl";
  Appender timing(timing_path);
  std::filesystem::create_directories(checkpoint_dir(db_path));

  const auto pool = sample_pool(spec, config.pool_size, derive_seed(config.seed, 1));
  for (int s = 0; s < plan.num_splits; ++s) {
    const auto tv = plan.materialize(data, s);
    const int k = static_cast<int>(plan.classes[s].size());
    const TaskRecord* done = nullptr;
    for (const auto& t : existing.tasks) {
      if (t.split == s) done = &t;
    }
    if (!done && s < static_cast<int>(existing.tasks.size())) {
      throw SchemaError(fmt::format("{}: tasks are out of order", db_path.string()));
    }

    std::optional<StagedNetwork> teacher;
    if (done) {
      teacher = resolve_teacher(existing, *done, db_path);
    } else {
      teacher = StagedNetwork::build(spec, largest(spec), k, derive_seed(config.seed, 2, s));
      SgdConfig sgd = config.teacher;
      sgd.seed = derive_seed(config.seed, 3, s);
      const auto r = train_supervised(*teacher, tv.train, tv.val, sgd);
      const std::string hash = checkpoint_hash(*teacher);
      save_checkpoint(*teacher, checkpoint_dir(db_path) / hash, {{"split", std::to_string(s)}});
      TaskRecord rec;
      rec.split = s;
      rec.role = plan.role(s);
      rec.classes = plan.classes[s];
      rec.teacher = "ckpt:" + hash;
      rec.teacher_accuracy = r.best_val_accuracy;
      out.line(task_line(rec));
      timing.line(json{{"split", s}, {"pair", -1}, {"seconds", r.seconds}}.dump());
      if (progress) progress({s, -1, r.best_val_accuracy, r.seconds});
    }

    const int wanted = plan.role(s) == "test" && config.test_pairs_per_task >= 0 ? config.test_pairs_per_task
                                                                                   : config.pairs_per_task;
    const auto picks = pick_pairs(pool.size(), wanted, derive_seed(config.seed, 4, s));
    const std::size_t have = done ? done->pairs.size() : 0;
    for (std::size_t p = have; p < picks.size(); ++p) {
      KDConfig kd = config.kd;
      kd.sgd.seed = derive_seed(config.seed, 5, (static_cast<std::uint64_t>(s) << 32) | p);
      const auto r = distill(*teacher, pool[picks[p]], tv.train, tv.val, kd);
      out.line(pair_line(s, p, {pool[picks[p]], r.train.best_val_accuracy}));
      timing.line(json{{"split", s}, {"pair", p}, {"seconds", r.train.seconds}}.dump());
      if (progress) progress({s, static_cast<int>(p), r.train.best_val_accuracy, r.train.seconds});
    }
  }
}

// ---------------------------------------------------------------- synthetic

std::vector<double> oracle_features(const SearchSpaceSpec& spec, const ArchConfig& config) {
  const ArchConfig big = largest(spec);
  const auto c = count_costs(spec, config, spec.input_shape);
  const auto m = count_costs(spec, big, spec.input_shape);
  double layers = 0.0, max_layers = 0.0, ratio_sum = 0.0;
  for (int s = 0; s < spec.num_stages; ++s) {
    layers += static_cast<double>(config.ratios[s].size());
    max_layers += static_cast<double>(big.ratios[s].size());
    for (double r : config.ratios[s]) ratio_sum += r;
  }
  return {static_cast<double>(c.macs) / static_cast<double>(m.macs),
          static_cast<double>(c.params) / static_cast<double>(m.params), layers / max_layers, ratio_sum / layers};
}

double oracle_noise(std::uint64_t seed, int task, int pair) {
  const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(task), static_cast<std::uint64_t>(pair));
  const double u1 = unit_open(splitmix64(s));
  const double u2 = unit_open(splitmix64(s + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double oracle_accuracy(const SearchSpaceSpec& spec, const TaskRecord& task, const ArchConfig& config,
                       double noise_sd, std::uint64_t seed, int pair) {
  const auto phi = oracle_features(spec, config);
  if (task.oracle_weights.size() != phi.size()) throw SchemaError("task has no oracle weights");
  double score = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) score += task.oracle_weights[i] * phi[i];
  const double y = task.teacher_accuracy - task.oracle_lambda * (1.0 - score) +
                   noise_sd * oracle_noise(seed, task.split, pair);
  return std::clamp(y, 0.0, 1.0);
}

TaskDb make_synthetic_db(const SearchSpaceSpec& spec, const SyntheticDbConfig& config) {
  spec.validate();
  const int total = config.train_tasks + config.val_tasks + config.test_tasks;
  if (config.train_tasks < 0 || config.val_tasks < 0 || config.test_tasks < 0 || total < 1) {
    throw ValidationError("synthetic database needs a non-negative task count per role and at least one task");
  }
  if (config.num_classes < 1) throw ValidationError("num_classes must be >= 1");
  TaskDb db;
  db.header.kind = "synthetic";
  db.header.spec = spec;
  db.header.num_classes = config.num_classes;
  db.header.params = config.describe();

  const auto pool = sample_pool(spec, config.pool_size, derive_seed(config.oracle_seed, 9));
  std::mt19937_64 rng(derive_seed(config.oracle_seed, 7));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto round6 = [](double v) { return detail::parse_number<double>(format_accuracy(v), "accuracy"); };
  for (int t = 0; t < total; ++t) {
    TaskRecord rec;
    rec.split = t;
    rec.role = t < config.train_tasks ? "train" : t < config.train_tasks + config.val_tasks ? "val" : "test";
    rec.teacher = fmt::format("init:{}", derive_seed(config.oracle_seed, 8, t));
    rec.teacher_accuracy = round6(0.55 + 0.35 * u(rng));
    rec.oracle_lambda = 0.2 + 0.2 * u(rng);
    rec.oracle_weights.resize(4);
    double sum = 0.0;
    for (auto& w : rec.oracle_weights) sum += (w = 1.0 - u(rng));
    for (auto& w : rec.oracle_weights) w /= sum;
    const auto picks = pick_pairs(pool.size(), config.pairs_per_task, derive_seed(config.oracle_seed, 10, t));
    for (std::size_t p = 0; p < picks.size(); ++p) {
      const auto& cfg = pool[picks[p]];
      rec.pairs.push_back(
          {cfg, round6(oracle_accuracy(spec, rec, cfg, config.noise_sd, config.oracle_seed, static_cast<int>(p)))});
    }
    db.tasks.push_back(std::move(rec));
  }
  return db;
}

std::vector<EncodedTask> encode_tasks(const TaskDb& db, const std::filesystem::path& db_path, const NoiseProbe& probe,
                                      const std::vector<std::string>& roles) {
  std::vector<EncodedTask> out;
  for (const auto& t : db.tasks) {
    if (std::find(roles.begin(), roles.end(), t.role) == roles.end()) continue;
    const StagedNetwork teacher = resolve_teacher(db, t, db_path);
    const TeacherEncoder enc(teacher, probe);
    EncodedTask e;
    e.id = fmt::format("{}:{}", t.role, t.split);
    e.teacher_pair = enc.encode_teacher();
    e.teacher_accuracy = t.teacher_accuracy;
    for (const auto& p : t.pairs) {
      e.configs.push_back(p.config);
      e.features.push_back(enc.encode(p.config));
      e.accuracies.push_back(p.accuracy);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace kdnas
