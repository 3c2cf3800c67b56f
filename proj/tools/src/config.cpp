// SPDX-License-Identifier: Apache-2.0
#include "config.hpp"

#include <charconv>
#include <sstream>

#include <fmt/format.h>

#include "kdnas/error.hpp"
#include "kdnas/io.hpp"

namespace kdnas::cli {

const std::vector<KeyInfo>& config_keys() {
  static const std::vector<KeyInfo> keys{
      {"seed", "0", "0", "top-level seed"},
      {"space", "paper", "tiny", "search space preset: paper | tiny | imagenet"},
      {"space.file", "", "", "file holding a serialized search space (overrides space)"},
      {"space.input", "", "", "input shape CxHxW override, e.g. 3x32x32"},
      {"data.classes", "100", "40", "synthetic images: classes (used without --data)"},
      {"data.per_class", "100", "40", "synthetic images: examples per class"},
      {"data.noise", "0.6", "1.0", "synthetic images: noise level"},
      {"data.shift", "2", "2", "synthetic images: max circular shift"},
      {"data.seed", "0", "0", "synthetic images: generator seed"},
      {"splits", "10", "5", "class-wise task splits"},
      {"train_splits", "8", "4", "meta-train splits"},
      {"val_splits", "2", "0", "meta-validation splits (the rest are held out)"},
      {"val_fraction", "0.1", "0.25", "per-split validation fraction"},
      {"teacher_epochs", "180", "10", "teacher training epochs"},
      {"teacher.lr", "0.05", "0.05", "teacher learning rate"},
      {"teacher.batch_size", "64", "32", "teacher batch size"},
      {"pool_size", "2000", "30", "shared student pool size"},
      {"pairs_per_task", "200", "8", "distilled pairs per task"},
      {"test_pairs_per_task", "-1", "-1", "pairs per held-out task (-1: pairs_per_task)"},
      {"kd.temperature", "6", "6", "distillation temperature"},
      {"kd.alpha", "0.5", "0.5", "hard-label weight"},
      {"kd.epochs", "50", "10", "distillation epochs"},
      {"kd.lr", "0.05", "0.2", "distillation learning rate"},
      {"kd.batch_size", "64", "32", "distillation batch size"},
      {"kd.soft_order", "teacher-student", "teacher-student", "soft term argument order"},
      {"synth.train_tasks", "8", "8", "synthetic db: meta-train tasks"},
      {"synth.val_tasks", "0", "0", "synthetic db: meta-validation tasks"},
      {"synth.test_tasks", "2", "2", "synthetic db: held-out tasks"},
      {"synth.num_classes", "10", "10", "synthetic db: teacher classes"},
      {"synth.noise_sd", "0.01", "0.01", "synthetic db: accuracy noise"},
      {"meta_iterations", "500", "300", "meta-training iterations"},
      {"meta_batch", "8", "4", "tasks per meta-batch"},
      {"query_pairs", "50", "8", "query pairs per task and step"},
      {"inner_steps", "1", "1", "guided adaptation steps (0 disables)"},
      {"meta_lr", "0.001", "0.003", "outer learning rate"},
      {"alpha_init", "0.001", "0.001", "initial inner learning rate"},
      {"first_order", "false", "false", "drop second-order terms"},
      {"eval_every", "25", "25", "validation interval"},
      {"embed_dim", "32", "32", "embedding width"},
      {"hidden_dim", "128", "128", "fusion hidden width"},
      {"probe_seed", "0", "0", "noise probe seed"},
      {"n_eval", "50", "8", "fixed pairs per task for rank correlation"},
      {"n_candidates", "3000", "100", "sampled search candidates"},
      {"budget.macs", "0", "0", "strict MACs ceiling (0: none)"},
      {"budget.params", "0", "0", "strict parameter ceiling (0: none)"},
      {"zero_cost.batch", "64", "16", "examples fed to zero-cost scores"},
  };
  return keys;
}

std::string valid_keys_text() {
  std::string s;
  for (const auto& k : config_keys()) s += fmt::format("  {:<22} {}\n", k.name, k.help);
  return s;
}

RunConfig::RunConfig(Preset preset) {
  for (const auto& k : config_keys()) values_[k.name] = preset == Preset::Paper ? k.paper : k.mini;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw UsageError(fmt::format("unknown config key '{}'; valid keys:\n{}", key, valid_keys_text()));
  }
  it->second = value;
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw UsageError(fmt::format("expected key=value, got '{}'", assignment));
  set(std::string(trim(assignment.substr(0, eq))), std::string(trim(assignment.substr(eq + 1))));
}

void RunConfig::load_text(std::string_view text, const std::string& origin) {
  int line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    std::string_view l = line;
    if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = trim(l);
    if (l.empty()) continue;
    try {
      apply_override(l);
    } catch (const UsageError& e) {
      throw UsageError(fmt::format("{}:{}: {}", origin, line_no, e.what()));
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) { load_text(read_file(path), path.string()); }

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InternalError(fmt::format("config key '{}' not registered", key));
  return it->second;
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& text, const char* what) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (text.empty() || r.ec != std::errc() || r.ptr != end) {
    throw UsageError(fmt::format("config key '{}': expected {}, got '{}'", key, what, text));
  }
  return v;
}

}  // namespace

int RunConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key), "an integer"); }
std::int64_t RunConfig::get_i64(const std::string& key) const {
  return parse_number<std::int64_t>(key, get(key), "an integer");
}
std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key), "a non-negative integer");
}
double RunConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key), "a number");
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError(fmt::format("config key '{}': expected true or false, got '{}'", key, v));
}

}  // namespace kdnas::cli
