// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "kdnas/dataset.hpp"
#include "kdnas/distillation.hpp"
#include "kdnas/network.hpp"
#include "kdnas/search_space.hpp"
#include "kdnas/task_encoding.hpp"

namespace kdnas {

/// Class-disjoint assignment of a dataset's classes to task splits. The
/// first `train_splits` splits are meta-train tasks, the next `val_splits`
/// meta-validation tasks, the rest held-out test tasks.
struct DatasetSplitPlan {
  std::string dataset_id;
  int num_splits = 0;
  int train_splits = 0;
  int val_splits = 0;
  std::vector<std::vector<int>> classes;  // per split, ascending
  double val_fraction = 0.1;              // per-split train/val example ratio
  std::uint64_t seed = 0;

  std::string role(int split) const;
  /// The split's examples relabelled 0..k-1 and partitioned per class.
  TrainValSplit materialize(const Dataset& data, int split) const;
};

/// Shuffles classes with `seed`, then deals them round-robin so split sizes
/// differ by at most one. Throws ValidationError when classes < num_splits.
DatasetSplitPlan plan_splits(const Dataset& data, int num_splits, std::uint64_t seed, int train_splits = -1,
                             int val_splits = -1, double val_fraction = 0.1);

struct PairRecord {
  ArchConfig config;
  double accuracy = 0.0;
};

struct TaskRecord {
  int split = 0;
  std::string role;  // train | val | test
  std::vector<int> classes;
  std::string teacher;  // "init:<seed>" or "ckpt:<content hash>"
  double teacher_accuracy = 0.0;
  std::vector<PairRecord> pairs;
  // Synthetic oracle parameters; empty for distilled databases.
  std::vector<double> oracle_weights;
  double oracle_lambda = 0.0;
};

struct DbHeader {
  std::string kind;  // distilled | synthetic
  SearchSpaceSpec spec;
  int num_classes = 0;
  Metadata params;  // every build parameter, echoed as text
};

struct TaskDb {
  DbHeader header;
  std::vector<TaskRecord> tasks;
};

/// Desk and paper sizes of every task-database quantity.
struct BuildDbConfig {
  int num_splits = 10;
  int train_splits = 8;
  int val_splits = 2;
  int pool_size = 2000;
  int pairs_per_task = 200;
  int test_pairs_per_task = -1;  // -1: same as pairs_per_task
  double val_fraction = 0.1;
  SgdConfig teacher{180, 5e-2, 64, 0.9, 5e-4, 0};
  KDConfig kd;
  std::uint64_t seed = 0;

  static BuildDbConfig paper_scale();
  static BuildDbConfig mini();
  Metadata describe() const;
};

struct BuildProgress {
  int split = 0;
  int pair = -1;  // -1 for the teacher
  double accuracy = 0.0;
  double seconds = 0.0;
};
using BuildCallback = std::function<void(const BuildProgress&)>;

/// The architecture pool shared by all tasks (duplicates allowed).
std::vector<ArchConfig> sample_pool(const SearchSpaceSpec& spec, int pool_size, std::uint64_t seed);

/// Trains a teacher per split, then distils pairs drawn without replacement
/// from the shared pool. Appends one line per task and per pair, so a killed
/// run resumes where it stopped and ends byte-identical to an uninterrupted
/// one. Teacher checkpoints live in `<db>.ckpt/` under their content hash;
/// wall-clock times go to `<db>.timing.jsonl`.
void build_db(const SearchSpaceSpec& spec, const Dataset& data, const DatasetSplitPlan& plan,
              const BuildDbConfig& config, const std::filesystem::path& db_path, const BuildCallback& progress = {});

/// Parses and validates a database file. Errors carry the line number.
TaskDb load_db(const std::filesystem::path& db_path);
/// Writes a complete database (header, then tasks with their pairs).
void write_db(const TaskDb& db, const std::filesystem::path& db_path);

/// The split plan a distilled database was built with, recovered from its
/// header. Throws SchemaError for synthetic databases or missing keys.
DatasetSplitPlan plan_from_header(const TaskDb& db);

/// Builds or loads the teacher a task refers to.
StagedNetwork resolve_teacher(const TaskDb& db, const TaskRecord& task, const std::filesystem::path& db_path);
std::filesystem::path checkpoint_dir(const std::filesystem::path& db_path);

/// Analytic ground truth for desk-scale verification:
///   y = clamp(y_teacher - lambda * (1 - w . phi(c)) + eps, 0, 1)
/// phi(c) = (macs / macs_max, params / params_max, depth fraction, mean
/// active ratio), so the largest config scores 1 in every feature; w is a
/// per-task convex weight; eps ~ N(0, noise_sd) from oracle_noise().
struct SyntheticDbConfig {
  int train_tasks = 8;
  int val_tasks = 0;
  int test_tasks = 2;
  int pairs_per_task = 100;
  int pool_size = 2000;
  int num_classes = 10;
  double noise_sd = 0.01;
  std::uint64_t oracle_seed = 0;
  Metadata describe() const;
};

std::vector<double> oracle_features(const SearchSpaceSpec& spec, const ArchConfig& config);
/// Standard normal draw: splitmix64 of (seed, task, pair) into two uniforms,
/// then Box-Muller (cosine branch).
double oracle_noise(std::uint64_t seed, int task, int pair);
double oracle_accuracy(const SearchSpaceSpec& spec, const TaskRecord& task, const ArchConfig& config,
                       double noise_sd, std::uint64_t seed, int pair);

TaskDb make_synthetic_db(const SearchSpaceSpec& spec, const SyntheticDbConfig& config);

/// Encodes every pair of the selected tasks against its teacher.
std::vector<EncodedTask> encode_tasks(const TaskDb& db, const std::filesystem::path& db_path, const NoiseProbe& probe,
                                      const std::vector<std::string>& roles);

/// Text form of an accuracy as stored in the database (6 decimals).
std::string format_accuracy(double accuracy);

/// splitmix64-based seed derivation; stable across platforms.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace kdnas
