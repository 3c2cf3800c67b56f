// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kdnas/network.hpp"

namespace kdnas {

/// Fixed Gaussian input fed to every network whose behaviour we embed. It is
/// generated once from a seed and reused bit-for-bit everywhere.
struct NoiseProbe {
  Tensor z;
  std::uint64_t seed = 0;

  static NoiseProbe make(const InputShape& shape, std::uint64_t seed, int batch = 1);
};

/// Last-stage feature map of `net` on the probe, averaged over batch and
/// space: a C-vector. Throws EmbeddingError on NaN/Inf.
std::vector<double> pooled_last_stage(const StagedNetwork& net, const NoiseProbe& probe);

/// pooled_last_stage rescaled to unit L2 norm. Keeps the functional inputs
/// on the same footing as the sparse one-hot whatever the channel count or
/// the scale of deep random-init residual stacks.
std::vector<double> probe_features(const StagedNetwork& net, const NoiseProbe& probe);

/// Everything the predictor consumes for one (student, teacher) pair. None of
/// it depends on predictor parameters.
struct PairFeatures {
  std::vector<double> onehot;
  std::vector<double> student;
  std::vector<double> teacher;
};

/// Caches the teacher's probe features; encodes students against it.
class TeacherEncoder {
 public:
  TeacherEncoder(const StagedNetwork& teacher, const NoiseProbe& probe);

  /// Remaps the teacher onto `student` and embeds the result.
  PairFeatures encode(const ArchConfig& student) const;
  /// The teacher encoded as its own student (identity remap).
  PairFeatures encode_teacher() const;

  const StagedNetwork& teacher() const noexcept { return *teacher_; }
  const std::vector<double>& teacher_features() const noexcept { return teacher_features_; }

 private:
  const StagedNetwork* teacher_;
  const NoiseProbe* probe_;
  std::vector<double> teacher_features_;
};

/// Sizes of the projection layers. sigma_layers is 1 or 2.
struct EncoderDims {
  std::size_t onehot = 0;
  std::size_t feature = 0;
  std::size_t embed = 32;
  std::size_t hidden = 128;
  int sigma_layers = 2;

  friend bool operator==(const EncoderDims&, const EncoderDims&) = default;
};

/// Offsets of the named blocks inside the flat predictor parameter vector:
/// q_a.{weight,bias}, q_f.{weight,bias}, sigma.{0,1}.{weight,bias},
/// head.{weight,bias}. Weights are row-major (out, in).
class ParamLayout {
 public:
  struct Block {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const { return rows * cols; }
  };

  explicit ParamLayout(const EncoderDims& dims);

  const EncoderDims& dims() const noexcept { return dims_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  const Block& block(const std::string& name) const;
  std::size_t size() const noexcept { return size_; }

 private:
  EncoderDims dims_;
  std::vector<Block> blocks_;
  std::size_t size_ = 0;
};

/// Architecture embedding, student and teacher functional embeddings, and
/// the fused distillation-aware vector.
struct TaskEmbedding {
  std::vector<double> h_a;
  std::vector<double> h_zs;
  std::vector<double> h_zt;
  std::vector<double> fused;
};

/// Affine map y = W x + b over a block pair of the parameter vector.
std::vector<double> apply_projection(const ParamLayout& layout, std::span<const double> phi,
                                     const std::string& name, std::span<const double> x);

/// q_a applied to a one-hot architecture encoding.
std::vector<double> arch_embedding(const ParamLayout& layout, std::span<const double> phi,
                                   std::span<const double> onehot);
/// q_f applied to the probe features of `net`.
std::vector<double> functional_embedding(const ParamLayout& layout, std::span<const double> phi,
                                         const StagedNetwork& net, const NoiseProbe& probe);

TaskEmbedding embed(const ParamLayout& layout, std::span<const double> phi, const PairFeatures& features);

/// Adds d<d_fused, fused>/dphi to `grad` (vector-Jacobian product of the
/// fused output with respect to every projection parameter).
void fused_vjp(const ParamLayout& layout, std::span<const double> phi, const PairFeatures& features,
               std::span<const double> d_fused, std::span<double> grad);

/// Remap, embed student and teacher, project the architecture, fuse.
TaskEmbedding encode_task(const ArchConfig& student, const StagedNetwork& teacher, const NoiseProbe& probe,
                          const ParamLayout& layout, std::span<const double> phi);

/// A task with every pair pre-encoded against its teacher.
struct EncodedTask {
  std::string id;
  PairFeatures teacher_pair;
  double teacher_accuracy = 0.0;
  std::vector<ArchConfig> configs;
  std::vector<PairFeatures> features;
  std::vector<double> accuracies;
};

/// Embedding dump: binary vectors (tensor archive) plus a JSON manifest with
/// the probe seed and dimensions, for golden-file regression tests.
void write_embedding_dump(const std::filesystem::path& stem, const std::vector<TaskEmbedding>& embeddings,
                          std::uint64_t probe_seed);
std::vector<TaskEmbedding> read_embedding_dump(const std::filesystem::path& stem);

}  // namespace kdnas
