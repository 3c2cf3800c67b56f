// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kdnas/dataset.hpp"
#include "kdnas/network.hpp"

namespace kdnas {

/// Argument order of the soft cross-entropy term.
enum class SoftTermOrder {
  TeacherStudent,  // H(p_t, p_s) = -sum p_t log p_s
  StudentTeacher,  // H(p_s, p_t) = -sum p_s log p_t
};

/// Momentum SGD with cosine decay over the epochs.
struct SgdConfig {
  int epochs = 50;
  double lr = 5e-2;
  int batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct KDConfig {
  double temperature = 6.0;
  double alpha = 0.5;
  SoftTermOrder soft_order = SoftTermOrder::TeacherStudent;
  SgdConfig sgd;

  void validate() const;
};

/// Temperature softmax with max subtraction. Throws ValidationError on
/// non-finite logits or T <= 0.
std::vector<double> soften(std::span<const double> logits, double temperature);

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;  // d loss / d student logits, same shape as the logits
};

/// alpha * H(y, p_s^T) + (1 - alpha) * soft term, averaged over the batch.
/// Both terms use temperature-softened student probabilities; there is no
/// T^2 rescaling.
LossAndGrad kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const int> labels,
                    const KDConfig& config);

/// Plain cross-entropy at T = 1.
LossAndGrad cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Top-1 accuracy in eval mode. Throws ValidationError on an empty split.
double evaluate(const StagedNetwork& net, const Dataset& split);
/// Eval-mode logits for every example, batched.
Tensor predict_logits(const StagedNetwork& net, const Dataset& split, int batch_size = 256);

struct TrainResult {
  double best_val_accuracy = 0.0;
  int best_epoch = 0;  // 0 means the initial network was never beaten
  std::vector<double> val_history;
  double seconds = 0.0;
};

/// Supervised training (teacher recipe). The network ends at its best
/// validation epoch.
TrainResult train_supervised(StagedNetwork& net, const Dataset& train, const Dataset& val, const SgdConfig& config);

struct DistillResult {
  StagedNetwork student;
  TrainResult train;
};

/// Freshly initialised student (seeded by config.sgd.seed) trained with
/// kd_loss against the frozen teacher; returns the best-epoch student and
/// its validation accuracy.
DistillResult distill(const StagedNetwork& teacher, const ArchConfig& student_config, const Dataset& train,
                      const Dataset& val, const KDConfig& config);

}  // namespace kdnas
