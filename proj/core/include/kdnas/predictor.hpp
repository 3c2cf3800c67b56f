// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kdnas/dataset.hpp"
#include "kdnas/dual.hpp"
#include "kdnas/task_encoding.hpp"

namespace kdnas {

/// Differentiable scalar model over a flat parameter vector. Inputs are
/// indices into whatever sample store the implementation owns, so the
/// meta-learning engine below works for toy models and the real predictor
/// alike.
class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual std::size_t num_params() const = 0;
  virtual double predict(std::span<const double> phi, std::size_t input) const = 0;
  /// Adds weight * d/dphi (f(phi; input) - target)^2 to grad and returns
  /// weight * (f - target)^2.
  virtual double accumulate_sq_grad(std::span<const double> phi, std::size_t input, double target, double weight,
                                    std::span<double> grad) const = 0;
  /// Same on dual numbers; the tangent of grad is the Hessian applied to the
  /// tangent of phi.
  virtual Dual accumulate_sq_grad(std::span<const Dual> phi, std::size_t input, double target, double weight,
                                  std::span<Dual> grad) const = 0;
};

/// One episode for the engine: a single support pair (the teacher encoded as
/// its own student) and the query pairs scored by the outer loss.
struct MetaTask {
  std::size_t support = 0;
  double support_target = 0.0;
  std::vector<std::size_t> queries;
  std::vector<double> query_targets;
};

/// phi_{i+1} = phi_i - alpha * grad (f(support; phi_i) - target)^2, `steps` times.
std::vector<double> inner_adapt(const Regressor& model, std::span<const double> phi, std::span<const double> alpha,
                                std::size_t support, double target, int steps);

struct MetaGradient {
  double loss = 0.0;  // mean squared error over the queries, after adaptation
  std::vector<double> d_phi;
  std::vector<double> d_alpha;
};

/// Gradient of the post-adaptation query loss with respect to the initial
/// parameters and the per-parameter inner rates. Second-order by default;
/// `first_order` drops the Hessian terms. Throws AdaptationError on
/// non-finite gradients.
MetaGradient meta_gradient(const Regressor& model, std::span<const double> phi, std::span<const double> alpha,
                           const MetaTask& task, int inner_steps, bool first_order = false);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments for one parameter vector.
struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update at step `t` (1-based).
void adam_update(const AdamConfig& config, long t, std::span<double> params, std::span<const double> grad,
                 AdamMoments& moments);

struct PredictorConfig {
  EncoderDims dims;
  int inner_steps = 1;
  double meta_lr = 1e-3;
  double alpha_init = 1e-3;
  bool first_order = false;
  std::uint64_t seed = 0;
  std::uint64_t probe_seed = 0;
  std::string spec_hash;
};

struct PredictorState {
  PredictorConfig config;
  std::vector<double> phi;
  std::vector<double> alpha;  // same layout as phi
  AdamMoments adam_phi;
  AdamMoments adam_alpha;
  long step = 0;

  ParamLayout layout() const { return ParamLayout(config.dims); }
};

/// Glorot-uniform weights, zero biases, constant alpha.
PredictorState init_predictor(const PredictorConfig& config);

/// The distillation-aware predictor as a Regressor over borrowed features.
class PairRegressor final : public Regressor {
 public:
  PairRegressor(const ParamLayout& layout, std::vector<const PairFeatures*> inputs);

  std::size_t num_params() const override { return layout_->size(); }
  double predict(std::span<const double> phi, std::size_t input) const override;
  double accumulate_sq_grad(std::span<const double> phi, std::size_t input, double target, double weight,
                            std::span<double> grad) const override;
  Dual accumulate_sq_grad(std::span<const Dual> phi, std::size_t input, double target, double weight,
                          std::span<Dual> grad) const override;

 private:
  const ParamLayout* layout_;
  std::vector<const PairFeatures*> inputs_;
};

/// Regression head over the fused embedding, with the state's own phi.
double predict(const PredictorState& state, const PairFeatures& features);
/// Remap, encode and predict in one go.
double predict(const PredictorState& state, const ArchConfig& student, const StagedNetwork& teacher,
               const NoiseProbe& probe);

/// The state with phi replaced by its teacher-guided adaptation.
PredictorState adapt(const PredictorState& state, const PairFeatures& teacher_pair, double teacher_accuracy);

/// Meta-test adaptation to a new teacher: one evaluation pass of the teacher
/// over `val` gives its accuracy, then the inner steps run against it.
/// Throws ValidationError on an empty split.
PredictorState adapt_to_unseen(const PredictorState& state, const StagedNetwork& teacher, const NoiseProbe& probe,
                               const Dataset& val, double* teacher_accuracy = nullptr);

struct TaskBatch {
  const PairFeatures* teacher_pair = nullptr;
  double teacher_accuracy = 0.0;
  std::vector<const PairFeatures*> queries;
  std::vector<double> accuracies;
};

/// One outer update over a meta-batch: mean of per-task meta gradients, then
/// Adam on phi and alpha. Returns the mean outer loss. Throws UsageError on
/// an empty batch or a task without queries.
double meta_step(PredictorState& state, const std::vector<TaskBatch>& batch);

/// Mean Spearman correlation between adapted predictions and measured
/// accuracies over `tasks`.
double validation_src(const PredictorState& state, const std::vector<EncodedTask>& tasks);

struct MetaSchedule {
  int iterations = 500;
  int meta_batch = 8;
  int queries_per_task = 50;
  int eval_every = 25;
  std::uint64_t seed = 0;
  /// When set, the best state is written here on every improvement.
  std::filesystem::path checkpoint;
};

struct MetaTrainRecord {
  int step = 0;
  double loss = 0.0;  // mean outer loss of the last step (0 at step 0)
  double val_src = 0.0;
};

struct MetaTrainResult {
  PredictorState best;
  PredictorState last;
  int best_step = 0;
  double best_val_src = 0.0;
  std::vector<MetaTrainRecord> history;
};

using MetaTrainCallback = std::function<void(const MetaTrainRecord&)>;

/// Episodic training with model selection on the validation tasks.
MetaTrainResult meta_train(const PredictorState& initial, const std::vector<EncodedTask>& train,
                           const std::vector<EncodedTask>& val, const MetaSchedule& schedule,
                           const MetaTrainCallback& on_eval = {});

/// Writes `<stem>.bin` (phi and alpha per named block, Adam moments) and a
/// `<stem>.json` manifest.
void save_predictor(const PredictorState& state, const std::filesystem::path& stem);
PredictorState load_predictor(const std::filesystem::path& stem);

}  // namespace kdnas
