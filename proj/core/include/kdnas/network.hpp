// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kdnas/search_space.hpp"
#include "kdnas/tensor.hpp"

namespace kdnas {

enum class Mode { Train, Eval };

/// Activations recorded by a forward pass, consumed by backward().
struct ForwardTape;

/// Residual network instantiated from an ArchConfig: a stem, one group of
/// two-conv basic blocks per stage, and a pooled linear classifier.
///
/// Parameters are named `stem.conv.weight`, `stage{s}.layer{o}.conv1.weight`,
/// `stage{s}.layer{o}.bn2.scale`, `stage{s}.layer{o}.shortcut.weight`,
/// `head.weight`, ... with 0-based stage and layer indices. Norm running
/// moments live in a separate buffer table under the same prefixes.
class StagedNetwork {
 public:
  static StagedNetwork build(const SearchSpaceSpec& spec, const ArchConfig& config, int num_classes,
                             std::uint64_t rng_seed);
  /// Wraps an existing state. Throws ValidationError if a tensor is missing
  /// or has the wrong shape.
  static StagedNetwork from_state(const SearchSpaceSpec& spec, const ArchConfig& config, int num_classes,
                                  ParameterTable params, ParameterTable buffers);

  /// Expected parameter and buffer shapes for a config.
  static ParameterTable parameter_shapes(const SearchSpaceSpec& spec, const ArchConfig& config,
                                         int num_classes);
  static ParameterTable buffer_shapes(const SearchSpaceSpec& spec, const ArchConfig& config);

  const SearchSpaceSpec& spec() const noexcept { return spec_; }
  const ArchConfig& config() const noexcept { return config_; }
  const NetworkPlan& plan() const noexcept { return plan_; }
  int num_classes() const noexcept { return num_classes_; }

  ParameterTable& params() noexcept { return params_; }
  const ParameterTable& params() const noexcept { return params_; }
  ParameterTable& buffers() noexcept { return buffers_; }
  const ParameterTable& buffers() const noexcept { return buffers_; }
  std::size_t parameter_count() const { return total_numel(params_); }

  /// Logits of shape (N, num_classes). Train mode normalizes with batch
  /// statistics and updates the running moments.
  Tensor forward(const Tensor& input, Mode mode, ForwardTape* tape = nullptr);
  /// Eval-mode logits; never mutates the network.
  Tensor predict(const Tensor& input) const;
  /// Gradients of every parameter given dLoss/dLogits for the taped pass.
  ParameterTable backward(const ForwardTape& tape, const Tensor& grad_logits) const;

  /// Eval-mode output of every stage, in order.
  std::vector<Tensor> forward_features(const Tensor& input) const;
  Tensor run_stem(const Tensor& input) const;
  Tensor run_stage(int stage, const Tensor& input) const;
  Tensor run_head(const Tensor& features) const;

 private:
  StagedNetwork(SearchSpaceSpec spec, ArchConfig config, int num_classes);
  void check_input(const Tensor& input) const;
  Tensor forward_impl(const Tensor& input, Mode mode, ForwardTape* tape, bool update_stats);

  SearchSpaceSpec spec_;
  ArchConfig config_;
  NetworkPlan plan_;
  int num_classes_ = 0;
  ParameterTable params_;
  ParameterTable buffers_;
};

struct ForwardTape {
  struct Norm {
    Tensor xhat;
    std::vector<double> inv_std;
  };
  struct Block {
    Tensor input;
    Tensor relu1;
    Tensor output;
    Norm bn1;
    Norm bn2;
    Norm shortcut_bn;
  };
  Mode mode = Mode::Eval;
  Tensor input;
  Tensor stem_out;
  Norm stem_bn;
  std::vector<std::vector<Block>> blocks;
  Tensor pooled;
};

/// Post-ReLU activations of a taped pass flattened per sample: row n holds
/// every rectified unit of sample n (used by activation-pattern proxies).
std::vector<std::vector<std::uint8_t>> activation_codes(const ForwardTape& tape);

/// Key/value metadata recorded in a checkpoint manifest.
using Metadata = std::map<std::string, std::string>;

/// Writes `<stem>.json` (manifest) and `<stem>.bin` (named tensors).
/// Returns the content hash of the tensor archive.
std::string save_checkpoint(const StagedNetwork& net, const std::filesystem::path& stem,
                            const Metadata& metadata = {});
/// Content hash save_checkpoint() would return, without writing anything.
std::string checkpoint_hash(const StagedNetwork& net);
StagedNetwork load_checkpoint(const std::filesystem::path& stem, Metadata* metadata = nullptr);

}  // namespace kdnas
