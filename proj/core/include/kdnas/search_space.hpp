// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace kdnas {

struct InputShape {
  int channels = 3;
  int height = 64;
  int width = 64;

  friend bool operator==(const InputShape&, const InputShape&) = default;
};

/// How a depth choice maps to a layer count. In additive mode the choice is
/// added to a per-stage base depth.
enum class DepthMode { Absolute, Additive };

/// Factorized hierarchical ResNet-style search space: each stage picks a
/// depth, and every layer of the stage except the last picks a width ratio
/// of the stage's base width.
struct SearchSpaceSpec {
  int num_stages = 4;
  std::vector<int> depth_choices{1, 2, 3, 4};
  std::vector<int> base_widths{32, 64, 128, 256};
  std::vector<double> ratio_choices{0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0};
  int max_layers_per_stage = 5;
  InputShape input_shape{};
  DepthMode mode = DepthMode::Absolute;
  /// Additive mode only: layer count per stage before the depth choice is added.
  std::vector<int> base_depths;
  /// Output channels of the stem convolution; 0 means base_widths[0].
  int stem_width = 0;

  /// 4 stages, depths {1..4}, widths [32,64,128,256], 8 ratios, 64x64 input.
  static SearchSpaceSpec paper_default();
  /// Additive depth {0,1,2} over ResNet50 stage depths, widths
  /// [256,512,1024,2048], ratios {0.65,0.8,1.0}, 256x256 input.
  static SearchSpaceSpec imagenet_preset();

  /// Throws ValidationError naming the first violated invariant.
  void validate() const;

  int layer_count(int stage, int depth_choice) const;
  int max_depth_choice() const;
  int stage_stem_channels() const { return stem_width > 0 ? stem_width : base_widths.at(0); }
  /// Channel count of a layer with the given ratio in the given stage.
  int layer_width(int stage, double ratio) const;
  std::size_t encoding_length() const;

  /// Stable key=value text, one key per line.
  std::string serialize() const;
  static SearchSpaceSpec parse(std::string_view text);
  /// Hex content hash of serialize().
  std::string hash() const;

  friend bool operator==(const SearchSpaceSpec&, const SearchSpaceSpec&) = default;
};

/// One point in the search space.
struct ArchConfig {
  /// Depth choice per stage (a value from depth_choices).
  std::vector<int> depths;
  /// Per stage, one ratio per active layer; the last entry is always 1.0.
  std::vector<std::vector<double>> ratios;

  /// Single-line form, e.g. `depths=2,1 ratios=0.5,1/1`.
  std::string serialize() const;
  static ArchConfig parse(std::string_view line);

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Lexicographic order on the serialized form; used for ranking tie-breaks.
bool serialized_less(const ArchConfig& a, const ArchConfig& b);

struct CostReport {
  std::int64_t macs = 0;
  std::int64_t params = 0;

  friend bool operator==(const CostReport&, const CostReport&) = default;
};

/// Upper bounds; an absent bound admits everything. Comparisons are strict.
struct CostBudget {
  std::optional<std::int64_t> max_macs;
  std::optional<std::int64_t> max_params;
};

/// Geometry of one residual block as instantiated for a config.
struct BlockPlan {
  int stage = 0;
  int layer = 0;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  int in_height = 0;
  int in_width = 0;
  int out_height = 0;
  int out_width = 0;
  /// 1x1 conv + norm shortcut. Present only on the entry block of a stage
  /// whose stride or channel count differs from the stage input, which keeps
  /// the set of shortcut parameters independent of the config.
  bool projection = false;
};

struct NetworkPlan {
  InputShape input;
  int stem_channels = 0;
  std::vector<std::vector<BlockPlan>> stages;
  int feature_channels = 0;
  int feature_height = 0;
  int feature_width = 0;
};

void validate_config(const SearchSpaceSpec& spec, const ArchConfig& config);

NetworkPlan plan_network(const SearchSpaceSpec& spec, const ArchConfig& config,
                         const InputShape& input);

ArchConfig sample(const SearchSpaceSpec& spec, std::uint64_t rng_seed);
ArchConfig sample(const SearchSpaceSpec& spec, std::mt19937_64& rng);
ArchConfig largest(const SearchSpaceSpec& spec);

std::vector<std::uint8_t> encode_onehot(const SearchSpaceSpec& spec, const ArchConfig& config);
ArchConfig decode_onehot(const SearchSpaceSpec& spec, const std::vector<std::uint8_t>& bits);
std::string bits_to_string(const std::vector<std::uint8_t>& bits);
std::vector<std::uint8_t> bits_from_string(std::string_view text);

/// Exact MACs and parameter count. Convolutions carry no bias; every norm
/// layer contributes a scale and a shift per channel. With num_classes > 0
/// the linear classifier (weights + bias) is included.
CostReport count_costs(const SearchSpaceSpec& spec, const ArchConfig& config,
                       const InputShape& input, int num_classes = 0);

bool within_budget(const CostReport& report, const CostBudget& budget);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string content_hash(std::string_view bytes);

}  // namespace kdnas
