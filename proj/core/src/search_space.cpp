// SPDX-License-Identifier: Apache-2.0
#include "kdnas/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "kdnas/error.hpp"
#include "text_util.hpp"

namespace kdnas {
namespace {

constexpr double kRatioTol = 1e-9;

int ratio_index(const SearchSpaceSpec& spec, double ratio) {
  for (std::size_t i = 0; i < spec.ratio_choices.size(); ++i) {
    if (std::abs(spec.ratio_choices[i] - ratio) < kRatioTol) return static_cast<int>(i);
  }
  return -1;
}

int depth_index(const SearchSpaceSpec& spec, int depth) {
  auto it = std::find(spec.depth_choices.begin(), spec.depth_choices.end(), depth);
  return it == spec.depth_choices.end() ? -1 : static_cast<int>(it - spec.depth_choices.begin());
}

int conv_out(int in, int stride) { return (in + 2 - 3) / stride + 1; }

}  // namespace

SearchSpaceSpec SearchSpaceSpec::paper_default() { return SearchSpaceSpec{}; }

SearchSpaceSpec SearchSpaceSpec::imagenet_preset() {
  SearchSpaceSpec spec;
  spec.num_stages = 4;
  spec.depth_choices = {0, 1, 2};
  spec.base_widths = {256, 512, 1024, 2048};
  spec.ratio_choices = {0.65, 0.8, 1.0};
  spec.mode = DepthMode::Additive;
  spec.base_depths = {3, 4, 6, 3};
  spec.max_layers_per_stage = 8;
  spec.input_shape = {3, 256, 256};
  spec.stem_width = 64;
  return spec;
}

void SearchSpaceSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("invalid search space: " + msg); };
  if (num_stages < 1) fail("num_stages must be >= 1");
  if (static_cast<int>(base_widths.size()) != num_stages) {
    fail(fmt::format("base_widths has {} entries, num_stages is {}", base_widths.size(), num_stages));
  }
  for (int w : base_widths) {
    if (w < 1) fail("base_widths must be positive");
  }
  if (depth_choices.empty()) fail("depth_choices is empty");
  if (!std::is_sorted(depth_choices.begin(), depth_choices.end()) ||
      std::adjacent_find(depth_choices.begin(), depth_choices.end()) != depth_choices.end()) {
    fail("depth_choices must be strictly ascending");
  }
  if (max_layers_per_stage < 1) fail("max_layers_per_stage must be >= 1");
  if (mode == DepthMode::Additive) {
    if (static_cast<int>(base_depths.size()) != num_stages) {
      fail("additive mode needs one base depth per stage");
    }
  }
  for (int s = 0; s < num_stages; ++s) {
    for (int d : depth_choices) {
      if (mode == DepthMode::Absolute && d < 1) fail("absolute depth choices must be >= 1");
      if (mode == DepthMode::Additive && d < 0) fail("additive depth choices must be >= 0");
      int layers = layer_count(s, d);
      if (layers < 1) fail(fmt::format("stage {} has a depth choice yielding {} layers", s, layers));
      if (layers > max_layers_per_stage) {
        fail(fmt::format("depth choice {} yields {} layers in stage {}, exceeding max_layers_per_stage={}",
                         d, layers, s, max_layers_per_stage));
      }
    }
  }
  if (ratio_choices.empty()) fail("ratio_choices is empty");
  for (std::size_t i = 0; i < ratio_choices.size(); ++i) {
    double r = ratio_choices[i];
    if (!(r > 0.0 && r <= 1.0)) fail(fmt::format("ratio {} outside (0, 1]", r));
    if (i > 0 && !(ratio_choices[i - 1] < r)) fail("ratio_choices must be strictly ascending");
  }
  if (std::abs(ratio_choices.back() - 1.0) > kRatioTol) fail("ratio_choices must contain 1.0");
  if (input_shape.channels < 1 || input_shape.height < 1 || input_shape.width < 1) {
    fail("input_shape must be positive");
  }
  if (stem_width < 0) fail("stem_width must be >= 0");
}

int SearchSpaceSpec::layer_count(int stage, int depth_choice) const {
  if (mode == DepthMode::Additive) return base_depths.at(stage) + depth_choice;
  return depth_choice;
}

int SearchSpaceSpec::max_depth_choice() const { return depth_choices.back(); }

int SearchSpaceSpec::layer_width(int stage, double ratio) const {
  long w = std::lround(ratio * base_widths.at(stage));
  return static_cast<int>(std::max(1L, w));
}

std::size_t SearchSpaceSpec::encoding_length() const {
  return static_cast<std::size_t>(num_stages) *
         (depth_choices.size() + static_cast<std::size_t>(max_layers_per_stage) * ratio_choices.size());
}

std::string SearchSpaceSpec::serialize() const {
  std::string out;
  out += fmt::format("num_stages={}\n", num_stages);
  out += fmt::format("depth_choices={}\n", detail::join(depth_choices));
  out += fmt::format("base_widths={}\n", detail::join(base_widths));
  out += fmt::format("ratio_choices={}\n", detail::join(ratio_choices));
  out += fmt::format("max_layers_per_stage={}\n", max_layers_per_stage);
  out += fmt::format("input_shape={},{},{}\n", input_shape.channels, input_shape.height, input_shape.width);
  out += fmt::format("mode={}\n", mode == DepthMode::Absolute ? "absolute" : "additive");
  out += fmt::format("base_depths={}\n", detail::join(base_depths));
  out += fmt::format("stem_width={}\n", stem_width);
  return out;
}

SearchSpaceSpec SearchSpaceSpec::parse(std::string_view text) {
  SearchSpaceSpec spec;
  std::map<std::string, bool> seen;
  for (auto raw : detail::split(text, '\n')) {
    auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError(fmt::format("search space line without '=': '{}'", line));
    }
    std::string key{detail::trim(line.substr(0, eq))};
    auto value = detail::trim(line.substr(eq + 1));
    seen[key] = true;
    if (key == "num_stages") {
      spec.num_stages = detail::parse_number<int>(value, key);
    } else if (key == "depth_choices") {
      spec.depth_choices = detail::parse_list<int>(value, key);
    } else if (key == "base_widths") {
      spec.base_widths = detail::parse_list<int>(value, key);
    } else if (key == "ratio_choices") {
      spec.ratio_choices = detail::parse_list<double>(value, key);
    } else if (key == "max_layers_per_stage") {
      spec.max_layers_per_stage = detail::parse_number<int>(value, key);
    } else if (key == "input_shape") {
      auto dims = detail::parse_list<int>(value, key);
      if (dims.size() != 3) throw ValidationError("input_shape needs channels,height,width");
      spec.input_shape = {dims[0], dims[1], dims[2]};
    } else if (key == "mode") {
      if (value == "absolute") {
        spec.mode = DepthMode::Absolute;
      } else if (value == "additive") {
        spec.mode = DepthMode::Additive;
      } else {
        throw ValidationError(fmt::format("unknown depth mode '{}'", value));
      }
    } else if (key == "base_depths") {
      spec.base_depths = detail::parse_list<int>(value, key);
    } else if (key == "stem_width") {
      spec.stem_width = detail::parse_number<int>(value, key);
    } else {
      throw ValidationError(fmt::format("unknown search space key '{}'", key));
    }
  }
  spec.validate();
  return spec;
}

std::string SearchSpaceSpec::hash() const { return content_hash(serialize()); }

std::string ArchConfig::serialize() const {
  std::vector<std::string> stages;
  stages.reserve(ratios.size());
  for (const auto& r : ratios) stages.push_back(detail::join(r));
  return fmt::format("depths={} ratios={}", detail::join(depths), fmt::join(stages, "/"));
}

ArchConfig ArchConfig::parse(std::string_view line) {
  line = detail::trim(line);
  auto space = line.find(' ');
  if (space == std::string_view::npos) throw ValidationError(fmt::format("malformed config '{}'", line));
  auto first = line.substr(0, space);
  auto second = detail::trim(line.substr(space + 1));
  if (first.substr(0, 7) != "depths=" || second.substr(0, 7) != "ratios=") {
    throw ValidationError(fmt::format("malformed config '{}'", line));
  }
  ArchConfig config;
  config.depths = detail::parse_list<int>(first.substr(7), "depth");
  for (auto stage : detail::split(second.substr(7), '/')) {
    config.ratios.push_back(detail::parse_list<double>(stage, "ratio"));
  }
  return config;
}

bool serialized_less(const ArchConfig& a, const ArchConfig& b) { return a.serialize() < b.serialize(); }

void validate_config(const SearchSpaceSpec& spec, const ArchConfig& config) {
  auto fail = [](const std::string& msg) { throw ValidationError("invalid config: " + msg); };
  if (static_cast<int>(config.depths.size()) != spec.num_stages) {
    fail(fmt::format("{} depths for {} stages", config.depths.size(), spec.num_stages));
  }
  if (config.ratios.size() != config.depths.size()) fail("ratios and depths differ in stage count");
  for (int s = 0; s < spec.num_stages; ++s) {
    int d = config.depths[s];
    if (depth_index(spec, d) < 0) fail(fmt::format("stage {} depth {} is not a depth choice", s, d));
    int layers = spec.layer_count(s, d);
    const auto& r = config.ratios[s];
    if (static_cast<int>(r.size()) != layers) {
      fail(fmt::format("stage {} has {} ratios for {} layers", s, r.size(), layers));
    }
    for (std::size_t o = 0; o < r.size(); ++o) {
      if (ratio_index(spec, r[o]) < 0) fail(fmt::format("stage {} layer {} ratio {} is not a ratio choice", s, o, r[o]));
    }
    if (std::abs(r.back() - 1.0) > kRatioTol) fail(fmt::format("stage {} last layer ratio must be 1", s));
  }
}

NetworkPlan plan_network(const SearchSpaceSpec& spec, const ArchConfig& config, const InputShape& input) {
  validate_config(spec, config);
  NetworkPlan plan;
  plan.input = input;
  plan.stem_channels = spec.stage_stem_channels();
  int channels = plan.stem_channels;
  int h = input.height;
  int w = input.width;
  for (int s = 0; s < spec.num_stages; ++s) {
    std::vector<BlockPlan> blocks;
    int stage_in = channels;
    const auto& ratios = config.ratios[s];
    for (std::size_t o = 0; o < ratios.size(); ++o) {
      BlockPlan b;
      b.stage = s;
      b.layer = static_cast<int>(o);
      b.in_channels = channels;
      b.out_channels = spec.layer_width(s, ratios[o]);
      b.stride = (o == 0 && s > 0) ? 2 : 1;
      b.in_height = h;
      b.in_width = w;
      b.out_height = conv_out(h, b.stride);
      b.out_width = conv_out(w, b.stride);
      b.projection = o == 0 && (b.stride != 1 || stage_in != spec.base_widths[s]);
      channels = b.out_channels;
      h = b.out_height;
      w = b.out_width;
      blocks.push_back(b);
    }
    plan.stages.push_back(std::move(blocks));
  }
  plan.feature_channels = channels;
  plan.feature_height = h;
  plan.feature_width = w;
  return plan;
}

ArchConfig sample(const SearchSpaceSpec& spec, std::mt19937_64& rng) {
  ArchConfig config;
  std::uniform_int_distribution<std::size_t> pick_depth(0, spec.depth_choices.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_ratio(0, spec.ratio_choices.size() - 1);
  for (int s = 0; s < spec.num_stages; ++s) {
    int d = spec.depth_choices[pick_depth(rng)];
    int layers = spec.layer_count(s, d);
    std::vector<double> ratios(layers, 1.0);
    for (int o = 0; o + 1 < layers; ++o) ratios[o] = spec.ratio_choices[pick_ratio(rng)];
    config.depths.push_back(d);
    config.ratios.push_back(std::move(ratios));
  }
  return config;
}

ArchConfig sample(const SearchSpaceSpec& spec, std::uint64_t rng_seed) {
  spec.validate();
  std::mt19937_64 rng(rng_seed);
  return sample(spec, rng);
}

ArchConfig largest(const SearchSpaceSpec& spec) {
  spec.validate();
  ArchConfig config;
  for (int s = 0; s < spec.num_stages; ++s) {
    int d = spec.max_depth_choice();
    config.depths.push_back(d);
    config.ratios.emplace_back(spec.layer_count(s, d), 1.0);
  }
  return config;
}

std::vector<std::uint8_t> encode_onehot(const SearchSpaceSpec& spec, const ArchConfig& config) {
  validate_config(spec, config);
  const std::size_t nd = spec.depth_choices.size();
  const std::size_t nr = spec.ratio_choices.size();
  const std::size_t stage_len = nd + static_cast<std::size_t>(spec.max_layers_per_stage) * nr;
  std::vector<std::uint8_t> bits(spec.encoding_length(), 0);
  for (int s = 0; s < spec.num_stages; ++s) {
    std::size_t base = static_cast<std::size_t>(s) * stage_len;
    bits[base + depth_index(spec, config.depths[s])] = 1;
    const auto& r = config.ratios[s];
    for (std::size_t o = 0; o < r.size(); ++o) {
      bits[base + nd + o * nr + ratio_index(spec, r[o])] = 1;
    }
  }
  return bits;
}

ArchConfig decode_onehot(const SearchSpaceSpec& spec, const std::vector<std::uint8_t>& bits) {
  if (bits.size() != spec.encoding_length()) {
    throw DecodeError(fmt::format("encoding has length {}, expected {}", bits.size(), spec.encoding_length()));
  }
  const std::size_t nd = spec.depth_choices.size();
  const std::size_t nr = spec.ratio_choices.size();
  const std::size_t stage_len = nd + static_cast<std::size_t>(spec.max_layers_per_stage) * nr;
  auto hot_index = [&](std::size_t begin, std::size_t len, int& count) {
    int idx = -1;
    count = 0;
    for (std::size_t i = 0; i < len; ++i) {
      std::uint8_t b = bits[begin + i];
      if (b > 1) throw DecodeError(fmt::format("bit {} has value {}", begin + i, static_cast<int>(b)));
      if (b) {
        ++count;
        idx = static_cast<int>(i);
      }
    }
    return idx;
  };
  ArchConfig config;
  for (int s = 0; s < spec.num_stages; ++s) {
    std::size_t base = static_cast<std::size_t>(s) * stage_len;
    int count = 0;
    int di = hot_index(base, nd, count);
    if (count != 1) throw DecodeError(fmt::format("stage {} depth block has {} set bits, expected 1", s, count));
    int d = spec.depth_choices[di];
    int layers = spec.layer_count(s, d);
    std::vector<double> ratios;
    for (int o = 0; o < spec.max_layers_per_stage; ++o) {
      int ri = hot_index(base + nd + static_cast<std::size_t>(o) * nr, nr, count);
      if (o < layers) {
        if (count != 1) {
          throw DecodeError(fmt::format("stage {} layer {} ratio block has {} set bits, expected 1", s, o, count));
        }
        ratios.push_back(spec.ratio_choices[ri]);
      } else if (count != 0) {
        throw DecodeError(fmt::format("stage {} inactive layer {} ratio block is not all-zero", s, o));
      }
    }
    if (std::abs(ratios.back() - 1.0) > kRatioTol) {
      throw DecodeError(fmt::format("stage {} last layer ratio block does not encode 1.0", s));
    }
    config.depths.push_back(d);
    config.ratios.push_back(std::move(ratios));
  }
  return config;
}

std::string bits_to_string(const std::vector<std::uint8_t>& bits) {
  std::string out;
  out.reserve(bits.size());
  for (auto b : bits) out.push_back(b ? '1' : '0');
  return out;
}

std::vector<std::uint8_t> bits_from_string(std::string_view text) {
  std::vector<std::uint8_t> bits;
  bits.reserve(text.size());
  for (char c : text) {
    if (c != '0' && c != '1') throw DecodeError(fmt::format("invalid bit character '{}'", c));
    bits.push_back(c == '1' ? 1 : 0);
  }
  return bits;
}

CostReport count_costs(const SearchSpaceSpec& spec, const ArchConfig& config, const InputShape& input,
                       int num_classes) {
  const NetworkPlan plan = plan_network(spec, config, input);
  CostReport r;
  const std::int64_t spatial = static_cast<std::int64_t>(input.height) * input.width;
  r.macs += 9LL * input.channels * plan.stem_channels * spatial;
  r.params += 9LL * input.channels * plan.stem_channels + 2LL * plan.stem_channels;
  for (const auto& stage : plan.stages) {
    for (const auto& b : stage) {
      const std::int64_t out_spatial = static_cast<std::int64_t>(b.out_height) * b.out_width;
      const std::int64_t cin = b.in_channels;
      const std::int64_t cout = b.out_channels;
      r.macs += 9 * cin * cout * out_spatial + 9 * cout * cout * out_spatial;
      r.params += 9 * cin * cout + 9 * cout * cout + 4 * cout;
      if (b.projection) {
        r.macs += cin * cout * out_spatial;
        r.params += cin * cout + 2 * cout;
      }
    }
  }
  if (num_classes > 0) {
    r.macs += static_cast<std::int64_t>(plan.feature_channels) * num_classes;
    r.params += static_cast<std::int64_t>(plan.feature_channels) * num_classes + num_classes;
  }
  return r;
}

bool within_budget(const CostReport& report, const CostBudget& budget) {
  if (budget.max_macs && !(report.macs < *budget.max_macs)) return false;
  if (budget.max_params && !(report.params < *budget.max_params)) return false;
  return true;
}

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace kdnas
