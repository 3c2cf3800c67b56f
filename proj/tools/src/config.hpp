// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace kdnas::cli {

enum class Preset { Paper, Mini };

struct KeyInfo {
  std::string name;
  std::string paper;
  std::string mini;
  std::string help;
};

/// Every recognised configuration key with its paper and desk-scale default.
const std::vector<KeyInfo>& config_keys();

/// Flat key = value settings. Unknown keys are rejected up front.
class RunConfig {
 public:
  explicit RunConfig(Preset preset = Preset::Paper);

  /// `key = value` lines; '#' starts a comment; blank lines ignored.
  void load_file(const std::filesystem::path& path);
  void load_text(std::string_view text, const std::string& origin);
  /// "key=value".
  void apply_override(std::string_view assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::int64_t get_i64(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::string valid_keys_text();

}  // namespace kdnas::cli
