// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "kdnas/error.hpp"

namespace kdnas::detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

template <class T>
T parse_number(std::string_view text, std::string_view what) {
  text = trim(text);
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ValidationError(fmt::format("cannot parse {} from '{}'", what, text));
  }
  return value;
}

template <class T>
std::vector<T> parse_list(std::string_view text, std::string_view what) {
  std::vector<T> out;
  text = trim(text);
  if (text.empty()) return out;
  for (auto part : split(text, ',')) out.push_back(parse_number<T>(part, what));
  return out;
}

template <class T>
std::string join(const std::vector<T>& values, std::string_view sep = ",") {
  return fmt::format("{}", fmt::join(values, sep));
}

}  // namespace kdnas::detail
