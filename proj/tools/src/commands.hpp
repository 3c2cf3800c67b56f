// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "config.hpp"

namespace kdnas::cli {

struct Invocation {
  std::string command;
  std::map<std::string, std::string> args;  // empty value = not given
  std::vector<std::string> archs;
};

struct Context {
  Invocation inv;
  RunConfig cfg;
  std::ostream& out;
  std::ostream& err;
  std::map<std::string, std::string> inputs;  // role -> content hash

  bool has(const std::string& name) const;
  const std::string& arg(const std::string& name) const;
  /// Throws UsageError naming the missing flag.
  const std::string& need(const std::string& name) const;
};

/// Command names and the flags each accepts (besides the common ones).
const std::map<std::string, std::vector<std::string>>& command_flags();

void run_command(Context& ctx);

}  // namespace kdnas::cli
