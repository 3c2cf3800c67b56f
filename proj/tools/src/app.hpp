// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "kdnas/error.hpp"

namespace kdnas::cli {

/// Process exit status for each error category (0 is success).
int exit_code(ErrorKind kind);

/// Parses argv and runs one command. Never throws; returns the exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kdnas::cli
