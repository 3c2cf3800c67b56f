// SPDX-License-Identifier: Apache-2.0
#include "kdnas/error.hpp"

namespace kdnas {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Decode: return "decode";
    case ErrorKind::Remap: return "remap";
    case ErrorKind::Embedding: return "embedding";
    case ErrorKind::Adaptation: return "adaptation";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Io: return "io";
    case ErrorKind::Internal: return "internal";
  }
  return "unknown";
}

}  // namespace kdnas
