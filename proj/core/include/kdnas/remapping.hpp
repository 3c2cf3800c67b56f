// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "kdnas/network.hpp"

namespace kdnas {

struct RemapFeasibility {
  bool feasible = true;
  /// One line per violated stage/layer, empty when feasible.
  std::vector<std::string> violations;
};

/// True iff every student stage is no deeper than the teacher's and every
/// student layer is no wider than the teacher layer at the same index.
RemapFeasibility validate_remap_feasibility(const SearchSpaceSpec& spec, const ArchConfig& teacher_config,
                                            const ArchConfig& student_config);

struct RemappedState {
  ParameterTable params;
  ParameterTable buffers;
};

/// Depth-then-width parameter inheritance: student layer o of stage m takes
/// teacher layer o of stage m, and every tensor is the leading-index slice of
/// the teacher tensor along each axis. Norm running moments are sliced too.
/// Throws RemapError naming the first infeasible stage/layer.
RemappedState remap(const StagedNetwork& teacher, const ArchConfig& student_config);

/// remap() wrapped into a ready-to-run network.
StagedNetwork remap_network(const StagedNetwork& teacher, const ArchConfig& student_config);

/// Leading-index slice of `source` to `shape` (every dim must be <= source's).
Tensor leading_slice(const Tensor& source, const std::vector<int>& shape);

}  // namespace kdnas
