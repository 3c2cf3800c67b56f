// SPDX-License-Identifier: Apache-2.0
#include "kdnas/remapping.hpp"

#include <fmt/format.h>

#include "kdnas/error.hpp"

namespace kdnas {
namespace {

ParameterTable slice_table(const ParameterTable& source, const ParameterTable& target_shapes, const char* what) {
  ParameterTable out;
  for (const auto& [name, shaped] : target_shapes) {
    auto it = source.find(name);
    if (it == source.end()) {
      throw InternalError(fmt::format("teacher {} table has no '{}' for the student", what, name));
    }
    out.emplace(name, leading_slice(it->second, shaped.shape()));
  }
  return out;
}

}  // namespace

Tensor leading_slice(const Tensor& source, const std::vector<int>& shape) {
  if (shape.size() != source.rank()) {
    throw InternalError(fmt::format("cannot slice {} to rank-{} shape {}", shape_string(source.shape()),
                                    shape.size(), shape_string(shape)));
  }
  for (std::size_t a = 0; a < shape.size(); ++a) {
    if (shape[a] > source.dim(a)) {
      throw InternalError(fmt::format("cannot slice {} to larger shape {}", shape_string(source.shape()),
                                      shape_string(shape)));
    }
  }
  Tensor out(shape);
  if (out.empty()) return out;
  const std::size_t rank = shape.size();
  // Row-major strides of the source; walk the target index odometer-style.
  std::vector<std::size_t> stride(rank, 1);
  for (std::size_t a = rank; a-- > 1;) stride[a - 1] = stride[a] * static_cast<std::size_t>(source.dim(a));
  std::vector<int> idx(rank, 0);
  const int inner = rank ? shape.back() : 1;
  std::size_t dst = 0;
  while (true) {
    std::size_t src = 0;
    for (std::size_t a = 0; a + 1 < rank; ++a) src += idx[a] * stride[a];
    for (int k = 0; k < inner; ++k) out[dst++] = source[src + k];
    if (rank < 2) break;
    std::size_t a = rank - 1;
    while (a-- > 0) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
    if (a == static_cast<std::size_t>(-1)) break;
  }
  return out;
}

RemapFeasibility validate_remap_feasibility(const SearchSpaceSpec& spec, const ArchConfig& teacher_config,
                                            const ArchConfig& student_config) {
  validate_config(spec, teacher_config);
  validate_config(spec, student_config);
  RemapFeasibility result;
  for (int s = 0; s < spec.num_stages; ++s) {
    const auto& tr = teacher_config.ratios[s];
    const auto& sr = student_config.ratios[s];
    if (sr.size() > tr.size()) {
      result.violations.push_back(
          fmt::format("stage {}: student has {} layers, teacher has {}", s, sr.size(), tr.size()));
      continue;
    }
    for (std::size_t o = 0; o < sr.size(); ++o) {
      const int sw = spec.layer_width(s, sr[o]);
      const int tw = spec.layer_width(s, tr[o]);
      if (sw > tw) {
        result.violations.push_back(
            fmt::format("stage {} layer {}: student width {} exceeds teacher width {}", s, o, sw, tw));
      }
    }
  }
  result.feasible = result.violations.empty();
  return result;
}

RemappedState remap(const StagedNetwork& teacher, const ArchConfig& student_config) {
  const auto& spec = teacher.spec();
  const auto check = validate_remap_feasibility(spec, teacher.config(), student_config);
  if (!check.feasible) throw RemapError("cannot remap teacher onto student: " + check.violations.front());
  RemappedState state;
  state.params = slice_table(teacher.params(),
                             StagedNetwork::parameter_shapes(spec, student_config, teacher.num_classes()), "parameter");
  state.buffers = slice_table(teacher.buffers(), StagedNetwork::buffer_shapes(spec, student_config), "buffer");
  return state;
}

StagedNetwork remap_network(const StagedNetwork& teacher, const ArchConfig& student_config) {
  auto state = remap(teacher, student_config);
  return StagedNetwork::from_state(teacher.spec(), student_config, teacher.num_classes(), std::move(state.params),
                                   std::move(state.buffers));
}

}  // namespace kdnas
