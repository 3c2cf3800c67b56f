// SPDX-License-Identifier: Apache-2.0
#include "kdnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdnas/error.hpp"

namespace kdnas {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw InternalError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw InternalError("tensor data size " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::size_t total_numel(const ParameterTable& table) {
  return std::accumulate(table.begin(), table.end(), std::size_t{0},
                         [](std::size_t acc, const auto& kv) { return acc + kv.second.size(); });
}

}  // namespace kdnas
