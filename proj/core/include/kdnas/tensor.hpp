// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace kdnas {

/// Dense row-major tensor of doubles. Shapes are small (rank <= 4), so the
/// shape lives in a plain vector.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> data);

  const std::vector<int>& shape() const noexcept { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

/// Named tensors in a deterministic (lexicographic) order.
using ParameterTable = std::map<std::string, Tensor>;

std::size_t total_numel(const ParameterTable& table);

}  // namespace kdnas
