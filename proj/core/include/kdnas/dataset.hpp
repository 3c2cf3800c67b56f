// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kdnas/search_space.hpp"
#include "kdnas/tensor.hpp"

namespace kdnas {

/// Images (N, C, H, W) with integer labels in [0, num_classes).
struct Dataset {
  std::string id;
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  InputShape shape() const;
  /// Throws ValidationError on inconsistent sizes or out-of-range labels.
  void validate() const;
};

/// Examples `indices`, in order, keeping the label space.
Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);
/// Examples of `classes`, relabelled 0..k-1 in the order given.
Dataset select_classes(const Dataset& data, const std::vector<int>& classes);
/// Stacks examples `indices` into an (n, C, H, W) batch.
Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices);

struct TrainValSplit {
  Dataset train;
  Dataset val;
};

/// Per-class split: the first round(val_fraction * n_c) examples of each
/// class (after a seeded shuffle) go to val, at least one when n_c >= 2.
TrainValSplit split_train_val(const Dataset& data, double val_fraction, std::uint64_t seed);

/// Class-conditional synthetic images: each class is a smooth random
/// prototype; examples add a random spatial shift, a random gain and
/// Gaussian pixel noise. Harder with more noise and more classes.
struct SyntheticImageConfig {
  int num_classes = 10;
  int per_class = 100;
  InputShape shape{3, 16, 16};
  double noise = 0.6;
  int max_shift = 2;
  std::uint64_t seed = 0;
};

Dataset make_synthetic_images(const SyntheticImageConfig& config);

/// Folder of class folders holding binary or ASCII netpbm images (.pgm,
/// .ppm). Classes are sorted by folder name; pixel values are scaled to
/// [-0.5, 0.5]. Grey images are replicated to three channels when any image
/// is colour. All images must share one size.
Dataset load_image_folder(const std::filesystem::path& root);

}  // namespace kdnas
