// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace kdnas {

/// 1-based ranks with ties sharing the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman's rank correlation: Pearson correlation of average ranks.
/// Returns 0 when either side is constant. Throws ValidationError on length
/// mismatch, fewer than two points, or non-finite input.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace kdnas
