// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "kdnas/tensor.hpp"

namespace kdnas::layers {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kNormMomentum = 0.1;

/// 2-D convolution without bias. input (N,Cin,H,W), weight (Cout,Cin,K,K).
Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int pad);
/// Accumulates dL/dweight into grad_weight and returns dL/dinput (empty if
/// need_input_grad is false).
Tensor conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out, int stride,
                       int pad, Tensor& grad_weight, bool need_input_grad = true);

struct NormCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

/// Batch normalization with batch statistics; updates running moments
/// (unbiased variance) when they are non-null.
Tensor batch_norm_train(const Tensor& input, const Tensor& scale, const Tensor& shift, Tensor* running_mean,
                        Tensor* running_var, NormCache* cache);
Tensor batch_norm_eval(const Tensor& input, const Tensor& scale, const Tensor& shift,
                       const Tensor& running_mean, const Tensor& running_var, NormCache* cache);
/// Backward for either mode. `batch_stats` selects the train-mode formula.
Tensor batch_norm_backward(const Tensor& grad_out, const Tensor& scale, const NormCache& cache,
                           bool batch_stats, Tensor& grad_scale, Tensor& grad_shift);

Tensor relu(const Tensor& input);
/// Masks grad_out where the rectified output is zero.
Tensor relu_backward(const Tensor& output, const Tensor& grad_out);

/// Leading-channel slice or zero-pad to out_channels (parameter-free shortcut).
Tensor match_channels(const Tensor& input, int out_channels);
Tensor match_channels_backward(const Tensor& grad_out, int in_channels);

/// Mean over H and W: (N,C,H,W) -> (N,C).
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Tensor& grad_out, int height, int width);

/// y = x W^T + b with x (N,In), W (Out,In), b (Out).
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out, Tensor& grad_weight,
                       Tensor& grad_bias);

void add_inplace(Tensor& dst, const Tensor& src);

}  // namespace kdnas::layers
