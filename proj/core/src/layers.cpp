// SPDX-License-Identifier: Apache-2.0
#include "kdnas/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "kdnas/error.hpp"

namespace kdnas::layers {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

int out_extent(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

void im2col(const double* img, int c, int h, int w, int k, int stride, int pad, int oh, int ow, double* cols) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((ci * k + ky) * k + kx) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          int iy = y * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(row + y * ow, row + (y + 1) * ow, 0.0);
            continue;
          }
          const double* src = img + (ci * h + iy) * w;
          for (int x = 0; x < ow; ++x) {
            int ix = x * stride - pad + kx;
            row[y * ow + x] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, int oh, int ow, double* img) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((ci * k + ky) * k + kx) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          int iy = y * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = img + (ci * h + iy) * w;
          for (int x = 0; x < ow; ++x) {
            int ix = x * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += row[y * ow + x];
          }
        }
      }
    }
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw InternalError(std::string(what) + " expects rank " + std::to_string(rank) + ", got shape " +
                        shape_string(t.shape()));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int pad) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c) {
    throw InternalError("conv2d channel mismatch: input " + shape_string(input.shape()) + ", weight " +
                        shape_string(weight.shape()));
  }
  const int oh = out_extent(h, k, stride, pad), ow = out_extent(w, k, stride, pad);
  const int patch = c * k * k;
  Tensor out({n, co, oh, ow});
  std::vector<double> cols(static_cast<std::size_t>(patch) * oh * ow);
  ConstMatMap wmat(weight.data(), co, patch);
  for (int i = 0; i < n; ++i) {
    const double* img = input.data() + static_cast<std::size_t>(i) * c * h * w;
    double* dst = out.data() + static_cast<std::size_t>(i) * co * oh * ow;
    if (k == 1 && stride == 1 && pad == 0) {
      MatMap(dst, co, oh * ow).noalias() = wmat * ConstMatMap(img, c, h * w);
      continue;
    }
    im2col(img, c, h, w, k, stride, pad, oh, ow, cols.data());
    MatMap(dst, co, oh * ow).noalias() = wmat * ConstMatMap(cols.data(), patch, oh * ow);
  }
  return out;
}

Tensor conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out, int stride, int pad,
                       Tensor& grad_weight, bool need_input_grad) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int co = weight.dim(0), k = weight.dim(2);
  const int oh = grad_out.dim(2), ow = grad_out.dim(3);
  const int patch = c * k * k;
  if (grad_weight.shape() != weight.shape()) grad_weight = Tensor(weight.shape());
  Tensor grad_in;
  if (need_input_grad) grad_in = Tensor(input.shape());
  std::vector<double> cols(static_cast<std::size_t>(patch) * oh * ow);
  std::vector<double> dcols(cols.size());
  ConstMatMap wmat(weight.data(), co, patch);
  MatMap gw(grad_weight.data(), co, patch);
  for (int i = 0; i < n; ++i) {
    const double* img = input.data() + static_cast<std::size_t>(i) * c * h * w;
    ConstMatMap dy(grad_out.data() + static_cast<std::size_t>(i) * co * oh * ow, co, oh * ow);
    im2col(img, c, h, w, k, stride, pad, oh, ow, cols.data());
    gw.noalias() += dy * ConstMatMap(cols.data(), patch, oh * ow).transpose();
    if (need_input_grad) {
      MatMap(dcols.data(), patch, oh * ow).noalias() = wmat.transpose() * dy;
      col2im(dcols.data(), c, h, w, k, stride, pad, oh, ow,
             grad_in.data() + static_cast<std::size_t>(i) * c * h * w);
    }
  }
  return grad_in;
}

Tensor batch_norm_train(const Tensor& input, const Tensor& scale, const Tensor& shift, Tensor* running_mean,
                        Tensor* running_var, NormCache* cache) {
  require_rank(input, 4, "batch_norm input");
  const int n = input.dim(0), c = input.dim(1);
  const std::size_t hw = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  const double count = static_cast<double>(n) * hw;
  Tensor out(input.shape());
  Tensor xhat(input.shape());
  std::vector<double> inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* p = input.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) sum += p[j];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* p = input.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) sq += (p[j] - mean) * (p[j] - mean);
    }
    const double var = sq / count;
    const double is = 1.0 / std::sqrt(var + kNormEps);
    inv_std[ch] = is;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        double xh = (input[off + j] - mean) * is;
        xhat[off + j] = xh;
        out[off + j] = scale[ch] * xh + shift[ch];
      }
    }
    if (running_mean && running_var) {
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      (*running_mean)[ch] = (1 - kNormMomentum) * (*running_mean)[ch] + kNormMomentum * mean;
      (*running_var)[ch] = (1 - kNormMomentum) * (*running_var)[ch] + kNormMomentum * unbiased;
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor batch_norm_eval(const Tensor& input, const Tensor& scale, const Tensor& shift, const Tensor& running_mean,
                       const Tensor& running_var, NormCache* cache) {
  require_rank(input, 4, "batch_norm input");
  const int n = input.dim(0), c = input.dim(1);
  const std::size_t hw = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  Tensor out(input.shape());
  Tensor xhat;
  if (cache) xhat = Tensor(input.shape());
  std::vector<double> inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    const double is = 1.0 / std::sqrt(running_var[ch] + kNormEps);
    inv_std[ch] = is;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        double xh = (input[off + j] - running_mean[ch]) * is;
        if (cache) xhat[off + j] = xh;
        out[off + j] = scale[ch] * xh + shift[ch];
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor batch_norm_backward(const Tensor& grad_out, const Tensor& scale, const NormCache& cache, bool batch_stats,
                           Tensor& grad_scale, Tensor& grad_shift) {
  const int n = grad_out.dim(0), c = grad_out.dim(1);
  const std::size_t hw = static_cast<std::size_t>(grad_out.dim(2)) * grad_out.dim(3);
  const double count = static_cast<double>(n) * hw;
  if (grad_scale.shape() != scale.shape()) grad_scale = Tensor(scale.shape());
  if (grad_shift.shape() != scale.shape()) grad_shift = Tensor(scale.shape());
  Tensor grad_in(grad_out.shape());
  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        sum_dy += grad_out[off + j];
        sum_dy_xhat += grad_out[off + j] * cache.xhat[off + j];
      }
    }
    grad_scale[ch] += sum_dy_xhat;
    grad_shift[ch] += sum_dy;
    const double g = scale[ch] * cache.inv_std[ch];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        if (batch_stats) {
          grad_in[off + j] = g * (grad_out[off + j] - sum_dy / count - cache.xhat[off + j] * sum_dy_xhat / count);
        } else {
          grad_in[off + j] = g * grad_out[off + j];
        }
      }
    }
  }
  return grad_in;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] < 0.0 ? 0.0 : input[i];  // NaN passes through
  return out;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_out) {
  Tensor grad(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) grad[i] = output[i] > 0.0 ? grad_out[i] : 0.0;
  return grad;
}

Tensor match_channels(const Tensor& input, int out_channels) {
  const int n = input.dim(0), c = input.dim(1);
  const std::size_t hw = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  if (c == out_channels) return input;
  Tensor out({n, out_channels, input.dim(2), input.dim(3)});
  const int keep = std::min(c, out_channels);
  for (int i = 0; i < n; ++i) {
    std::copy_n(input.data() + static_cast<std::size_t>(i) * c * hw, keep * hw,
                out.data() + static_cast<std::size_t>(i) * out_channels * hw);
  }
  return out;
}

Tensor match_channels_backward(const Tensor& grad_out, int in_channels) {
  return match_channels(grad_out, in_channels);
}

Tensor global_avg_pool(const Tensor& input) {
  const int n = input.dim(0), c = input.dim(1);
  const std::size_t hw = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  Tensor out({n, c});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double* p = input.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      double s = 0.0;
      for (std::size_t j = 0; j < hw; ++j) s += p[j];
      out[static_cast<std::size_t>(i) * c + ch] = s / static_cast<double>(hw);
    }
  }
  return out;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, int height, int width) {
  const int n = grad_out.dim(0), c = grad_out.dim(1);
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  Tensor grad({n, c, height, width});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double g = grad_out[static_cast<std::size_t>(i) * c + ch] / static_cast<double>(hw);
      std::fill_n(grad.data() + (static_cast<std::size_t>(i) * c + ch) * hw, hw, g);
    }
  }
  return grad;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const int n = input.dim(0), in = input.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in) throw InternalError("linear input width mismatch");
  Tensor y({n, out});
  MatMap ym(y.data(), n, out);
  ym.noalias() = ConstMatMap(input.data(), n, in) * ConstMatMap(weight.data(), out, in).transpose();
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out; ++o) ym(i, o) += bias[o];
  }
  return y;
}

Tensor linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out, Tensor& grad_weight,
                       Tensor& grad_bias) {
  const int n = input.dim(0), in = input.dim(1), out = weight.dim(0);
  if (grad_weight.shape() != weight.shape()) grad_weight = Tensor(weight.shape());
  if (grad_bias.size() != static_cast<std::size_t>(out)) grad_bias = Tensor({out});
  ConstMatMap dy(grad_out.data(), n, out);
  MatMap(grad_weight.data(), out, in).noalias() += dy.transpose() * ConstMatMap(input.data(), n, in);
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out; ++o) grad_bias[o] += dy(i, o);
  }
  Tensor grad_in({n, in});
  MatMap(grad_in.data(), n, in).noalias() = dy * ConstMatMap(weight.data(), out, in);
  return grad_in;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.size() != src.size()) throw InternalError("add_inplace size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace kdnas::layers
