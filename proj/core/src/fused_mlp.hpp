// SPDX-License-Identifier: Apache-2.0
// Forward/backward of the embedding + fusion + head stack, templated on the
// scalar so the same code yields Hessian-vector products when run on Duals.
#pragma once

#include <cstddef>
#include <vector>

#include "kdnas/dual.hpp"
#include "kdnas/task_encoding.hpp"

namespace kdnas::detail {

struct Offsets {
  std::size_t qa_w, qa_b, qf_w, qf_b, s0_w, s0_b, s1_w = 0, s1_b = 0, head_w, head_b;
  std::size_t A, C, E, H;
  bool two_layers;

  explicit Offsets(const ParamLayout& layout)
      : qa_w(layout.block("q_a.weight").offset),
        qa_b(layout.block("q_a.bias").offset),
        qf_w(layout.block("q_f.weight").offset),
        qf_b(layout.block("q_f.bias").offset),
        s0_w(layout.block("sigma.0.weight").offset),
        s0_b(layout.block("sigma.0.bias").offset),
        head_w(layout.block("head.weight").offset),
        head_b(layout.block("head.bias").offset),
        A(layout.dims().onehot),
        C(layout.dims().feature),
        E(layout.dims().embed),
        H(layout.dims().hidden),
        two_layers(layout.dims().sigma_layers == 2) {
    if (two_layers) {
      s1_w = layout.block("sigma.1.weight").offset;
      s1_b = layout.block("sigma.1.bias").offset;
    }
  }
};

template <class T>
struct FusedPass {
  std::vector<T> x;  // [h_zs, h_a, h_zt]
  std::vector<T> v1;
  std::vector<T> fused;
  T pred{};
};

template <class T>
inline T tanh_of(const T& x) {
  using std::tanh;
  return tanh(x);
}

// y[r] = b[r] + sum_c W[r, c] x[c], skipping zero inputs (one-hots are sparse).
template <class T>
void affine_sparse(const T* w, const T* b, std::size_t rows, std::size_t cols, const double* x, T* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = b[r];
  for (std::size_t c = 0; c < cols; ++c) {
    const double xc = x[c];
    if (xc == 0.0) continue;
    for (std::size_t r = 0; r < rows; ++r) y[r] += w[r * cols + c] * xc;
  }
}

template <class T>
void affine_dense(const T* w, const T* b, std::size_t rows, std::size_t cols, const T* x, T* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = b[r];
    const T* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

template <class T>
void fused_forward(const Offsets& o, const T* phi, const PairFeatures& f, FusedPass<T>& pass) {
  pass.x.assign(3 * o.E, T{});
  T* x = pass.x.data();
  affine_sparse(phi + o.qf_w, phi + o.qf_b, o.E, o.C, f.student.data(), x);
  affine_sparse(phi + o.qa_w, phi + o.qa_b, o.E, o.A, f.onehot.data(), x + o.E);
  affine_sparse(phi + o.qf_w, phi + o.qf_b, o.E, o.C, f.teacher.data(), x + 2 * o.E);

  pass.v1.assign(o.H, T{});
  affine_dense(phi + o.s0_w, phi + o.s0_b, o.H, 3 * o.E, x, pass.v1.data());
  for (auto& v : pass.v1) v = tanh_of(v);
  if (o.two_layers) {
    pass.fused.assign(o.H, T{});
    affine_dense(phi + o.s1_w, phi + o.s1_b, o.H, o.H, pass.v1.data(), pass.fused.data());
    for (auto& v : pass.fused) v = tanh_of(v);
  } else {
    pass.fused = pass.v1;
  }
  T pred = phi[o.head_b];
  for (std::size_t h = 0; h < o.H; ++h) pred += phi[o.head_w + h] * pass.fused[h];
  pass.pred = pred;
}

// Accumulates d/dphi of <d_fused, fused> + d_pred * pred into grad.
template <class T>
void fused_backward(const Offsets& o, const T* phi, const PairFeatures& f, const FusedPass<T>& pass,
                    const T* d_fused_in, const T& d_pred, T* grad) {
  std::vector<T> d_fused(o.H);
  for (std::size_t h = 0; h < o.H; ++h) {
    d_fused[h] = d_pred * phi[o.head_w + h];
    if (d_fused_in) d_fused[h] += d_fused_in[h];
    grad[o.head_w + h] += d_pred * pass.fused[h];
  }
  grad[o.head_b] += d_pred;

  std::vector<T> d_v1(o.H, T{});
  if (o.two_layers) {
    for (std::size_t r = 0; r < o.H; ++r) {
      const T du = d_fused[r] * (1.0 - pass.fused[r] * pass.fused[r]);
      grad[o.s1_b + r] += du;
      T* gw = grad + o.s1_w + r * o.H;
      const T* w = phi + o.s1_w + r * o.H;
      for (std::size_t c = 0; c < o.H; ++c) {
        gw[c] += du * pass.v1[c];
        d_v1[c] += w[c] * du;
      }
    }
  } else {
    d_v1 = d_fused;
  }

  const std::size_t in = 3 * o.E;
  std::vector<T> d_x(in, T{});
  for (std::size_t r = 0; r < o.H; ++r) {
    const T du = d_v1[r] * (1.0 - pass.v1[r] * pass.v1[r]);
    grad[o.s0_b + r] += du;
    T* gw = grad + o.s0_w + r * in;
    const T* w = phi + o.s0_w + r * in;
    for (std::size_t c = 0; c < in; ++c) {
      gw[c] += du * pass.x[c];
      d_x[c] += w[c] * du;
    }
  }

  const T* d_zs = d_x.data();
  const T* d_a = d_x.data() + o.E;
  const T* d_zt = d_x.data() + 2 * o.E;
  for (std::size_t r = 0; r < o.E; ++r) {
    grad[o.qf_b + r] += d_zs[r] + d_zt[r];
    grad[o.qa_b + r] += d_a[r];
  }
  for (std::size_t c = 0; c < o.A; ++c) {
    const double xc = f.onehot[c];
    if (xc == 0.0) continue;
    for (std::size_t r = 0; r < o.E; ++r) grad[o.qa_w + r * o.A + c] += d_a[r] * xc;
  }
  for (std::size_t r = 0; r < o.E; ++r) {
    T* gw = grad + o.qf_w + r * o.C;
    for (std::size_t c = 0; c < o.C; ++c) gw[c] += d_zs[r] * f.student[c] + d_zt[r] * f.teacher[c];
  }
}

}  // namespace kdnas::detail
