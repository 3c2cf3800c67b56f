// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

namespace kdnas {

/// Forward-mode dual number v + d*eps with eps^2 = 0. Running a gradient
/// computation on Duals seeded with tangent v yields a Hessian-vector product
/// in the tangent part.
struct Dual {
  double v = 0.0;
  double d = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(double value, double tangent) : v(value), d(tangent) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    d = d * o.v + v * o.d;
    v *= o.v;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
// Mixed forms skip the zero tangent of the plain operand.
inline Dual operator*(const Dual& a, double b) { return {a.v * b, a.d * b}; }
inline Dual operator*(double a, const Dual& b) { return {a * b.v, a * b.d}; }
inline Dual operator+(const Dual& a, double b) { return {a.v + b, a.d}; }
inline Dual operator-(const Dual& a, double b) { return {a.v - b, a.d}; }
inline Dual operator-(double a, const Dual& b) { return {a - b.v, -b.d}; }
inline Dual operator/(const Dual& a, const Dual& b) {
  return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
}
inline Dual tanh(const Dual& a) {
  const double t = std::tanh(a.v);
  return {t, a.d * (1.0 - t * t)};
}

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }
inline bool is_finite(double x) { return std::isfinite(x); }
inline bool is_finite(const Dual& x) { return std::isfinite(x.v) && std::isfinite(x.d); }

}  // namespace kdnas
