#ifndef MPCIL_DUAL_HPP_
#define MPCIL_DUAL_HPP_

#include <array>
#include <cmath>

namespace mpcil {

// Forward-mode dual number with N tangent directions. Nesting
// Dual<Dual<double, N>, N> yields exact second derivatives.
template <typename T, int N>
struct Dual {
  T v{};
  std::array<T, N> g{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit constant promotion
  Dual(const T& value, const std::array<T, N>& grad) : v(value), g(grad) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) g[i] += o.g[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) g[i] -= o.g[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) g[i] = g[i] * o.v + v * o.g[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const T inv = T(1.0) / o.v;
    for (int i = 0; i < N; ++i) g[i] = (g[i] - v * inv * o.g[i]) * inv;
    v *= inv;
    return *this;
  }
};

inline double ValueOf(double x) { return x; }
template <typename T, int N>
double ValueOf(const Dual<T, N>& x) {
  return ValueOf(x.v);
}

template <typename T, int N>
Dual<T, N> operator+(Dual<T, N> a, const Dual<T, N>& b) {
  return a += b;
}
template <typename T, int N>
Dual<T, N> operator-(Dual<T, N> a, const Dual<T, N>& b) {
  return a -= b;
}
template <typename T, int N>
Dual<T, N> operator*(Dual<T, N> a, const Dual<T, N>& b) {
  return a *= b;
}
template <typename T, int N>
Dual<T, N> operator/(Dual<T, N> a, const Dual<T, N>& b) {
  return a /= b;
}
template <typename T, int N>
Dual<T, N> operator-(Dual<T, N> a) {
  a.v = -a.v;
  for (auto& gi : a.g) gi = -gi;
  return a;
}

template <typename T, int N>
Dual<T, N> operator+(Dual<T, N> a, double b) {
  a.v += b;
  return a;
}
template <typename T, int N>
Dual<T, N> operator+(double b, Dual<T, N> a) {
  a.v += b;
  return a;
}
template <typename T, int N>
Dual<T, N> operator-(Dual<T, N> a, double b) {
  a.v -= b;
  return a;
}
template <typename T, int N>
Dual<T, N> operator-(double b, const Dual<T, N>& a) {
  return -a + b;
}
template <typename T, int N>
Dual<T, N> operator*(Dual<T, N> a, double b) {
  a.v *= b;
  for (auto& gi : a.g) gi *= b;
  return a;
}
template <typename T, int N>
Dual<T, N> operator*(double b, Dual<T, N> a) {
  return a * b;
}
template <typename T, int N>
Dual<T, N> operator/(Dual<T, N> a, double b) {
  return a * (1.0 / b);
}

template <typename T, int N>
Dual<T, N> sin(const Dual<T, N>& a) {
  using std::cos;
  using std::sin;
  Dual<T, N> r;
  r.v = sin(a.v);
  const T c = cos(a.v);
  for (int i = 0; i < N; ++i) r.g[i] = c * a.g[i];
  return r;
}
template <typename T, int N>
Dual<T, N> cos(const Dual<T, N>& a) {
  using std::cos;
  using std::sin;
  Dual<T, N> r;
  r.v = cos(a.v);
  const T s = -sin(a.v);
  for (int i = 0; i < N; ++i) r.g[i] = s * a.g[i];
  return r;
}

}  // namespace mpcil

#endif  // MPCIL_DUAL_HPP_
