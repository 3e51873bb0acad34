#pragma once

#include <array>
#include <cmath>

namespace lorentz {

// value + gradient in four variables
struct Dual4 {
  double v = 0.0;
  std::array<double, 4> d{};

  Dual4() = default;
  Dual4(double x) : v(x) {}  // NOLINT: implicit lift of constants

  static Dual4 variable(double x, int i) {
    Dual4 r(x);
    r.d[i] = 1.0;
    return r;
  }

  Dual4& operator+=(const Dual4& o) {
    v += o.v;
    for (int i = 0; i < 4; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual4& operator-=(const Dual4& o) {
    v -= o.v;
    for (int i = 0; i < 4; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual4& operator*=(const Dual4& o) {
    for (int i = 0; i < 4; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual4& operator/=(const Dual4& o) {
    double inv = 1.0 / o.v;
    for (int i = 0; i < 4; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
    v *= inv;
    return *this;
  }
};

inline Dual4 operator-(Dual4 a) {
  a.v = -a.v;
  for (auto& x : a.d) x = -x;
  return a;
}
inline Dual4 operator+(Dual4 a, const Dual4& b) { return a += b; }
inline Dual4 operator-(Dual4 a, const Dual4& b) { return a -= b; }
inline Dual4 operator*(Dual4 a, const Dual4& b) { return a *= b; }
inline Dual4 operator/(Dual4 a, const Dual4& b) { return a /= b; }
inline Dual4 operator+(Dual4 a, double b) { a.v += b; return a; }
inline Dual4 operator+(double b, Dual4 a) { a.v += b; return a; }
inline Dual4 operator-(Dual4 a, double b) { a.v -= b; return a; }
inline Dual4 operator-(double b, const Dual4& a) { return Dual4(b) - a; }
inline Dual4 operator*(Dual4 a, double b) {
  a.v *= b;
  for (auto& x : a.d) x *= b;
  return a;
}
inline Dual4 operator*(double b, Dual4 a) { return a * b; }
inline Dual4 operator/(Dual4 a, double b) { return a * (1.0 / b); }
inline Dual4 operator/(double b, const Dual4& a) { return Dual4(b) / a; }

inline Dual4 chain(const Dual4& a, double f0, double f1) {
  Dual4 r(f0);
  for (int i = 0; i < 4; ++i) r.d[i] = f1 * a.d[i];
  return r;
}
inline Dual4 exp(const Dual4& a) { double e = std::exp(a.v); return chain(a, e, e); }
inline Dual4 log(const Dual4& a) { return chain(a, std::log(a.v), 1.0 / a.v); }
inline Dual4 sin(const Dual4& a) { return chain(a, std::sin(a.v), std::cos(a.v)); }
inline Dual4 cos(const Dual4& a) { return chain(a, std::cos(a.v), -std::sin(a.v)); }
inline Dual4 sqrt(const Dual4& a) {
  double s = std::sqrt(a.v);
  return chain(a, s, 0.5 / s);
}

inline double value_of(double x) { return x; }
inline double value_of(const Dual4& x) { return x.v; }

// second-order jet over scalar S: value, gradient, Hessian
template <class S>
struct Jet2 {
  S v{};
  std::array<S, 4> g{};
  std::array<std::array<S, 4>, 4> h{};

  Jet2() = default;
  Jet2(double x) : v(x) {}  // NOLINT
  Jet2(const S& x) requires(!std::is_same_v<S, double>) : v(x) {}  // NOLINT

  static Jet2 variable(const S& x, int i) {
    Jet2 r;
    r.v = x;
    r.g[i] = S(1.0);
    return r;
  }

  Jet2& operator+=(const Jet2& o) {
    v += o.v;
    for (int i = 0; i < 4; ++i) {
      g[i] += o.g[i];
      for (int j = 0; j < 4; ++j) h[i][j] += o.h[i][j];
    }
    return *this;
  }
  Jet2& operator-=(const Jet2& o) {
    v -= o.v;
    for (int i = 0; i < 4; ++i) {
      g[i] -= o.g[i];
      for (int j = 0; j < 4; ++j) h[i][j] -= o.h[i][j];
    }
    return *this;
  }
  Jet2& operator*=(const Jet2& o) {
    Jet2 r;
    r.v = v * o.v;
    for (int i = 0; i < 4; ++i) {
      r.g[i] = g[i] * o.v + v * o.g[i];
      for (int j = 0; j < 4; ++j)
        r.h[i][j] = h[i][j] * o.v + g[i] * o.g[j] + g[j] * o.g[i] + v * o.h[i][j];
    }
    return *this = r;
  }
  Jet2& operator*=(double c) {
    v *= c;
    for (int i = 0; i < 4; ++i) {
      g[i] *= c;
      for (int j = 0; j < 4; ++j) h[i][j] *= c;
    }
    return *this;
  }
};

// f applied to a jet given f(a), f'(a), f''(a)
template <class S>
Jet2<S> chain(const Jet2<S>& a, const S& f0, const S& f1, const S& f2) {
  Jet2<S> r;
  r.v = f0;
  for (int i = 0; i < 4; ++i) {
    r.g[i] = f1 * a.g[i];
    for (int j = 0; j < 4; ++j) r.h[i][j] = f1 * a.h[i][j] + f2 * a.g[i] * a.g[j];
  }
  return r;
}

template <class S> Jet2<S> operator-(Jet2<S> a) { a *= -1.0; return a; }
template <class S> Jet2<S> operator+(Jet2<S> a, const Jet2<S>& b) { return a += b; }
template <class S> Jet2<S> operator-(Jet2<S> a, const Jet2<S>& b) { return a -= b; }
template <class S> Jet2<S> operator*(Jet2<S> a, const Jet2<S>& b) { return a *= b; }
template <class S> Jet2<S> operator+(Jet2<S> a, double b) { a.v += b; return a; }
template <class S> Jet2<S> operator+(double b, Jet2<S> a) { a.v += b; return a; }
template <class S> Jet2<S> operator-(Jet2<S> a, double b) { a.v -= b; return a; }
template <class S> Jet2<S> operator-(double b, const Jet2<S>& a) { return Jet2<S>(b) - a; }
template <class S> Jet2<S> operator*(Jet2<S> a, double b) { a *= b; return a; }
template <class S> Jet2<S> operator*(double b, Jet2<S> a) { a *= b; return a; }

template <class S>
Jet2<S> reciprocal(const Jet2<S>& a) {
  S inv = S(1.0) / a.v;
  S inv2 = inv * inv;
  return chain(a, inv, -1.0 * inv2, 2.0 * inv2 * inv);
}
template <class S> Jet2<S> operator/(const Jet2<S>& a, const Jet2<S>& b) { return a * reciprocal(b); }
template <class S> Jet2<S> operator/(Jet2<S> a, double b) { a *= 1.0 / b; return a; }
template <class S> Jet2<S> operator/(double b, const Jet2<S>& a) { return reciprocal(a) * b; }

template <class S>
Jet2<S> exp(const Jet2<S>& a) {
  using std::exp;
  S e = exp(a.v);
  return chain(a, e, e, e);
}
template <class S>
Jet2<S> log(const Jet2<S>& a) {
  using std::log;
  S inv = S(1.0) / a.v;
  return chain(a, log(a.v), inv, -1.0 * inv * inv);
}
template <class S>
Jet2<S> sin(const Jet2<S>& a) {
  using std::sin; using std::cos;
  S s = sin(a.v);
  return chain(a, s, cos(a.v), -1.0 * s);
}
template <class S>
Jet2<S> cos(const Jet2<S>& a) {
  using std::sin; using std::cos;
  S c = cos(a.v);
  return chain(a, c, -1.0 * sin(a.v), -1.0 * c);
}
template <class S>
Jet2<S> sqrt(const Jet2<S>& a) {
  using std::sqrt;
  S s = sqrt(a.v);
  S d1 = 0.5 / s;
  return chain(a, s, d1, -0.5 * d1 / a.v);
}

}  // namespace lorentz
