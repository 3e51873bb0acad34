#pragma once

#include <Eigen/Dense>
#include <array>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "lorentz/jet.hpp"

namespace lorentz {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

template <class T> using Arr4 = std::array<T, 4>;
template <class T> using Sym4 = std::array<std::array<T, 4>, 4>;

using Christoffel = std::array<Mat4, 4>;  // c[k](i,j) = Γ^k_ij

struct MetricJet {
  Mat4 g;
  std::array<Mat4, 4> dg;                    // dg[p](j,k) = ∂_p g_jk
  std::array<std::array<Mat4, 4>, 4> d2g;    // d2g[p][q](j,k)
};

struct MetricJet3 : MetricJet {
  std::array<std::array<std::array<Mat4, 4>, 4>, 4> d3g;  // d3g[n][p][q]
};

enum class DerivativeMode { analytic, dual };

class MetricProvider {
 public:
  virtual ~MetricProvider() = default;
  virtual std::string name() const = 0;
  virtual DerivativeMode derivative_mode() const { return DerivativeMode::dual; }
  virtual bool is_flat() const { return false; }
  // static: x^0-independent with g_0i = 0 and g_00 = -1
  virtual bool is_static() const { return false; }

  virtual Mat4 eval(const Vec4& x) const = 0;
  virtual std::array<Mat4, 4> d_eval(const Vec4& x) const = 0;
  virtual MetricJet jet2(const Vec4& x) const = 0;
  virtual MetricJet3 jet3(const Vec4& x) const = 0;
  virtual Christoffel christoffel(const Vec4& x) const;

  std::array<std::array<Mat4, 4>, 4> d2_eval(const Vec4& x) const { return jet2(x).d2g; }
  Mat4 inverse(const Vec4& x) const;
};

using MetricPtr = std::shared_ptr<const MetricProvider>;

template <class T>
Sym4<T> inverse4(const Sym4<T>& m);

Christoffel christoffel_from(const Mat4& g, const std::array<Mat4, 4>& dg);

// Derived supplies: template <class T> Sym4<T> components(const Arr4<T>& x) const;
template <class Derived>
class JetMetric : public MetricProvider {
 public:
  Mat4 eval(const Vec4& x) const override {
    Arr4<double> a{x[0], x[1], x[2], x[3]};
    auto c = self().template components<double>(a);
    Mat4 g;
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) g(j, k) = c[j][k];
    return g;
  }

  std::array<Mat4, 4> d_eval(const Vec4& x) const override {
    Arr4<Dual4> a;
    for (int i = 0; i < 4; ++i) a[i] = Dual4::variable(x[i], i);
    auto c = self().template components<Dual4>(a);
    std::array<Mat4, 4> dg;
    for (int p = 0; p < 4; ++p)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) dg[p](j, k) = c[j][k].d[p];
    return dg;
  }

  MetricJet jet2(const Vec4& x) const override {
    Arr4<Jet2<double>> a;
    for (int i = 0; i < 4; ++i) a[i] = Jet2<double>::variable(x[i], i);
    auto c = self().template components<Jet2<double>>(a);
    MetricJet out;
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) {
        out.g(j, k) = c[j][k].v;
        for (int p = 0; p < 4; ++p) {
          out.dg[p](j, k) = c[j][k].g[p];
          for (int q = 0; q < 4; ++q) out.d2g[p][q](j, k) = c[j][k].h[p][q];
        }
      }
    return out;
  }

  MetricJet3 jet3(const Vec4& x) const override {
    Arr4<Jet2<Dual4>> a;
    for (int i = 0; i < 4; ++i) a[i] = Jet2<Dual4>::variable(Dual4::variable(x[i], i), i);
    auto c = self().template components<Jet2<Dual4>>(a);
    MetricJet3 out;
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) {
        out.g(j, k) = c[j][k].v.v;
        for (int p = 0; p < 4; ++p) {
          out.dg[p](j, k) = c[j][k].g[p].v;
          for (int q = 0; q < 4; ++q) {
            out.d2g[p][q](j, k) = c[j][k].h[p][q].v;
            for (int n = 0; n < 4; ++n) out.d3g[n][p][q](j, k) = c[j][k].h[p][q].d[n];
          }
        }
      }
    return out;
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
};

class Minkowski : public JetMetric<Minkowski> {
 public:
  std::string name() const override { return "minkowski"; }
  DerivativeMode derivative_mode() const override { return DerivativeMode::analytic; }
  bool is_flat() const override { return true; }
  bool is_static() const override { return true; }
  Christoffel christoffel(const Vec4&) const override;

  template <class T>
  Sym4<T> components(const Arr4<T>&) const {
    Sym4<T> g{};
    g[0][0] = T(-1.0);
    for (int i = 1; i < 4; ++i) g[i][i] = T(1.0);
    return g;
  }
};

// -dt^2 + e^{2t}|dx|^2
class DeSitterLike : public JetMetric<DeSitterLike> {
 public:
  std::string name() const override { return "desitter_like"; }

  template <class T>
  Sym4<T> components(const Arr4<T>& x) const {
    using std::exp;
    Sym4<T> g{};
    g[0][0] = T(-1.0);
    T e = exp(2.0 * x[0]);
    for (int i = 1; i < 4; ++i) g[i][i] = e;
    return g;
  }
};

// -dt^2 + n(y)^2 |dy|^2, n = 1 + A exp(-|y - y0|^2 / w^2)
class ProductLens : public JetMetric<ProductLens> {
 public:
  ProductLens(double amplitude, double width, std::array<double, 3> center = {0, 0, 0})
      : A_(amplitude), w_(width), c_(center) {}

  std::string name() const override;
  bool is_static() const override { return true; }
  Christoffel christoffel(const Vec4& x) const override;

  double amplitude() const { return A_; }
  double width() const { return w_; }
  const std::array<double, 3>& center() const { return c_; }

  // refractive index and its spatial gradient
  double index(const Eigen::Vector3d& y, Eigen::Vector3d* grad = nullptr) const;

  template <class T>
  Sym4<T> components(const Arr4<T>& x) const {
    using std::exp;
    T r2 = T(0.0);
    for (int i = 0; i < 3; ++i) {
      T d = x[i + 1] - c_[i];
      r2 += d * d;
    }
    T n = 1.0 + A_ * exp(-1.0 * r2 / (w_ * w_));
    Sym4<T> g{};
    g[0][0] = T(-1.0);
    T n2 = n * n;
    for (int i = 1; i < 4; ++i) g[i][i] = n2;
    return g;
  }

 private:
  double A_, w_;
  std::array<double, 3> c_;
};

// base + amplitude * sum_m S_m sin(k_m . x + phase_m), seeded
class Perturbed : public JetMetric<Perturbed> {
 public:
  using Base = std::variant<Minkowski, DeSitterLike, ProductLens>;
  static constexpr int modes = 3;

  Perturbed(Base base, double amplitude, unsigned long long seed);

  std::string name() const override;

  template <class T>
  Sym4<T> components(const Arr4<T>& x) const {
    using std::sin;
    Sym4<T> g = std::visit([&](const auto& b) { return b.template components<T>(x); }, base_);
    for (int m = 0; m < modes; ++m) {
      T arg = T(phase_[m]);
      for (int i = 0; i < 4; ++i) arg += k_[m][i] * x[i];
      T s = amp_ * sin(arg);
      for (int j = 0; j < 4; ++j)
        for (int l = 0; l < 4; ++l) g[j][l] += S_[m][j][l] * s;
    }
    return g;
  }

 private:
  Base base_;
  double amp_;
  unsigned long long seed_;
  std::array<Sym4<double>, modes> S_{};
  std::array<std::array<double, 4>, modes> k_{};
  std::array<double, modes> phase_{};
};

// "minkowski", "desitter_like", "product(A,w)", "lens(A,w)", "perturbed(base,amplitude,seed)"
MetricPtr make_metric(const std::string& spec);

// one negative eigenvalue, three positive
bool has_lorentz_signature(const Mat4& g, double tol = 1e-12);

}  // namespace lorentz
