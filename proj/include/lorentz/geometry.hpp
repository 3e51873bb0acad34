#pragma once

#include <Eigen/Dense>
#include <functional>

#include "lorentz/metric.hpp"

namespace lorentz {

enum class Index { co, contra };

struct Tensor2 {
  Mat4 c = Mat4::Zero();
  std::array<Index, 2> idx{Index::co, Index::co};
  bool symmetric = false;

  Tensor2() = default;
  Tensor2(const Mat4& m, bool sym = true, std::array<Index, 2> ix = {Index::co, Index::co})
      : c(sym ? Mat4(0.5 * (m + m.transpose())) : m), idx(ix), symmetric(sym) {}

  double operator()(int i, int j) const { return c(i, j); }
  operator const Mat4&() const { return c; }  // NOLINT
};

// raise (contra) or lower (co) both indices
Tensor2 raise(const Tensor2& t, const Mat4& g_inv);
Tensor2 lower(const Tensor2& t, const Mat4& g);

struct ScalarFieldFrame {
  int L = 0;
  double m = 1.0;
  std::function<Eigen::VectorXd(const Vec4&)> phi;
  std::function<Eigen::Matrix<double, 4, Eigen::Dynamic>(const Vec4&)> d_phi;

  // φ_ℓ(x) = c_ℓ + grad.col(ℓ)·x
  static ScalarFieldFrame affine(const Eigen::VectorXd& c,
                                 const Eigen::Matrix<double, 4, Eigen::Dynamic>& grad, double m);
};

// tensor value and its coordinate gradient: d[n] = ∂_n T
struct TensorJet {
  Mat4 value;
  std::array<Mat4, 4> d;
};
using TensorField = std::function<TensorJet(const Vec4&)>;

Christoffel christoffel(const MetricProvider& g, const Vec4& x);
Tensor2 ricci(const MetricProvider& g, const Vec4& x);
Tensor2 einstein(const MetricProvider& g, const Vec4& x);
Eigen::Vector4d harmonicity_functions(const MetricProvider& g, const MetricProvider& ghat, const Vec4& x);
Tensor2 reduced_einstein(const MetricProvider& g, const MetricProvider& ghat, const Vec4& x);
Tensor2 stress_energy(const MetricProvider& g, const ScalarFieldFrame& fields, const Vec4& x);

// (div T)_k = g^{nj} ∇_n T_jk
Eigen::Vector4d divergence(const MetricProvider& g, const TensorField& T, const Vec4& x);

// Ein with exact first derivatives (third metric derivatives through jets)
TensorField einstein_field(const MetricProvider& g);
// harmonicity functions with exact first derivatives: value, d[q](n) = ∂_q F^n
struct VectorJet {
  Eigen::Vector4d value;
  std::array<Eigen::Vector4d, 4> d;
};
VectorJet harmonicity_jet(const MetricProvider& g, const MetricProvider& ghat, const Vec4& x);

// Γ and ∂_mΓ: d[m][k](i,j) = ∂_m Γ^k_ij
struct ChristoffelJet {
  Christoffel value;
  std::array<Christoffel, 4> d;
};
ChristoffelJet christoffel_jet(const MetricProvider& g, const Vec4& x);

// central-difference stencil (order 2 or 4) wrapped as a TensorField
TensorField fd_field(std::function<Mat4(const Vec4&)> f, double h, int order = 2);

// finite-difference curvature oracle: Ricci from stencil metric samples only
Mat4 ricci_fd(const MetricProvider& g, const Vec4& x, double h);

}  // namespace lorentz
