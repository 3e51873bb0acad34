#pragma once

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <vector>

#include "lorentz/causal.hpp"
#include "lorentz/metric.hpp"

namespace lorentz {

// flat index of the symmetric pair (j,k): 00 01 02 03 11 12 13 22 23 33
int sym_index(int j, int k);
std::pair<int, int> sym_pair(int i);

struct PolarizationVector {
  Mat4 v = Mat4::Zero();  // metric part, symmetric
  Eigen::VectorXd w;      // scalar part, length L

  PolarizationVector() = default;
  PolarizationVector(const Mat4& m, Eigen::VectorXd scalars);
  int L() const { return static_cast<int>(w.size()); }
  Eigen::VectorXd flat() const;
  static PolarizationVector from_flat(const Eigen::VectorXd& f);
};

struct NullCovectorFrame {
  Vec4 x;
  Vec4 xi;  // covector, ĝ-null
  Mat4 ghat;

  static NullCovectorFrame make(const MetricProvider& g, const Vec4& x, const Vec4& xi, double tol = 1e-10);
  Mat4 ginv() const { return ghat.inverse(); }
  Vec4 sharp() const { return ginv() * xi; }
};

enum class Constraint { harmonicity, conservation };

// r_j = −ĝ^{mn}ξ_m v_nj + ½ξ_j ĝ^{pq}v_pq
Eigen::Vector4d harmonicity_residual(const NullCovectorFrame& f, const PolarizationVector& v);
// r_j = ĝ^{lk}ξ_l v_kj
Eigen::Vector4d conservation_residual(const NullCovectorFrame& f, const PolarizationVector& v);

// the residual as a 4 × (10+L) matrix on flat vectors
Eigen::MatrixXd constraint_matrix(const NullCovectorFrame& f, Constraint which, int L);
// orthonormal kernel basis, columns; dimension 6+L
Eigen::MatrixXd constraint_space_basis(const NullCovectorFrame& f, Constraint which, int L);

// trace reversal h ↦ h − ½ tr_ĝ(h) ĝ on flat vectors (scalar block untouched)
Eigen::MatrixXd trace_reversal(const Mat4& ghat, int L);

struct Transport {
  Eigen::MatrixXd R;  // (10+L) square
  double condition = 1.0;
  double s = 0.0;     // affine parameter from `from` to `to`
};

// parallel propagator of the symbol fiber along the null geodesic joining the frames
Transport transport_propagator(const MetricProvider& g, const NullCovectorFrame& from, const NullCovectorFrame& to,
                               int L);
// transport of principal symbols: propagator composed with trace reversal at the source frame
Transport transport_symbol(const MetricProvider& g, const NullCovectorFrame& from, const NullCovectorFrame& to, int L);

struct GaussianBeam {
  GeodesicPath ray;               // null geodesic γ_{y,ζ}
  std::vector<double> s;          // parameters of stored Hessians
  std::vector<Eigen::Matrix4cd> H;  // phase Hessian along γ
  std::vector<Vec4> dA;           // ζ♭(s) = dφ on γ

  Eigen::Matrix4cd hessian(double t) const;
  Vec4 covector(double t) const;
  // complex phase near γ, slicing by the time coordinate
  std::complex<double> phase(const Vec4& x) const;
};

struct BeamOptions {
  double s_max = 3.0;
  double step = 1e-2;
  double blowup = 1e8;
};

// initial Hessian: i·(ĝ⁺-orthogonal projector onto the complement of ζ) with ĝ⁺ the chart Euclidean metric
Eigen::Matrix4cd beam_initial_hessian(const Vec4& zeta);

GaussianBeam gaussian_beam_phase(const MetricProvider& g, const Vec4& y, const Vec4& zeta, int order = 0,
                                 const BeamOptions& opt = {});
// same, with caller-supplied H(0)
GaussianBeam gaussian_beam_phase(const MetricProvider& g, const Vec4& y, const Vec4& zeta, const Eigen::Matrix4cd& H0,
                                 const BeamOptions& opt = {});

// F_τ(x) = τ⁻¹ exp(iτ p(x)) h(x), p(x) = ζ♭·(x−y) + ½(x−y)ᵀ H (x−y) with Im H = I
struct TestSource {
  Vec4 y;
  Vec4 zeta_flat;
  Eigen::Matrix4cd H;
  double tau;
  std::function<double(const Vec4&)> h;

  std::complex<double> phase(const Vec4& x) const;
  std::complex<double> operator()(const Vec4& x) const;
};
TestSource test_source(const MetricProvider& g, const Vec4& y, const Vec4& eta, double tau,
                       std::function<double(const Vec4&)> h);

}  // namespace lorentz
