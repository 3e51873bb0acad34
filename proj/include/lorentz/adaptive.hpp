#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "lorentz/geometry.hpp"
#include "lorentz/metric.hpp"

namespace lorentz {

// background values at one point: ĝ, φ̂, ∂φ̂ and the source count K ≥ L+1
struct PointFrame {
  Mat4 ghat;
  Eigen::VectorXd phi;
  Eigen::Matrix<double, 4, Eigen::Dynamic> dphi;
  double m = 1.0;
  int K = 0;

  int L() const { return static_cast<int>(phi.size()); }
  // K = 0 picks L+1
  static PointFrame at(const MetricProvider& g, const ScalarFieldFrame& fields, const Vec4& x, int K = 0);
  void validate() const;
};

using Permutation = std::vector<int>;  // σ as a 0-based list of field indices
Permutation identity_permutation(int L);

struct ConditionA {
  Eigen::Matrix<double, 5, 5> B;
  double det = 0.0;
  double condition = 0.0;
  bool invertible = false;
};

// rows 0..3: ∂_jφ_{σ(ℓ)}, row 4: φ_{σ(ℓ)}, ℓ < 5
ConditionA condition_A_matrix(const PointFrame& f, const Permutation& sigma, double max_condition = 1e8);
// identity if admissible, else the 5-subset with the largest |det B|
Permutation choose_permutation(const PointFrame& f, double max_condition = 1e8);

struct SourceInput {
  Eigen::VectorXd Q;  // length K, Q_K last
  Eigen::Vector4d R = Eigen::Vector4d::Zero();
  double norm() const { return std::sqrt(Q.squaredNorm() + R.squaredNorm()); }
};

struct SolveOptions {
  int max_iter = 100;
  double tol = 1e-13;
  double radius = -1.0;  // negative: admission_radius
  bool enforce_radius = true;
};

struct SourceSolution {
  Eigen::VectorXd S;
  int iterations = 0;
  double residual = 0.0;        // max of both defining equations
  std::vector<double> steps;    // ‖S_{n+1} − S_n‖
  double radius = 0.0;
};

// 0.1·min(1, m²/‖Y_σ‖) / (‖Y_σ‖(1 + ‖K_σ‖)): the fixed-point map contracts by ≤ 0.1 inside it
double admission_radius(const PointFrame& f, const Permutation& sigma);

SourceSolution solve_adaptive_sources(const PointFrame& f, const SourceInput& in, const Permutation& sigma,
                                      const SolveOptions& opt = {});

// Z = −Σ (S_ℓφ_ℓ + S_ℓ²/(2m²))
double stress_density_Z(const Eigen::VectorXd& S, const Eigen::VectorXd& phi, double m);

// Σ_ℓ S_ℓ ∂_jφ_ℓ + R_j
Eigen::Vector4d conservation_residual_pointwise(const PointFrame& f, const Eigen::VectorXd& S,
                                                const Eigen::Vector4d& R);

struct SourceDifferential {
  Eigen::MatrixXd D;  // L × (K+4), columns Q_1..Q_{K-1}, Q_K, R_1..R_4
  int rank = 0;
  bool condition_a = true;
  int col_QK(int K) const { return K - 1; }
  int col_R(int K, int j) const { return K + j; }
};

// with strict = false a Condition-A failure gives Y_σ = 0 instead of throwing
SourceDifferential source_differential(const PointFrame& f, const Permutation& sigma, bool strict = true);

// principal-symbol data of the controlled sources at (x, ξ)
struct SymbolData {
  Mat4 va = Mat4::Zero();               // p, principal
  Mat4 vb = Mat4::Zero();               // p, subprincipal
  std::array<Mat4, 4> vc{Mat4::Zero(), Mat4::Zero(), Mat4::Zero(), Mat4::Zero()};  // ∂_j of va
  Eigen::VectorXd w1;                   // q′, length K−1
  double w2a = 0.0, w2b = 0.0;          // z, principal and subprincipal
  Eigen::Vector4d dc = Eigen::Vector4d::Zero();  // ∂_j of the z symbol

  static SymbolData zero(int K);
};

// P with ĝ^{lk}ξ_l P_kj = ξ_j: v = −zP cancels the trace term of z ĝ in the conservation law
Mat4 trace_compensator(const Mat4& ghat, const Vec4& xi);

// (f₁, f₂) as a flat 10+L vector in the PolarizationVector layout
Eigen::VectorXd linearized_source(const PointFrame& f, const Vec4& xi, const SymbolData& d,
                                  const Permutation& sigma);

// orthonormal basis of the achievable symbols when (va, w2a) obeys the conservation law
Eigen::MatrixXd linearized_source_image(const PointFrame& f, const Vec4& xi, const Permutation& sigma,
                                        double tol = 1e-10);

}  // namespace lorentz
