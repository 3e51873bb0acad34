#pragma once

#include <random>

#include "lorentz/adaptive.hpp"
#include "lorentz/causal.hpp"

namespace fixture {

using namespace lorentz;

// φ_ℓ = x^ℓ for the first four fields, φ₅ ≡ 1, further fields vanish at 0
inline ScalarFieldFrame canonical_fields(int L, double m = 1.0) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(L);
  c[4] = 1.0;
  Eigen::Matrix<double, 4, Eigen::Dynamic> grad = Eigen::Matrix<double, 4, Eigen::Dynamic>::Zero(4, L);
  for (int l = 0; l < 4; ++l) grad(l, l) = 1.0;
  return ScalarFieldFrame::affine(c, grad, m);
}

// random Lorentzian ĝ near η and random field values; accepted once Condition A holds
// with an admission radius of at least min_radius
inline PointFrame random_frame(std::mt19937_64& rng, int L, int K, double min_radius = 0.0) {
  std::uniform_real_distribution<double> u(-1, 1);
  for (;;) {
    PointFrame f;
    Mat4 p;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) p(i, j) = 0.1 * u(rng);
    f.ghat = Mat4(Eigen::Vector4d(-1, 1, 1, 1).asDiagonal()) + p + p.transpose();
    f.phi = Eigen::VectorXd(L);
    f.dphi = Eigen::Matrix<double, 4, Eigen::Dynamic>(4, L);
    for (int l = 0; l < L; ++l) {
      f.phi[l] = u(rng);
      for (int j = 0; j < 4; ++j) f.dphi(j, l) = u(rng);
    }
    f.m = 0.5 + std::abs(u(rng));
    f.K = K;
    auto c = condition_A_matrix(f, identity_permutation(L));
    if (!c.invertible) continue;
    if (admission_radius(f, identity_permutation(L)) < min_radius) continue;
    return f;
  }
}

inline Vec4 random_null_covector(std::mt19937_64& rng, const Mat4& g) {
  std::normal_distribution<double> n;
  Eigen::Vector3d w(n(rng), n(rng), n(rng));
  Vec4 v = null_direction(g, w);
  return g * v;
}

}  // namespace fixture
