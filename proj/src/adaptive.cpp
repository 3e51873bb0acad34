#include "lorentz/adaptive.hpp"

#include <algorithm>
#include <numeric>

#include "lorentz/errors.hpp"
#include "lorentz/symbol.hpp"

namespace lorentz {

using Mat5 = Eigen::Matrix<double, 5, 5>;
using Vec5 = Eigen::Matrix<double, 5, 1>;

PointFrame PointFrame::at(const MetricProvider& g, const ScalarFieldFrame& fields, const Vec4& x, int K) {
  PointFrame f{g.eval(x), fields.phi(x), fields.d_phi(x), fields.m, K};
  if (f.K == 0) f.K = f.L() + 1;
  f.validate();
  return f;
}

void PointFrame::validate() const {
  if (L() < 5) throw Error("at least five scalar fields are required");
  if (K < L() + 1) throw Error("K must be at least L+1");
  if (dphi.cols() != L()) throw Error("field gradient has the wrong shape");
  if (!(m > 0)) throw Error("mass must be positive");
  if (!has_lorentz_signature(ghat)) throw DegenerateMetric("background metric is not Lorentzian");
}

Permutation identity_permutation(int L) {
  Permutation p(L);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

ConditionA condition_A_matrix(const PointFrame& f, const Permutation& sigma, double max_condition) {
  if (static_cast<int>(sigma.size()) != f.L()) throw Error("permutation length differs from L");
  ConditionA c;
  for (int l = 0; l < 5; ++l) {
    c.B.block<4, 1>(0, l) = f.dphi.col(sigma[l]);
    c.B(4, l) = f.phi[sigma[l]];
  }
  c.det = c.B.determinant();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(c.B));
  double smin = svd.singularValues()[4];
  c.condition = smin > 0 ? svd.singularValues()[0] / smin : std::numeric_limits<double>::infinity();
  c.invertible = std::isfinite(c.condition) && c.condition <= max_condition;
  return c;
}

Permutation choose_permutation(const PointFrame& f, double max_condition) {
  int L = f.L();
  Permutation id = identity_permutation(L);
  if (condition_A_matrix(f, id, max_condition).invertible) return id;
  // scan 5-subsets; the order inside the subset does not change S
  Permutation best;
  double best_det = 0.0;
  std::vector<bool> pick(L, false);
  std::fill(pick.begin(), pick.begin() + 5, true);
  do {
    Permutation p;
    for (int i = 0; i < L; ++i)
      if (pick[i]) p.push_back(i);
    for (int i = 0; i < L; ++i)
      if (!pick[i]) p.push_back(i);
    auto c = condition_A_matrix(f, p, max_condition);
    if (c.invertible && std::abs(c.det) > best_det) {
      best_det = std::abs(c.det);
      best = p;
    }
  } while (std::prev_permutation(pick.begin(), pick.end()));
  if (best.empty()) throw ConditionAFailure("no permutation satisfies Condition A at this point");
  return best;
}

double stress_density_Z(const Eigen::VectorXd& S, const Eigen::VectorXd& phi, double m) {
  return -(S.dot(phi) + S.squaredNorm() / (2 * m * m));
}

Eigen::Vector4d conservation_residual_pointwise(const PointFrame& f, const Eigen::VectorXd& S,
                                                const Eigen::Vector4d& R) {
  return f.dphi * S + R;
}

namespace {

Eigen::MatrixXd coupling_block(const PointFrame& f, const Permutation& sigma) {
  Eigen::MatrixXd Kb = Eigen::MatrixXd::Zero(5, std::max(0, f.L() - 5));
  for (int i = 5; i < f.L(); ++i) {
    Kb.block<4, 1>(0, i - 5) = f.dphi.col(sigma[i]);
    Kb(4, i - 5) = f.phi[sigma[i]];
  }
  return Kb;
}

}  // namespace

double admission_radius(const PointFrame& f, const Permutation& sigma) {
  auto ca = condition_A_matrix(f, sigma);
  if (!ca.invertible) return 0.0;
  double y = ca.B.inverse().norm();
  double k = f.L() > 5 ? coupling_block(f, sigma).norm() : 0.0;
  return 0.1 * std::min(1.0, f.m * f.m / y) / (y * (1 + k));
}

SourceSolution solve_adaptive_sources(const PointFrame& f, const SourceInput& in, const Permutation& sigma,
                                      const SolveOptions& opt) {
  f.validate();
  int L = f.L();
  if (in.Q.size() != f.K) throw Error("Q must have length K");
  auto ca = condition_A_matrix(f, sigma);
  if (!ca.invertible) throw ConditionAFailure("B^σ is singular at this frame");
  Mat5 Y = ca.B.inverse();
  SourceSolution out;
  out.radius = opt.radius < 0 ? admission_radius(f, sigma) : opt.radius;
  if (opt.enforce_radius && in.norm() > out.radius) throw RadiusExceeded("source input outside the admission radius");

  double QK = in.Q[f.K - 1];
  Vec5 base;
  base.head<4>() = -in.R;
  base[4] = -QK;
  Eigen::VectorXd S = Eigen::VectorXd::Zero(L);
  for (int i = 5; i < L; ++i) {
    int l = sigma[i];
    S[l] = in.Q[l];
    base.head<4>() -= in.Q[l] * f.dphi.col(l);
    base[4] -= in.Q[l] * f.phi[l];
  }
  const double c2 = 1.0 / (2 * f.m * f.m);
  for (int it = 1;; ++it) {
    Vec5 rhs = base;
    rhs[4] -= c2 * S.squaredNorm();
    Vec5 SA = Y * rhs;
    double step = 0.0;
    for (int i = 0; i < 5; ++i) {
      step = std::max(step, std::abs(SA[i] - S[sigma[i]]));
      S[sigma[i]] = SA[i];
    }
    out.steps.push_back(step);
    out.iterations = it;
    if (!std::isfinite(step)) throw RadiusExceeded("fixed-point iteration diverged");
    if (step <= opt.tol * std::max(1.0, S.lpNorm<Eigen::Infinity>())) break;
    if (it >= opt.max_iter) throw RadiusExceeded("fixed-point iteration did not converge");
  }
  out.S = S;
  Vec5 lhs;
  lhs.head<4>() = f.dphi * S + in.R;
  lhs[4] = QK - stress_density_Z(S, f.phi, f.m);
  out.residual = lhs.lpNorm<Eigen::Infinity>();
  return out;
}

SourceDifferential source_differential(const PointFrame& f, const Permutation& sigma, bool strict) {
  f.validate();
  int L = f.L(), K = f.K;
  auto ca = condition_A_matrix(f, sigma);
  SourceDifferential sd;
  sd.condition_a = ca.invertible;
  if (!ca.invertible && strict) throw ConditionAFailure("B^σ is singular at this frame");
  Mat5 Y = ca.invertible ? Mat5(ca.B.inverse()) : Mat5::Zero();
  sd.D = Eigen::MatrixXd::Zero(L, K + 4);
  auto put = [&](int col, const Vec5& v) {
    for (int i = 0; i < 5; ++i) sd.D(sigma[i], col) = v[i];
  };
  for (int j = 0; j < 4; ++j) put(sd.col_R(K, j), -Y.col(j));
  put(sd.col_QK(K), -Y.col(4));
  for (int i = 5; i < L; ++i) {
    int l = sigma[i];
    Vec5 k;
    k.head<4>() = f.dphi.col(l);
    k[4] = f.phi[l];
    put(l, -Y * k);
    sd.D(l, l) = 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(sd.D);
  svd.setThreshold(1e-10);
  sd.rank = static_cast<int>(svd.rank());
  return sd;
}

SymbolData SymbolData::zero(int K) {
  SymbolData d;
  d.w1 = Eigen::VectorXd::Zero(K - 1);
  return d;
}

Mat4 trace_compensator(const Mat4& ghat, const Vec4& xi) {
  Mat4 gi = ghat.inverse();
  Vec4 sharp = gi * xi;
  // ν with ξ♯·ν = 1, the Euclidean-closest one
  Vec4 nu = sharp / sharp.squaredNorm();
  double nn = nu.dot(gi * nu);
  return xi * nu.transpose() + nu * xi.transpose() - nn * xi * xi.transpose();
}

Eigen::VectorXd linearized_source(const PointFrame& f, const Vec4& xi, const SymbolData& d,
                                  const Permutation& sigma) {
  int K = f.K;
  if (d.w1.size() != K - 1) throw Error("w1 must have length K-1");
  auto sd = source_differential(f, sigma);
  Mat4 gi = f.ghat.inverse();
  Mat4 f1 = d.va + d.w2a * f.ghat;
  // N^j acts on r_j; the subprincipal part contributes ĝ^{lk}ξ_l m^(b)_kj
  Mat4 mb = d.vb + d.w2b * f.ghat;
  Eigen::Vector4d r = mb * (gi * xi);
  // J_(2): the same contraction applied to the x-derivatives of the principal symbol
  Eigen::Vector4d rc = Eigen::Vector4d::Zero();
  for (int l = 0; l < 4; ++l) {
    Mat4 mc = d.vc[l] + d.dc[l] * f.ghat;
    rc += mc * gi.col(l);
  }
  Eigen::VectorXd f2 = sd.D.leftCols(K - 1) * d.w1 + sd.D.col(sd.col_QK(K)) * d.w2a;
  for (int j = 0; j < 4; ++j) f2 += sd.D.col(sd.col_R(K, j)) * (r[j] + rc[j]);
  return PolarizationVector(f1, f2).flat();
}

Eigen::MatrixXd linearized_source_image(const PointFrame& f, const Vec4& xi, const Permutation& sigma, double tol) {
  int L = f.L(), K = f.K;
  NullCovectorFrame frame{Vec4::Zero(), xi, f.ghat};
  if (std::abs(xi.dot(frame.sharp())) > 1e-10 * xi.squaredNorm()) throw DegenerateFrame("covector is not null");
  Eigen::MatrixXd C = constraint_space_basis(frame, Constraint::conservation, 0);
  std::vector<Eigen::VectorXd> cols;
  auto unit = [](int i) {
    Mat4 E = Mat4::Zero();
    auto [a, b] = sym_pair(i);
    E(a, b) = E(b, a) = 1.0;
    return E;
  };
  for (int c = 0; c < C.cols(); ++c) {
    auto d = SymbolData::zero(K);
    d.va = PolarizationVector::from_flat(C.col(c)).v;
    cols.push_back(linearized_source(f, xi, d, sigma));
  }
  {
    auto d = SymbolData::zero(K);
    d.w2a = 1.0;
    d.va = -trace_compensator(f.ghat, xi);
    cols.push_back(linearized_source(f, xi, d, sigma));
  }
  for (int i = 0; i < 10; ++i) {
    auto d = SymbolData::zero(K);
    d.vb = unit(i);
    cols.push_back(linearized_source(f, xi, d, sigma));
    for (int l = 0; l < 4; ++l) {
      auto e = SymbolData::zero(K);
      e.vc[l] = unit(i);
      cols.push_back(linearized_source(f, xi, e, sigma));
    }
  }
  {
    auto d = SymbolData::zero(K);
    d.w2b = 1.0;
    cols.push_back(linearized_source(f, xi, d, sigma));
  }
  for (int l = 0; l < 4; ++l) {
    auto d = SymbolData::zero(K);
    d.dc[l] = 1.0;
    cols.push_back(linearized_source(f, xi, d, sigma));
  }
  for (int k = 0; k < K - 1; ++k) {
    auto d = SymbolData::zero(K);
    d.w1[k] = 1.0;
    cols.push_back(linearized_source(f, xi, d, sigma));
  }
  Eigen::MatrixXd A(10 + L, cols.size());
  for (size_t i = 0; i < cols.size(); ++i) A.col(i) = cols[i];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU);
  svd.setThreshold(tol);
  return svd.matrixU().leftCols(svd.rank());
}

}  // namespace lorentz
