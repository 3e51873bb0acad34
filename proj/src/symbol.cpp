#include "lorentz/symbol.hpp"

#include <boost/numeric/odeint.hpp>

#include "lorentz/errors.hpp"
#include "lorentz/geometry.hpp"

namespace lorentz {

namespace {

constexpr int kPairs[10][2] = {{0, 0}, {0, 1}, {0, 2}, {0, 3}, {1, 1}, {1, 2}, {1, 3}, {2, 2}, {2, 3}, {3, 3}};

Mat4 unit_sym(int i) {
  Mat4 E = Mat4::Zero();
  auto [a, b] = sym_pair(i);
  E(a, b) = 1.0;
  E(b, a) = 1.0;
  return E;
}

}  // namespace

int sym_index(int j, int k) {
  if (j > k) std::swap(j, k);
  static constexpr int offset[4] = {0, 4, 7, 9};
  return offset[j] + (k - j);
}

std::pair<int, int> sym_pair(int i) { return {kPairs[i][0], kPairs[i][1]}; }

PolarizationVector::PolarizationVector(const Mat4& m, Eigen::VectorXd scalars)
    : v(0.5 * (m + m.transpose())), w(std::move(scalars)) {}

Eigen::VectorXd PolarizationVector::flat() const {
  Eigen::VectorXd f(10 + w.size());
  for (int i = 0; i < 10; ++i) f[i] = v(kPairs[i][0], kPairs[i][1]);
  f.tail(w.size()) = w;
  return f;
}

PolarizationVector PolarizationVector::from_flat(const Eigen::VectorXd& f) {
  PolarizationVector p;
  for (int i = 0; i < 10; ++i) {
    p.v(kPairs[i][0], kPairs[i][1]) = f[i];
    p.v(kPairs[i][1], kPairs[i][0]) = f[i];
  }
  p.w = f.tail(f.size() - 10);
  return p;
}

NullCovectorFrame NullCovectorFrame::make(const MetricProvider& g, const Vec4& x, const Vec4& xi, double tol) {
  NullCovectorFrame f{x, xi, g.eval(x)};
  double n = xi.dot(f.ginv() * xi);
  if (std::abs(n) > tol * xi.squaredNorm()) throw DegenerateFrame("covector is not null for the background metric");
  if (xi.norm() < 1e-12) throw DegenerateFrame("zero covector");
  return f;
}

Eigen::Vector4d harmonicity_residual(const NullCovectorFrame& f, const PolarizationVector& p) {
  Mat4 gi = f.ginv();
  double tr = gi.cwiseProduct(p.v).sum();
  return -(p.v * (gi * f.xi)) + 0.5 * tr * f.xi;
}

Eigen::Vector4d conservation_residual(const NullCovectorFrame& f, const PolarizationVector& p) {
  return p.v * (f.ginv() * f.xi);
}

Eigen::MatrixXd constraint_matrix(const NullCovectorFrame& f, Constraint which, int L) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(4, 10 + L);
  for (int i = 0; i < 10; ++i) {
    PolarizationVector p(unit_sym(i), Eigen::VectorXd::Zero(L));
    A.col(i) = which == Constraint::harmonicity ? harmonicity_residual(f, p) : conservation_residual(f, p);
  }
  return A;
}

Eigen::MatrixXd constraint_space_basis(const NullCovectorFrame& f, Constraint which, int L) {
  Eigen::MatrixXd A = constraint_matrix(f, which, L);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  double thr = 1e-8 * A.norm();
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i) rank += sv[i] > thr;
  if (rank != 4) throw DegenerateFrame("constraint map has rank " + std::to_string(rank));
  return svd.matrixV().rightCols(10 + L - 4);
}

Eigen::MatrixXd trace_reversal(const Mat4& ghat, int L) {
  Eigen::MatrixXd T = Eigen::MatrixXd::Identity(10 + L, 10 + L);
  Mat4 gi = ghat.inverse();
  for (int i = 0; i < 10; ++i) {
    Mat4 E = unit_sym(i);
    Mat4 r = E - 0.5 * gi.cwiseProduct(E).sum() * ghat;
    T.col(i).head(10) = PolarizationVector(r, Eigen::VectorXd()).flat();
  }
  return T;
}

namespace {

using State24 = std::array<double, 24>;

// covector propagator Π along the geodesic: dα_a/ds = Γ^c_{ma} γ̇^m α_c
Eigen::Matrix4d covector_propagator(const MetricProvider& g, const Vec4& x, const Vec4& v, double s) {
  if (g.is_flat() || s == 0.0) return Eigen::Matrix4d::Identity();
  State24 y{};
  for (int i = 0; i < 4; ++i) {
    y[i] = x[i];
    y[4 + i] = v[i];
    y[8 + 5 * i] = 1.0;
  }
  auto rhs = [&g](const State24& st, State24& d, double) {
    Vec4 p(st[0], st[1], st[2], st[3]), u(st[4], st[5], st[6], st[7]);
    Christoffel G = g.christoffel(p);
    Eigen::Map<const Eigen::Matrix4d> P(&st[8]);
    Eigen::Map<Eigen::Matrix4d> dP(&d[8]);
    Eigen::Matrix4d A;
    for (int a = 0; a < 4; ++a)
      for (int c = 0; c < 4; ++c) A(a, c) = G[c].row(a).dot(u);
    for (int k = 0; k < 4; ++k) {
      d[k] = u[k];
      d[4 + k] = -u.dot(G[k] * u);
    }
    dP = A * P;
  };
  namespace ode = boost::numeric::odeint;
  double len = std::abs(s);
  if (s < 0) {
    for (int i = 0; i < 4; ++i) y[4 + i] = -v[i];
  }
  ode::integrate_adaptive(ode::make_controlled(1e-12, 1e-12, ode::runge_kutta_dopri5<State24>()), rhs, y, 0.0, len,
                          1e-2);
  return Eigen::Map<const Eigen::Matrix4d>(&y[8]);
}

Eigen::MatrixXd lift_to_fiber(const Eigen::Matrix4d& Pi, int L) {
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(10 + L, 10 + L);
  for (int i = 0; i < 10; ++i) {
    Mat4 r = Pi * unit_sym(i) * Pi.transpose();
    R.col(i).head(10) = PolarizationVector(r, Eigen::VectorXd()).flat();
  }
  return R;
}

bool parallel_positive(const Vec4& a, const Vec4& b, double tol) {
  double c = a.dot(b);
  return c > 0 && (a / a.norm() - b / b.norm()).norm() < tol;
}

}  // namespace

Transport transport_propagator(const MetricProvider& g, const NullCovectorFrame& from, const NullCovectorFrame& to,
                               int L) {
  Vec4 v = from.sharp();
  Transport out;
  Vec4 d = to.x - from.x;
  if (d.norm() < 1e-13) {
    if (!parallel_positive(from.xi, to.xi, 1e-8)) throw TopologyError("frames at one point with different covectors");
    out.R = Eigen::MatrixXd::Identity(10 + L, 10 + L);
    return out;
  }
  bool future = d[0] > 0;
  if ((v[0] > 0) != future) throw TopologyError("target is not ahead along the bicharacteristic");
  auto link = null_connect(g, from.x, to.x, future, 1e-8);
  if (!link || !parallel_positive(link->zeta, v, 1e-8)) throw TopologyError("frames are not on one bicharacteristic");
  out.s = link->t * link->zeta[0] / v[0];
  GeodesicState e = geodesic_endpoint(g, from.x, v, out.s);
  Vec4 arrive = to.sharp();
  if (!parallel_positive(e.v, arrive, 1e-7)) throw TopologyError("target covector is not the transported one");
  Eigen::Matrix4d Pi = covector_propagator(g, from.x, v, out.s);
  out.R = lift_to_fiber(Pi, L);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.R);
  out.condition = svd.singularValues()[0] / svd.singularValues()[svd.singularValues().size() - 1];
  return out;
}

Transport transport_symbol(const MetricProvider& g, const NullCovectorFrame& from, const NullCovectorFrame& to, int L) {
  Transport t = transport_propagator(g, from, to, L);
  t.R = t.R * trace_reversal(from.ghat, L);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(t.R);
  t.condition = svd.singularValues()[0] / svd.singularValues()[svd.singularValues().size() - 1];
  return t;
}

Eigen::Matrix4cd beam_initial_hessian(const Vec4& zeta) {
  Mat4 proj = Mat4::Identity() - zeta * zeta.transpose() / zeta.squaredNorm();
  return std::complex<double>(0, 1) * proj.cast<std::complex<double>>();
}

namespace {

struct HamDerivs {
  Mat4 D;   // g^{-1}
  Mat4 C;   // C(a,b) = ∂_a g^{bk} ξ_k
  Mat4 B;   // B(a,b) = ½ ∂_a∂_b g^{jk} ξ_j ξ_k
  Vec4 xdot, xidot;
};

HamDerivs ham(const MetricProvider& g, const Vec4& x, const Vec4& xi) {
  HamDerivs h;
  MetricJet J = g.jet2(x);
  Mat4 gi = J.g.inverse();
  h.D = gi;
  std::array<Mat4, 4> dgi;
  for (int a = 0; a < 4; ++a) dgi[a] = -gi * J.dg[a] * gi;
  for (int a = 0; a < 4; ++a) {
    h.C.row(a) = (dgi[a] * xi).transpose();
    for (int b = 0; b < 4; ++b) {
      Mat4 d2 = gi * (J.dg[a] * gi * J.dg[b] + J.dg[b] * gi * J.dg[a] - J.d2g[a][b]) * gi;
      h.B(a, b) = 0.5 * xi.dot(d2 * xi);
    }
  }
  h.xdot = gi * xi;
  for (int a = 0; a < 4; ++a) h.xidot[a] = -0.5 * xi.dot(dgi[a] * xi);
  return h;
}

}  // namespace

GaussianBeam gaussian_beam_phase(const MetricProvider& g, const Vec4& y, const Vec4& zeta, const Eigen::Matrix4cd& H0,
                                 const BeamOptions& opt) {
  using Mc = Eigen::Matrix4cd;
  GaussianBeam beam;
  FlowOptions fo;
  fo.sample_step = opt.step;
  beam.ray = geodesic_flow(g, y, zeta, opt.s_max, fo);
  // phase-space state (x, ξ) and the linearized flow (Y, P), M = P Y⁻¹
  struct St {
    Vec4 x, xi;
    Mc Y, P;
  };
  auto f = [&](const St& s) {
    HamDerivs h = ham(g, s.x, s.xi);
    St d;
    d.x = h.xdot;
    d.xi = h.xidot;
    Mc Cc = h.C.cast<std::complex<double>>(), Dc = h.D.cast<std::complex<double>>(),
       Bc = h.B.cast<std::complex<double>>();
    d.Y = Cc.transpose() * s.Y + Dc * s.P;
    d.P = -Bc * s.Y - Cc * s.P;
    return d;
  };
  auto axpy = [](const St& a, double c, const St& b) {
    return St{a.x + c * b.x, a.xi + c * b.xi, a.Y + c * b.Y, a.P + c * b.P};
  };
  St s{y, g.eval(y) * zeta, Mc::Identity(), H0};
  int n = static_cast<int>(std::ceil(opt.s_max / opt.step - 1e-9));
  double h = opt.s_max / n;
  for (int i = 0; i <= n; ++i) {
    double t = i * h;
    Mc M = s.P * s.Y.inverse();
    if (!M.allFinite() || M.norm() > opt.blowup) throw CausticEncountered("Riccati blowup along the beam", t);
    beam.s.push_back(t);
    beam.H.push_back(0.5 * (M + M.transpose()));
    beam.dA.push_back(s.xi);
    if (i == n) break;
    St k1 = f(s), k2 = f(axpy(s, 0.5 * h, k1)), k3 = f(axpy(s, 0.5 * h, k2)), k4 = f(axpy(s, h, k3));
    s = St{s.x + h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x), s.xi + h / 6 * (k1.xi + 2 * k2.xi + 2 * k3.xi + k4.xi),
           s.Y + h / 6 * (k1.Y + 2 * k2.Y + 2 * k3.Y + k4.Y), s.P + h / 6 * (k1.P + 2 * k2.P + 2 * k3.P + k4.P)};
  }
  return beam;
}

GaussianBeam gaussian_beam_phase(const MetricProvider& g, const Vec4& y, const Vec4& zeta, int order,
                                 const BeamOptions& opt) {
  if (order != 0) throw Error("only leading-order beams are implemented");
  Mat4 gy = g.eval(y);
  if (std::abs(zeta.dot(gy * zeta)) > 1e-10 * zeta.squaredNorm()) throw Error("beam direction must be null");
  Eigen::Matrix4cd H0 = beam_initial_hessian(zeta);
  // real part chosen so that H0 ζ = dξ/ds, which the Riccati flow then preserves
  HamDerivs h = ham(g, y, gy * zeta);
  Vec4 xd = h.xidot;
  double n2 = zeta.squaredNorm();
  Mat4 R = (xd * zeta.transpose() + zeta * xd.transpose()) / n2 - zeta.dot(xd) * zeta * zeta.transpose() / (n2 * n2);
  H0 += R.cast<std::complex<double>>();
  return gaussian_beam_phase(g, y, zeta, H0, opt);
}

Eigen::Matrix4cd GaussianBeam::hessian(double t) const {
  double h = s[1] - s[0];
  size_t i = std::min(static_cast<size_t>(std::max(0.0, t / h)), s.size() - 2);
  double u = (t - s[i]) / h;
  return (1 - u) * H[i] + u * H[i + 1];
}

Vec4 GaussianBeam::covector(double t) const {
  double h = s[1] - s[0];
  size_t i = std::min(static_cast<size_t>(std::max(0.0, t / h)), s.size() - 2);
  double u = (t - s[i]) / h;
  return (1 - u) * dA[i] + u * dA[i + 1];
}

std::complex<double> GaussianBeam::phase(const Vec4& x) const {
  // parameter on γ with the same time coordinate
  double a = ray.s_begin(), b = ray.s_end();
  for (int k = 0; k < 80; ++k) {
    double c = 0.5 * (a + b);
    (ray.position(c)[0] < x[0] ? a : b) = c;
  }
  double t = 0.5 * (a + b);
  Vec4 d = x - ray.position(t);
  Eigen::Vector4cd dc = d.cast<std::complex<double>>();
  return covector(t).dot(d) + 0.5 * dc.dot(hessian(t) * dc);
}

std::complex<double> TestSource::phase(const Vec4& x) const {
  Vec4 d = x - y;
  Eigen::Vector4cd dc = d.cast<std::complex<double>>();
  return zeta_flat.dot(d) + 0.5 * dc.dot(H * dc);
}

std::complex<double> TestSource::operator()(const Vec4& x) const {
  return std::exp(std::complex<double>(0, tau) * phase(x)) * h(x) / tau;
}

TestSource test_source(const MetricProvider& g, const Vec4& y, const Vec4& eta, double tau,
                       std::function<double(const Vec4&)> h) {
  Mat4 gy = g.eval(y);
  if (std::abs(eta.dot(gy * eta)) > 1e-10 * eta.squaredNorm()) throw Error("source direction must be null");
  TestSource s;
  s.y = y;
  s.zeta_flat = gy * eta;
  // beam Hessian plus i along η itself: Im H = I, a point-concentrated phase
  Eigen::Matrix4cd H0 = beam_initial_hessian(eta);
  Vec4 e = eta.normalized();
  H0 += std::complex<double>(0, 1) * (e * e.transpose()).cast<std::complex<double>>();
  s.H = H0;
  s.tau = tau;
  s.h = std::move(h);
  return s;
}

}  // namespace lorentz
