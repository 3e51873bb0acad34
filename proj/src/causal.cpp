#include "lorentz/causal.hpp"

#include <algorithm>
#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <numbers>

#include "lorentz/errors.hpp"
#include "lorentz/geometry.hpp"

namespace lorentz {

namespace ode = boost::numeric::odeint;

namespace {

using State8 = std::array<double, 8>;
using State40 = std::array<double, 40>;

Vec4 accel(const Christoffel& G, const Vec4& v) {
  Vec4 a;
  for (int k = 0; k < 4; ++k) a[k] = -v.dot(G[k] * v);
  return a;
}

struct GeodesicRhs {
  const MetricProvider& g;
  void operator()(const State8& y, State8& dy, double) const {
    Vec4 x(y[0], y[1], y[2], y[3]), v(y[4], y[5], y[6], y[7]);
    Vec4 a = accel(g.christoffel(x), v);
    for (int i = 0; i < 4; ++i) {
      dy[i] = v[i];
      dy[4 + i] = a[i];
    }
  }
};

struct JacobiRhs {
  const MetricProvider& g;
  void operator()(const State40& y, State40& dy, double) const {
    Vec4 x(y[0], y[1], y[2], y[3]), v(y[4], y[5], y[6], y[7]);
    ChristoffelJet C = christoffel_jet(g, x);
    Vec4 a = accel(C.value, v);
    for (int i = 0; i < 4; ++i) {
      dy[i] = v[i];
      dy[4 + i] = a[i];
    }
    Eigen::Map<const Eigen::Matrix4d> J(&y[8]), dJ(&y[24]);
    Eigen::Map<Eigen::Matrix4d> oJ(&dy[8]), odJ(&dy[24]);
    oJ = dJ;
    // δa^k = −∂_mΓ^k_ij v^i v^j δx^m − 2 Γ^k_ij v^i δv^j
    Eigen::Matrix4d A, B;
    for (int k = 0; k < 4; ++k) {
      for (int m = 0; m < 4; ++m) A(k, m) = -v.dot(C.d[m][k] * v);
      B.row(k) = -2.0 * (C.value[k] * v).transpose();
    }
    odJ = A * J + B * dJ;
  }
};

// forward integration in σ ≥ 0 with samples every h
template <class State, class Rhs>
std::vector<State> integrate_samples(const Rhs& rhs, State y0, double length, double h, double tol) {
  int n = std::max(1, static_cast<int>(std::ceil(length / h - 1e-9)));
  std::vector<double> times(n + 1);
  for (int i = 0; i <= n; ++i) times[i] = std::min(length, i * (length / n));
  std::vector<State> out;
  out.reserve(n + 1);
  auto stepper = ode::make_controlled(tol, tol, ode::runge_kutta_dopri5<State>());
  auto obs = [&](const State& y, double t) {
    for (double c : y)
      if (!std::isfinite(c)) throw IntegrationFailure("non-finite geodesic state", t);
    out.push_back(y);
  };
  try {
    ode::integrate_times(stepper, rhs, y0, times.begin(), times.end(), std::min(h, 1e-2), obs);
  } catch (const IntegrationFailure&) {
    throw;
  } catch (const std::exception& e) {
    double last = out.empty() ? 0.0 : times[out.size() - 1];
    throw IntegrationFailure(std::string("geodesic integration failed: ") + e.what(), last);
  }
  return out;
}

Eigen::Vector3d spatial(const Vec4& v) { return v.tail<3>(); }

// unit vectors orthogonal to n (chart Euclidean)
std::pair<Eigen::Vector3d, Eigen::Vector3d> transverse_pair(const Eigen::Vector3d& n) {
  Eigen::Vector3d a = std::abs(n[0]) < 0.8 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  Eigen::Vector3d e1 = (a - a.dot(n) * n).normalized();
  return {e1, n.cross(e1).normalized()};
}

Eigen::Matrix<double, 4, 3> null_direction_jac(const Mat4& g, const Eigen::Vector3d& w, bool future) {
  Eigen::Matrix<double, 4, 3> D;
  double h = 1e-6 * std::max(1.0, w.norm());
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e[i] = h;
    D.col(i) = (null_direction(g, w + e, future) - null_direction(g, w - e, future)) / (2 * h);
  }
  return D;
}

Eigen::VectorXd lsq_step(const Eigen::MatrixXd& A, const Eigen::VectorXd& r) {
  // the unit-sphere parametrization leaves a radial null direction that FD noise must not inflate
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  cod.setThreshold(1e-9);
  return cod.solve(r);
}

}  // namespace

Eigen::Matrix<double, 4, 3> null_direction_jacobian(const Mat4& g, const Eigen::Vector3d& w, bool future) {
  return null_direction_jac(g, w, future);
}

Eigen::VectorXd least_squares_step(const Eigen::MatrixXd& A, const Eigen::VectorXd& r) { return lsq_step(A, r); }

CausalClass classify(const Mat4& g, const Vec4& v, double band) {
  double n = v.dot(g * v);
  double scale = std::max(1.0, v.squaredNorm());
  if (n < -band * scale) return CausalClass::timelike;
  if (n > band * scale) return CausalClass::spacelike;
  return CausalClass::null;
}

const char* to_string(CausalClass c) {
  switch (c) {
    case CausalClass::timelike: return "timelike";
    case CausalClass::null: return "null";
    default: return "spacelike";
  }
}

GeodesicState GeodesicPath::at(double s) const {
  const auto& st = states;
  if (st.size() == 1) return st.front();
  if (s < st.front().s || s > st.back().s) {
    // short Taylor extrapolation off the sampled span
    size_t k = s < st.front().s ? 0 : st.size() - 1;
    const GeodesicState& e = st[k];
    double d = s - e.s;
    return {e.x + d * e.v + 0.5 * d * d * acc[k], e.v + d * acc[k], s};
  }
  auto it = std::upper_bound(st.begin(), st.end(), s, [](double v, const GeodesicState& a) { return v < a.s; });
  size_t i = std::clamp<size_t>(static_cast<size_t>(it - st.begin()), 1, st.size() - 1) - 1;
  const GeodesicState& a = st[i];
  const GeodesicState& b = st[i + 1];
  const Vec4 &aa = acc[i], &ab = acc[i + 1];
  double h = b.s - a.s;
  double u = (s - a.s) / h, u2 = u * u, u3 = u2 * u, u4 = u3 * u, u5 = u4 * u;
  // quintic Hermite on (x, v, a) for positions, cubic Hermite on (v, a) for velocities
  double H0 = 1 - 10 * u3 + 15 * u4 - 6 * u5, H1 = u - 6 * u3 + 8 * u4 - 3 * u5;
  double H2 = 0.5 * u2 - 1.5 * u3 + 1.5 * u4 - 0.5 * u5, H3 = 0.5 * u3 - u4 + 0.5 * u5;
  double H4 = -4 * u3 + 7 * u4 - 3 * u5, H5 = 10 * u3 - 15 * u4 + 6 * u5;
  Vec4 x = H0 * a.x + H1 * h * a.v + H2 * h * h * aa + H3 * h * h * ab + H4 * h * b.v + H5 * b.x;
  double h00 = 2 * u3 - 3 * u2 + 1, h10 = u3 - 2 * u2 + u, h01 = -2 * u3 + 3 * u2, h11 = u3 - u2;
  Vec4 v = h00 * a.v + h10 * h * aa + h01 * b.v + h11 * h * ab;
  return {x, v, s};
}

Eigen::Matrix4d GeodesicPath::jacobi(double s) const {
  if (J.empty()) throw Error("path has no Jacobi data");
  const auto& st = states;
  auto it = std::upper_bound(st.begin(), st.end(), s, [](double v, const GeodesicState& a) { return v < a.s; });
  size_t i = std::clamp<size_t>(static_cast<size_t>(it - st.begin()), 1, st.size() - 1) - 1;
  double h = st[i + 1].s - st[i].s;
  double u = std::clamp((s - st[i].s) / h, 0.0, 1.0);
  double h00 = 2 * u * u * u - 3 * u * u + 1, h10 = u * u * u - 2 * u * u + u;
  double h01 = -2 * u * u * u + 3 * u * u, h11 = u * u * u - u * u;
  return h00 * J[i] + h10 * h * dJ[i] + h01 * J[i + 1] + h11 * h * dJ[i + 1];
}

GeodesicPath geodesic_flow(const MetricProvider& g, const Vec4& x0, const Vec4& v0, double s_max,
                           const FlowOptions& opt) {
  GeodesicPath path;
  double len = std::abs(s_max);
  double sign = s_max < 0 ? -1.0 : 1.0;
  Vec4 w0 = sign * v0;
  int n = std::max(1, static_cast<int>(std::ceil(len / opt.sample_step - 1e-9)));
  if (len == 0.0) n = 0;
  if (g.is_flat() || len == 0.0) {
    for (int i = 0; i <= n; ++i) {
      double s = n ? i * (len / n) : 0.0;
      path.states.push_back({x0 + s * w0, w0, s});
      if (opt.jacobi) {
        path.J.push_back(s * Eigen::Matrix4d::Identity());
        path.dJ.push_back(Eigen::Matrix4d::Identity());
      }
    }
  } else if (!opt.jacobi) {
    State8 y;
    for (int i = 0; i < 4; ++i) {
      y[i] = x0[i];
      y[4 + i] = w0[i];
    }
    auto out = integrate_samples(GeodesicRhs{g}, y, len, opt.sample_step, opt.tol);
    for (size_t i = 0; i < out.size(); ++i) {
      const auto& s = out[i];
      path.states.push_back({Vec4(s[0], s[1], s[2], s[3]), Vec4(s[4], s[5], s[6], s[7]), i * (len / n)});
    }
  } else {
    State40 y{};
    for (int i = 0; i < 4; ++i) {
      y[i] = x0[i];
      y[4 + i] = w0[i];
      y[24 + 4 * i + i] = 1.0;  // dJ(0) = I (column-major)
    }
    auto out = integrate_samples(JacobiRhs{g}, y, len, opt.sample_step, opt.tol);
    for (size_t i = 0; i < out.size(); ++i) {
      const auto& s = out[i];
      path.states.push_back({Vec4(s[0], s[1], s[2], s[3]), Vec4(s[4], s[5], s[6], s[7]), i * (len / n)});
      path.J.push_back(Eigen::Map<const Eigen::Matrix4d>(&s[8]));
      path.dJ.push_back(Eigen::Map<const Eigen::Matrix4d>(&s[24]));
    }
  }
  path.acc.reserve(path.states.size());
  for (const auto& st : path.states)
    path.acc.push_back(g.is_flat() ? Vec4(Vec4::Zero()) : accel(g.christoffel(st.x), st.v));
  if (sign < 0) {
    // γ(−σ) with velocity −w; ∂x/∂v0 = −J_rev, ∂v/∂v0 = dJ_rev
    for (auto& st : path.states) {
      st.s = -st.s;
      st.v = -st.v;
    }
    for (auto& m : path.J) m = -m;
    std::reverse(path.states.begin(), path.states.end());
    std::reverse(path.acc.begin(), path.acc.end());
    std::reverse(path.J.begin(), path.J.end());
    std::reverse(path.dJ.begin(), path.dJ.end());
  }
  return path;
}

GeodesicState geodesic_endpoint(const MetricProvider& g, const Vec4& x0, const Vec4& v0, double s, double tol) {
  if (g.is_flat()) return {x0 + s * v0, v0, s};
  FlowOptions o;
  o.tol = tol;
  o.sample_step = std::max(std::abs(s), 1e-12);
  return geodesic_flow(g, x0, v0, s, o).at(s);
}

GeodesicState geodesic_endpoint_jacobi(const MetricProvider& g, const Vec4& x0, const Vec4& v0, double s,
                                       Eigen::Matrix4d& J, double tol) {
  if (g.is_flat()) {
    J = s * Eigen::Matrix4d::Identity();
    return {x0 + s * v0, v0, s};
  }
  FlowOptions o;
  o.tol = tol;
  o.jacobi = true;
  o.sample_step = std::max(std::abs(s), 1e-12);
  GeodesicPath p = geodesic_flow(g, x0, v0, s, o);
  J = s >= 0 ? p.J.back() : p.J.front();
  return s >= 0 ? p.states.back() : p.states.front();
}

Vec4 null_direction(const Mat4& g, const Eigen::Vector3d& w, bool future) {
  Eigen::Vector3d n = w.normalized();
  double sg = future ? 1.0 : -1.0;
  double a = n.dot(g.block<3, 3>(1, 1) * n);
  double b = g.block<1, 3>(0, 1).dot(n);
  double c = (-sg * b + std::sqrt(b * b - a * g(0, 0))) / a;
  Vec4 z;
  z << sg, c * n;
  return z;
}

std::vector<Vec4> shoot(const MetricProvider& g, const Vec4& x, const Vec4& y, const ShootOptions& opt) {
  std::vector<Vec4> guesses{y - x};
  if (!g.is_flat() && opt.direction_grid > 0) {
    Vec4 d = y - x;
    Eigen::Vector3d sp = spatial(d);
    double r = sp.norm();
    if (r > 1e-12) {
      auto [e1, e2] = transverse_pair(sp / r);
      for (int k = 0; k < opt.direction_grid; ++k) {
        double phi = 2 * std::numbers::pi * k / opt.direction_grid;
        Eigen::Vector3d dir = std::cos(opt.grid_angle) * sp / r +
                              std::sin(opt.grid_angle) * (std::cos(phi) * e1 + std::sin(phi) * e2);
        Vec4 gv;
        gv << d[0], r * dir;
        guesses.push_back(gv);
      }
    }
  }
  std::vector<Vec4> sols;
  double scale = 1.0 + y.norm();
  for (Vec4 v : guesses) {
    bool ok = false;
    for (int it = 0; it < opt.max_iter; ++it) {
      Eigen::Matrix4d J;
      Vec4 r;
      try {
        r = geodesic_endpoint_jacobi(g, x, v, 1.0, J).x - y;
      } catch (const Error&) {
        break;
      }
      if (r.norm() <= opt.tol * scale) {
        ok = true;
        break;
      }
      Vec4 step = J.fullPivLu().solve(r);
      // damped update
      double lam = 1.0;
      for (int k = 0; k < 8; ++k) {
        Vec4 vn = v - lam * step;
        double rn;
        try {
          rn = (geodesic_endpoint(g, x, vn, 1.0).x - y).norm();
        } catch (const Error&) {
          rn = INFINITY;
        }
        if (rn < r.norm() || k == 7) {
          v = vn;
          break;
        }
        lam *= 0.5;
      }
    }
    if (!ok) continue;
    bool dup = std::any_of(sols.begin(), sols.end(), [&](const Vec4& s) { return (s - v).norm() < 1e-7; });
    if (!dup) sols.push_back(v);
  }
  return sols;
}

double time_separation(const MetricProvider& g, const Vec4& x, const Vec4& y, const ShootOptions& opt) {
  Mat4 gx = g.eval(x);
  double best = 0.0;
  for (const Vec4& v : shoot(g, x, y, opt)) {
    if (v[0] <= 0) continue;
    if (classify(gx, v) != CausalClass::timelike) continue;
    best = std::max(best, std::sqrt(-v.dot(gx * v)));
  }
  return best;
}

std::optional<NullLink> null_connect(const MetricProvider& g, const Vec4& from, const Vec4& to, bool future,
                                     double tol) {
  Mat4 gf = g.eval(from);
  Eigen::Vector3d w = spatial(to - from);
  if (w.norm() < 1e-14) return std::nullopt;
  w.normalize();
  double t = future ? to[0] - from[0] : from[0] - to[0];
  if (t <= 0) return std::nullopt;
  for (int it = 0; it < 50; ++it) {
    Vec4 z = null_direction(gf, w, future);
    Eigen::Matrix4d J;
    GeodesicState e;
    try {
      e = geodesic_endpoint_jacobi(g, from, z, t, J);
    } catch (const Error&) {
      return std::nullopt;
    }
    Vec4 r = e.x - to;
    if (r.norm() <= 1e-13 * (1 + to.norm())) break;
    Eigen::Matrix<double, 4, 4> A;
    A.leftCols<3>() = J * null_direction_jac(gf, w, future);
    A.col(3) = e.v;
    Eigen::VectorXd d = lsq_step(A, r);
    w -= d.head<3>();
    t -= d[3];
    w.normalize();
    if (d.norm() < 1e-15) break;
  }
  Vec4 z = null_direction(gf, w, future);
  double res = (geodesic_endpoint(g, from, z, t).x - to).norm();
  if (t <= 0 || res > tol) return std::nullopt;
  return NullLink{z, t, res};
}

double cone_offset(const MetricProvider& g, const Vec4& q, const Vec4& y) {
  Eigen::Vector3d d = spatial(y - q);
  if (d.norm() < 1e-13) return y[0] - q[0];
  Mat4 gq = g.eval(q);
  if (g.is_flat()) {
    // straight null ray, arrival time in closed form
    Vec4 z = null_direction(gq, d, true);
    double t = d.norm() / spatial(z).norm();
    return y[0] - (q[0] + t * z[0]);
  }
  Eigen::Vector3d w = d.normalized();
  double t = d.norm();
  GeodesicState e;
  for (int it = 0; it < 40; ++it) {
    Vec4 z = null_direction(gq, w, true);
    Eigen::Matrix4d J;
    e = geodesic_endpoint_jacobi(g, q, z, t, J);
    Eigen::Vector3d r = spatial(e.x) - spatial(y);
    if (r.norm() < 1e-13 * (1 + y.norm())) break;
    Eigen::Matrix<double, 3, 4> A;
    A.leftCols<3>() = (J * null_direction_jac(gq, w, true)).bottomRows<3>();
    A.col(3) = spatial(e.v);
    Eigen::VectorXd s = lsq_step(A, r);
    w -= s.head<3>();
    t -= s[3];
    w.normalize();
    if (t <= 0) t = 1e-6;
  }
  return y[0] - e.x[0];
}

Observer ObserverFamily::make_observer(const MetricProvider& g, const Vec4& z, const Vec4& eta_dir) {
  Mat4 gz = g.eval(z);
  double n = eta_dir.dot(gz * eta_dir);
  if (!(n < 0) || eta_dir[0] <= 0) throw Error("observer velocity must be future timelike");
  Observer o;
  o.z = z;
  o.eta = eta_dir / std::sqrt(-n);
  constexpr double span = 2.0;
  FlowOptions f;
  f.sample_step = 5e-3;
  GeodesicPath back = geodesic_flow(g, z, o.eta, -span, f);
  GeodesicPath fwd = geodesic_flow(g, z, o.eta, span, f);
  o.path.states = back.states;
  o.path.acc = back.acc;
  o.path.states.pop_back();
  o.path.acc.pop_back();
  o.path.states.insert(o.path.states.end(), fwd.states.begin(), fwd.states.end());
  o.path.acc.insert(o.path.acc.end(), fwd.acc.begin(), fwd.acc.end());
  for (const auto& st : o.path.states)
    if (classify(g.eval(st.x), st.v) != CausalClass::timelike) throw Error("observer leaves the timelike class");
  return o;
}

ObserverFamily ObserverFamily::build(const MetricProvider& g, const ObserverFamilySpec& spec) {
  ObserverFamily fam;
  fam.spec_ = spec;
  fam.obs_.push_back(make_observer(g, spec.z0, spec.eta0));
  int n = std::max(1, spec.grid);
  double step = n > 1 ? 2.0 / (n - 1) : 0.0;
  double scale = spec.radius / std::sqrt(3.0);
  std::vector<Vec4> dirs{spec.eta0};
  for (int k = 0; k < spec.tilts; ++k) {
    double phi = 2 * std::numbers::pi * k / spec.tilts;
    Vec4 d = spec.eta0;
    d[1] += spec.tilt * std::cos(phi);
    d[2] += spec.tilt * std::sin(phi);
    dirs.push_back(d);
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        Eigen::Vector3d off(n > 1 ? -1 + i * step : 0, n > 1 ? -1 + j * step : 0, n > 1 ? -1 + k * step : 0);
        for (size_t di = 0; di < dirs.size(); ++di) {
          if (off.norm() < 1e-14 && di == 0) continue;  // the center
          Vec4 z = spec.z0;
          z.tail<3>() += scale * off;
          fam.obs_.push_back(make_observer(g, z, dirs[di]));
        }
      }
  return fam;
}

// null geodesic from x meeting the observer: unknowns (w, t, s)
std::optional<double> cone_hits_observer(const MetricProvider& g, const Observer& mu, const Vec4& x, bool future,
                                         double s_guess, Eigen::Vector3d w) {
  Mat4 gx = g.eval(x);
  double s = s_guess;
  Vec4 m = mu.path.position(s);
  double t = std::abs(m[0] - x[0]);
  if (w.norm() < 1e-14) return std::nullopt;
  w.normalize();
  if (t < 1e-14) t = 1e-6;
  for (int it = 0; it < 60; ++it) {
    Vec4 z = null_direction(gx, w, future);
    Eigen::Matrix4d J;
    GeodesicState e;
    try {
      e = geodesic_endpoint_jacobi(g, x, z, t, J);
    } catch (const Error&) {
      return std::nullopt;
    }
    GeodesicState ms = mu.path.at(s);
    Vec4 r = e.x - ms.x;
    if (r.norm() < 1e-14 * (1 + x.norm())) break;
    Eigen::Matrix<double, 4, 5> A;
    A.leftCols<3>() = J * null_direction_jac(gx, w, future);
    A.col(3) = e.v;
    A.col(4) = -ms.v;
    Eigen::VectorXd d = lsq_step(A, r);
    w -= d.head<3>();
    t -= d[3];
    s -= d[4];
    w.normalize();
    if (t <= 0 || std::abs(s) > 2.5) return std::nullopt;
    if (d.norm() < 1e-15) break;
  }
  Vec4 z = null_direction(gx, w, future);
  double res = (geodesic_endpoint(g, x, z, t).x - mu.path.position(s)).norm();
  if (res > 1e-9) return std::nullopt;
  return s;
}

namespace {

// guess from the chart-frozen light cone at x
std::optional<double> frozen_guess(const Mat4& gx, const Observer& mu, const Vec4& x, bool future) {
  const auto& st = mu.path.states;
  auto Q = [&](const Vec4& p) {
    Vec4 d = p - x;
    double tdir = future ? d[0] : -d[0];
    double q = d.dot(gx * d);
    return tdir > 0 && q <= 0 ? -1.0 : 1.0;  // -1 inside the frozen cone
  };
  if (future) {
    if (Q(st.front().x) < 0) return st.front().s;
    for (size_t i = 1; i < st.size(); ++i)
      if (Q(st[i].x) < 0) {
        double a = st[i - 1].s, b = st[i].s;
        for (int k = 0; k < 40; ++k) {
          double c = 0.5 * (a + b);
          (Q(mu.path.position(c)) < 0 ? b : a) = c;
        }
        return b;
      }
  } else {
    if (Q(st.back().x) < 0) return st.back().s;
    for (size_t i = st.size() - 1; i-- > 0;)
      if (Q(st[i].x) < 0) {
        double a = st[i].s, b = st[i + 1].s;
        for (int k = 0; k < 40; ++k) {
          double c = 0.5 * (a + b);
          (Q(mu.path.position(c)) < 0 ? a : b) = c;
        }
        return a;
      }
  }
  return std::nullopt;
}

double f_side(const MetricProvider& g, const Observer& mu, const Vec4& x, bool future) {
  Mat4 gx = g.eval(x);
  auto guess = frozen_guess(gx, mu, x, future);
  if (!guess) return future ? INFINITY : -INFINITY;
  Vec4 m = mu.path.position(*guess);
  Eigen::Vector3d w = spatial(m - x);
  std::optional<double> best;
  if (w.norm() < 1e-13) {
    best = *guess;  // x on the observer
  } else {
    best = cone_hits_observer(g, mu, x, future, *guess, w);
    if (!g.is_flat()) {
      auto [e1, e2] = transverse_pair(w.normalized());
      for (int k = 0; k < 4; ++k) {
        double phi = 0.5 * std::numbers::pi * k;
        Eigen::Vector3d w2 = w.normalized() + 0.3 * (std::cos(phi) * e1 + std::sin(phi) * e2);
        auto s = cone_hits_observer(g, mu, x, future, *guess, w2);
        if (s && (!best || (future ? *s < *best - 1e-9 : *s > *best + 1e-9))) best = s;
      }
    }
  }
  if (!best) return future ? INFINITY : -INFINITY;
  return *best;
}

void check_diamond(const MetricProvider& g, const Observer& mu, const Vec4& x) {
  if (f_side(g, mu, x, true) > 1.0 + 1e-12) throw OutOfDiamond("point is not in the causal past of mu(1)");
  if (f_side(g, mu, x, false) < -1.0 - 1e-12) throw OutOfDiamond("point is not in the causal future of mu(-1)");
}

}  // namespace

double f_plus(const MetricProvider& g, const Observer& mu, const Vec4& x, bool require_diamond) {
  if (require_diamond) check_diamond(g, mu, x);
  return std::clamp(f_side(g, mu, x, true), -1.0, 1.0);
}

double f_minus(const MetricProvider& g, const Observer& mu, const Vec4& x, bool require_diamond) {
  if (require_diamond) check_diamond(g, mu, x);
  return std::clamp(f_side(g, mu, x, false), -1.0, 1.0);
}

double f_plus_bisect(const MetricProvider& g, const Observer& mu, const Vec4& x, double tol) {
  auto inside = [&](double s) { return time_separation(g, x, mu.path.position(s)) > 0.0; };
  if (inside(-1.0)) return -1.0;
  if (!inside(1.0)) return 1.0;
  double a = -1.0, b = 1.0;
  while (b - a > tol) {
    double c = 0.5 * (a + b);
    (inside(c) ? b : a) = c;
  }
  return 0.5 * (a + b);
}

std::optional<EarliestHit> earliest_point(const Observer& mu, const std::vector<Vec4>& W, double eps) {
  std::optional<double> best;
  const auto& st = mu.path.states;
  for (const Vec4& w : W) {
    // coarse: nearest sample inside [−1,1]
    double bd = INFINITY;
    size_t bi = 0;
    for (size_t i = 0; i < st.size(); ++i) {
      if (st[i].s < -1.0 - 1e-12 || st[i].s > 1.0 + 1e-12) continue;
      double d = (st[i].x - w).norm();
      if (d < bd) {
        bd = d;
        bi = i;
      }
    }
    double a = std::max(-1.0, st[bi > 0 ? bi - 1 : 0].s), b = std::min(1.0, st[std::min(bi + 1, st.size() - 1)].s);
    auto dist = [&](double s) { return (mu.path.position(s) - w).norm(); };
    const double gr = 0.5 * (std::sqrt(5.0) - 1);
    double c = b - gr * (b - a), d = a + gr * (b - a);
    for (int k = 0; k < 100 && b - a > 1e-14; ++k) {
      if (dist(c) < dist(d)) b = d;
      else a = c;
      c = b - gr * (b - a);
      d = a + gr * (b - a);
    }
    double s = 0.5 * (a + b);
    if (dist(s) <= eps && (!best || s < *best)) best = s;
  }
  if (!best) return std::nullopt;
  return EarliestHit{*best, mu.path.position(*best)};
}

std::optional<EarliestHit> earliest_point(const Observer& mu, const std::function<double(const Vec4&)>& indicator,
                                          double tol) {
  const auto& st = mu.path.states;
  double prev_s = -1.0;
  if (indicator(mu.path.position(-1.0)) >= 0) return EarliestHit{-1.0, mu.path.position(-1.0)};
  for (size_t i = 0; i < st.size(); ++i) {
    if (st[i].s <= -1.0) continue;
    double s = std::min(st[i].s, 1.0);
    if (indicator(mu.path.position(s)) >= 0) {
      double a = prev_s, b = s;
      while (b - a > tol) {
        double c = 0.5 * (a + b);
        (indicator(mu.path.position(c)) >= 0 ? b : a) = c;
      }
      return EarliestHit{b, mu.path.position(b)};
    }
    prev_s = s;
    if (s >= 1.0) break;
  }
  return std::nullopt;
}

ObservationRecord earliest_light_observation_set(const MetricProvider& g, const Vec4& q,
                                                 const ObserverFamily& family) {
  ObservationRecord r;
  r.q = q;
  r.values.reserve(family.size());
  for (const auto& o : family.observers()) r.values.push_back(f_plus(g, o, q));
  return r;
}

namespace {

std::optional<double> conjugate_in_path(const GeodesicPath& p) {
  const auto& st = p.states;
  auto det = [&](double s) { return p.jacobi(s).determinant(); };
  auto ratio = [&](double s) {
    Eigen::JacobiSVD<Eigen::Matrix4d> svd(p.jacobi(s));
    return svd.singularValues()[3] / svd.singularValues()[0];
  };
  double prev_det = 0, prev_ratio = 1, prev2_ratio = 1;
  for (size_t i = 1; i < st.size(); ++i) {
    double s = st[i].s;
    double d = p.J[i].determinant();
    Eigen::JacobiSVD<Eigen::Matrix4d> svd(p.J[i]);
    double r = svd.singularValues()[3] / svd.singularValues()[0];
    if (i >= 2 && ((d > 0) != (prev_det > 0))) {
      double a = st[i - 1].s, b = s;
      bool fa = prev_det > 0;
      while (b - a > 1e-12) {
        double c = 0.5 * (a + b);
        ((det(c) > 0) == fa ? a : b) = c;
      }
      return 0.5 * (a + b);
    }
    // double root: local minimum of σ_min/σ_max touching zero
    if (i >= 3 && prev_ratio < prev2_ratio && prev_ratio <= r && prev_ratio < 1e-3) {
      double a = st[i - 2].s, b = s;
      const double gr = 0.5 * (std::sqrt(5.0) - 1);
      for (int k = 0; k < 80; ++k) {
        double c = b - gr * (b - a), e = a + gr * (b - a);
        if (ratio(c) < ratio(e)) b = e;
        else a = c;
      }
      double m = 0.5 * (a + b);
      if (ratio(m) < 1e-6) return m;
    }
    prev2_ratio = prev_ratio;
    prev_ratio = r;
    prev_det = d;
  }
  return std::nullopt;
}

}  // namespace

std::optional<double> first_conjugate(const MetricProvider& g, const Vec4& x, const Vec4& xi, double horizon) {
  if (g.is_flat()) return std::nullopt;
  FlowOptions o;
  o.jacobi = true;
  o.sample_step = 1e-2;
  return conjugate_in_path(geodesic_flow(g, x, xi, horizon, o));
}

CutResult cut_locus(const MetricProvider& g, const Vec4& x, const Vec4& xi, const CutOptions& opt) {
  CutResult r;
  r.rho = opt.horizon;
  if (g.is_flat()) return r;
  FlowOptions o;
  o.jacobi = true;
  o.sample_step = 1e-2;
  GeodesicPath p = geodesic_flow(g, x, xi, opt.horizon, o);
  if (auto c = conjugate_in_path(p)) {
    r.conjugate = *c;
    r.rho = *c;
    r.found = true;
  }
  if (opt.check_competing) {
    double lim = r.rho;
    auto timelike = [&](double s) { return time_separation(g, x, p.position(s), opt.shoot) > 0.0; };
    double prev = 0.0;
    for (double s = opt.competing_step; s < lim; s += opt.competing_step) {
      if (timelike(s)) {
        double a = prev, b = s;
        for (int k = 0; k < 30; ++k) {
          double c = 0.5 * (a + b);
          (timelike(c) ? b : a) = c;
        }
        r.competing = b;
        if (b < r.rho) {
          r.rho = b;
          r.found = true;
        }
        break;
      }
      prev = s;
    }
  }
  return r;
}

namespace {

// nearest parameter on path to point p, searched near matching time coordinate
double closest_param(const GeodesicPath& P, const Vec4& p, double lo, double hi) {
  const auto& st = P.states;
  // time coordinate is monotone along future null geodesics
  auto it = std::lower_bound(st.begin(), st.end(), p[0], [](const GeodesicState& a, double t) { return a.x[0] < t; });
  double s = it == st.end() ? st.back().s : it->s;
  s = std::clamp(s, lo, hi);
  for (int k = 0; k < 30; ++k) {
    GeodesicState a = P.at(s);
    Vec4 d = a.x - p;
    double f = d.dot(a.v);
    double h = 1e-4;
    Vec4 acc = (P.at(s + h).v - P.at(s - h).v) / (2 * h);
    double fp = a.v.dot(a.v) + d.dot(acc);
    if (fp <= 0) break;
    double ns = std::clamp(s - f / fp, lo, hi);
    if (std::abs(ns - s) < 1e-15) break;
    s = ns;
  }
  return s;
}

}  // namespace

std::optional<Intersection> intersection_point(const MetricProvider& g, const NullTuple& T, double t0,
                                               const IntersectionOptions& opt) {
  std::array<GeodesicPath, 4> P;
  std::array<double, 4> hi;
  for (int j = 0; j < 4; ++j) {
    FlowOptions o;
    o.jacobi = opt.pre_cut && !g.is_flat();
    o.sample_step = 5e-3;
    P[j] = geodesic_flow(g, T.x[j], T.xi[j], opt.span, o);
    hi[j] = opt.span;
    if (o.jacobi)
      if (auto c = conjugate_in_path(P[j])) hi[j] = *c;
  }
  if (hi[0] <= t0) return std::nullopt;
  std::vector<Intersection> found;
  auto D = [&](double s1, std::array<double, 4>& sp) {
    Vec4 p = P[0].position(s1);
    double m = 0;
    sp[0] = s1;
    for (int j = 1; j < 4; ++j) {
      sp[j] = closest_param(P[j], p, t0, hi[j]);
      m = std::max(m, (P[j].position(sp[j]) - p).norm());
    }
    return m;
  };
  int n = opt.scan;
  double ds = (hi[0] - t0) / n;
  std::vector<double> vals(n + 1);
  std::vector<std::array<double, 4>> sps(n + 1);
  for (int i = 0; i <= n; ++i) vals[i] = D(t0 + i * ds, sps[i]);
  for (int i = 0; i <= n; ++i) {
    bool localmin = (i == 0 || vals[i] <= vals[i - 1]) && (i == n || vals[i] <= vals[i + 1]);
    if (!localmin || vals[i] > 20 * ds + 10 * opt.tol) continue;
    // Gauss-Newton on the four parameters
    std::array<double, 4> s = sps[i];
    double best = INFINITY;
    for (int it = 0; it < 40; ++it) {
      Eigen::Matrix<double, 12, 4> A = Eigen::Matrix<double, 12, 4>::Zero();
      Eigen::Matrix<double, 12, 1> r;
      GeodesicState a = P[0].at(s[0]);
      for (int j = 1; j < 4; ++j) {
        GeodesicState b = P[j].at(s[j]);
        r.segment<4>(4 * (j - 1)) = a.x - b.x;
        A.block<4, 1>(4 * (j - 1), 0) = a.v;
        A.block<4, 1>(4 * (j - 1), j) = -b.v;
      }
      best = r.norm();
      if (best < 1e-14) break;
      Eigen::Vector4d d = A.colPivHouseholderQr().solve(r);
      for (int j = 0; j < 4; ++j) s[j] -= d[j];
      if (d.norm() < 1e-15) break;
    }
    bool inside = true;
    for (int j = 0; j < 4; ++j) inside = inside && s[j] > t0 && s[j] < hi[j];
    double spread = 0;
    Vec4 q = Vec4::Zero();
    for (int j = 0; j < 4; ++j) q += 0.25 * P[j].position(s[j]);
    for (int j = 0; j < 4; ++j) spread = std::max(spread, (P[j].position(s[j]) - q).norm());
    if (!inside || spread > opt.tol) continue;
    bool dup = std::any_of(found.begin(), found.end(), [&](const Intersection& f) { return (f.q - q).norm() < 1e-6; });
    if (!dup) found.push_back({q, s, 1});
  }
  if (found.empty()) return std::nullopt;
  std::sort(found.begin(), found.end(), [](const Intersection& a, const Intersection& b) { return a.q[0] < b.q[0]; });
  Intersection out = found.front();
  out.multiplicity = static_cast<int>(found.size());
  return out;
}

std::vector<NullTuple> direction_tuples_for(const MetricProvider& g, const Vec4& q, const Vec4& y, double t0,
                                            int count, const TupleOptions& opt) {
  auto link = null_connect(g, y, q, true, 1e-9);
  if (!link) throw TopologyError("no null geodesic from y to q");
  if (link->t <= t0) throw TopologyError("q is within t0 of y along the connecting geodesic");
  Vec4 theta = -geodesic_endpoint(g, y, link->zeta, link->t).v;
  double c0 = geodesic_endpoint(g, y, link->zeta, t0).x[0];
  Mat4 gq = g.eval(q);
  Eigen::Vector3d n = spatial(theta).normalized();
  auto [e1, e2] = transverse_pair(n);
  double a = opt.perturbation;
  std::vector<NullTuple> out;
  for (int m = 0; m < count; ++m) {
    NullTuple T;
    T.x[0] = y;
    T.xi[0] = link->zeta;
    double phase = 2 * std::numbers::pi * m / (3.0 * std::max(count, 1));
    for (int j = 1; j < 4; ++j) {
      double phi = phase + 2 * std::numbers::pi * (j - 1) / 3.0;
      Eigen::Vector3d nj = std::cos(a) * n + std::sin(a) * (std::cos(phi) * e1 + std::sin(phi) * e2);
      Vec4 eta = null_direction(gq, nj, false);
      eta *= theta[0] / eta[0];
      // past geodesic from q down to the slice x^0 = c0, then t0 further
      double len = 2.0 * (q[0] - c0) / std::abs(eta[0]) + 2.0 * t0 + 0.5;
      GeodesicPath P = geodesic_flow(g, q, eta, len);
      const auto& st = P.states;
      size_t i = 1;
      while (i < st.size() && st[i].x[0] > c0) ++i;
      if (i == st.size()) throw TopologyError("companion geodesic does not reach the t0 slice");
      double lo = st[i - 1].s, hi = st[i].s;
      for (int k = 0; k < 60; ++k) {
        double c = 0.5 * (lo + hi);
        (P.position(c)[0] > c0 ? lo : hi) = c;
      }
      double rj = 0.5 * (lo + hi);
      GeodesicState e = geodesic_endpoint(g, q, eta, rj + t0);
      T.x[j] = e.x;
      T.xi[j] = -e.v;
    }
    // (i) distinct directions, (ii) within the perturbation cone
    for (int j = 0; j < 4; ++j)
      for (int k = j + 1; k < 4; ++k) {
        Eigen::Vector3d aj = spatial(T.xi[j]).normalized(), ak = spatial(T.xi[k]).normalized();
        if ((aj - ak).norm() < 1e-9) throw AdmissibilityError("clause (i): parallel tuple directions");
      }
    out.push_back(T);
  }
  return out;
}

}  // namespace lorentz
