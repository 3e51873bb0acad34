#pragma once
// independent reference computations shared by unit and acceptance tests

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <optional>

namespace oracle {

// rays of the optical metric n(y)^2|dy|^2 in arclength: y' = p/n^2, p' = |p|^2 ∇n / n^3
struct OpticalTracer {
  std::function<double(const Eigen::Vector3d&, Eigen::Vector3d&)> n;  // index and gradient
  double h = 1e-3;

  using S = Eigen::Matrix<double, 6, 1>;
  S rhs(const S& s) const {
    Eigen::Vector3d gr;
    double nn = n(s.head<3>(), gr);
    Eigen::Vector3d p = s.tail<3>();
    S d;
    d.head<3>() = p / (nn * nn);
    d.tail<3>() = p.squaredNorm() * gr / (nn * nn * nn);
    return d;
  }
  S start(const Eigen::Vector3d& y, const Eigen::Vector3d& dir) const {
    Eigen::Vector3d gr;
    S s;
    s.head<3>() = y;
    s.tail<3>() = n(y, gr) * dir.normalized();
    return s;
  }
  S step(const S& s) const {
    S k1 = rhs(s), k2 = rhs(s + 0.5 * h * k1), k3 = rhs(s + 0.5 * h * k2), k4 = rhs(s + h * k3);
    return s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
};

inline Eigen::Vector3d rotate(const Eigen::Vector3d& v, const Eigen::Vector3d& axis, double ang) {
  return Eigen::AngleAxisd(ang, axis.normalized()) * v;
}

// first crossing of a ray pair ±delta about `axis`, separation measured along `normal`
inline std::optional<double> pair_crossing(const OpticalTracer& T, const Eigen::Vector3d& y0,
                                           const Eigen::Vector3d& dir, const Eigen::Vector3d& axis,
                                           const Eigen::Vector3d& normal, double delta, double smax) {
  auto a = T.start(y0, rotate(dir, axis, delta));
  auto b = T.start(y0, rotate(dir, axis, -delta));
  double prev = 0;
  bool first = true;
  for (double s = 0; s < smax; s += T.h) {
    a = T.step(a);
    b = T.step(b);
    double d = (a.head<3>() - b.head<3>()).dot(normal);
    if (!first && (d > 0) != (prev > 0)) return s + T.h * prev / (prev - d);
    prev = d;
    first = false;
  }
  return std::nullopt;
}

// first conjugate arclength of a ray in a spherically symmetric lens centered at c
inline std::optional<double> lens_conjugate(const OpticalTracer& T, const Eigen::Vector3d& c, const Eigen::Vector3d& y0,
                                            const Eigen::Vector3d& dir, double smax, double delta = 1e-5) {
  Eigen::Vector3d axis = y0 - c;
  Eigen::Vector3d pn = axis.cross(dir).normalized();  // normal of the meridional plane
  // tangential: rotate within the plane, separation along the in-plane normal of dir
  Eigen::Vector3d inplane = pn.cross(dir).normalized();
  auto t = pair_crossing(T, y0, dir, pn, inplane, delta, smax);
  // sagittal: rotate about the symmetry axis, separation along the plane normal
  auto s = pair_crossing(T, y0, dir, axis, pn, delta, smax);
  if (t && s) return std::min(*t, *s);
  return t ? t : s;
}

}  // namespace oracle
