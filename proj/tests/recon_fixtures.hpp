#pragma once

#include <random>

#include "lorentz/reconstruction.hpp"

namespace fixture {

using namespace lorentz;

inline Scenario flat_scenario() {
  Scenario sc;
  sc.family.grid = 2;
  sc.kappa2 = sc.s_plus - sc.s_minus;
  return sc;
}

// the curved acceptance metric with its diamond
inline Scenario curved_scenario() {
  Scenario sc = flat_scenario();
  sc.metric = "product(0.1,0.8)";
  sc.s_minus = -0.4;
  sc.s_plus = 0.4;
  sc.s_plus2 = 0.6;
  sc.kappa2 = sc.s_plus - sc.s_minus;
  return sc;
}

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Vector3d w(n(rng), n(rng), n(rng));
  return w.normalized();
}

// a tuple through q whose first geodesic starts at a past point of q
inline NullTuple tuple_through(const MetricProvider& g, const Vec4& q, const Eigen::Vector3d& from, double reach,
                               double t0, double angle = 0.02) {
  Vec4 z = null_direction(g.eval(q), from, false);
  Vec4 src = geodesic_endpoint(g, q, z / std::abs(z[0]), reach).x;
  TupleOptions to;
  to.perturbation = angle;
  return direction_tuples_for(g, q, src, t0, 1, to).front();
}

struct ObservationSample {
  Vec4 y;
  Vec4 zeta;  // ζ⁰ = 1
  double s1;
};

// y beside μ̂(s), ζ aimed at the axis and rotated away by α, s1 inside the window the geodesic can reach
inline ObservationSample observation_sample(std::mt19937_64& rng, const Experiment& ex, double s_lo = -0.4,
                                            double s_hi = 0.1) {
  std::uniform_real_distribution<double> u(0, 1);
  const auto& g = ex.metric();
  double s = s_lo + (s_hi - s_lo) * u(rng);
  double dn = 0.05 + 0.1 * u(rng);
  double alpha = 0.1 + 0.3 * u(rng);
  Eigen::Vector3d d = random_unit(rng);
  Eigen::Vector3d perp = d.cross(random_unit(rng)).normalized();
  ObservationSample o;
  o.y = ex.mu(s);
  o.y.tail<3>() += dn * d;
  Eigen::Vector3d w = -std::cos(alpha) * d + std::sin(alpha) * perp;
  o.zeta = null_direction(g.eval(o.y), w, true);
  o.zeta /= o.zeta[0];
  o.s1 = s + 0.8 * dn * std::cos(alpha) * (0.05 + 0.9 * u(rng));
  return o;
}

}  // namespace fixture
