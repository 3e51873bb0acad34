#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "lorentz/causal.hpp"
#include "lorentz/errors.hpp"
#include "oracles.hpp"

using namespace lorentz;

namespace {

Mat4 eta() { return Eigen::Vector4d(-1, 1, 1, 1).asDiagonal(); }

ObserverFamily flat_family() {
  static Minkowski m;
  ObserverFamilySpec s;
  s.radius = 0.1;
  s.grid = 3;
  return ObserverFamily::build(m, s);
}

}  // namespace

TEST_CASE("geodesic flow") {
  Minkowski m;
  Vec4 x0(0.1, 0.2, -0.3, 0.4), v0(1.0, 0.3, 0.2, -0.5);
  auto p = geodesic_flow(m, x0, v0, 2.0);
  for (double s : {0.0, 0.37, 1.5, 2.0}) CHECK((p.position(s) - (x0 + s * v0)).norm() < 1e-12);

  DeSitterLike ds;
  Vec4 y0(0.0, 0.1, 0.0, 0.0);
  Vec4 n = null_direction(ds.eval(y0), Eigen::Vector3d(1, 0.5, -0.2));
  FlowOptions o;
  o.tol = 1e-12;
  auto q = geodesic_flow(ds, y0, n, 5.0, o);
  double drift = 0;
  for (const auto& st : q.states) drift = std::max(drift, std::abs(st.v.dot(ds.eval(st.x) * st.v)));
  CHECK(drift <= 1e-10);
  for (const auto& st : q.states) CHECK(classify(ds.eval(st.x), st.v) == CausalClass::null);

  auto pert = make_metric("perturbed(minkowski,0.05,3)");
  Vec4 v1(1.0, 0.4, 0.1, 0.0);
  auto e = geodesic_endpoint(*pert, x0, v1, 1.3);
  auto back = geodesic_endpoint(*pert, e.x, -e.v, 1.3);
  CHECK((back.x - x0).norm() < 1e-9);
  // backward flow agrees with the forward flow of the reversed vector
  auto b2 = geodesic_endpoint(*pert, e.x, e.v, -1.3);
  CHECK((b2.x - x0).norm() < 1e-9);
}

TEST_CASE("classification band") {
  CHECK(classify(eta(), Vec4(1, 1, 0, 0)) == CausalClass::null);
  CHECK(classify(eta(), Vec4(1, 0.5, 0, 0)) == CausalClass::timelike);
  CHECK(classify(eta(), Vec4(0.5, 1, 0, 0)) == CausalClass::spacelike);
}

TEST_CASE("time separation") {
  Minkowski m;
  CHECK(time_separation(m, Vec4::Zero(), Vec4(2, 1, 0, 0)) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-13));
  CHECK(time_separation(m, Vec4::Zero(), Vec4(1, 2, 0, 0)) == 0.0);
  CHECK(time_separation(m, Vec4::Zero(), Vec4(-2, 1, 0, 0)) == 0.0);
  ProductLens lens(0.2, 0.5);
  Vec4 p(0, 0.3, -0.1, 0.2);
  CHECK(time_separation(lens, p, p + Vec4(0.8, 0, 0, 0)) == doctest::Approx(0.8).epsilon(1e-9));
}

TEST_CASE("reverse triangle inequality on Minkowski") {
  Minkowski m;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    Vec4 x(0, u(rng), u(rng), u(rng));
    Vec4 y = x + Vec4(1.0, u(rng), u(rng), u(rng));
    Vec4 z = y + Vec4(1.0, u(rng), u(rng), u(rng));
    double a = time_separation(m, x, y), b = time_separation(m, y, z), c = time_separation(m, x, z);
    if (a > 0 && b > 0) {
      CHECK(c >= a + b - 1e-6);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("f plus / f minus on Minkowski") {
  Minkowski m;
  auto fam = flat_family();
  const Observer& mu = fam.center();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  for (int i = 0; i < 30; ++i) {
    Vec4 x(u(rng), u(rng), u(rng), u(rng));
    double r = x.tail<3>().norm();
    if (std::abs(x[0]) + r > 0.95) continue;
    CHECK(f_plus(m, mu, x) == doctest::Approx(x[0] + r).epsilon(1e-12));
    CHECK(f_minus(m, mu, x) == doctest::Approx(x[0] - r).epsilon(1e-12));
    CHECK(f_plus_bisect(m, mu, x) == doctest::Approx(x[0] + r).epsilon(1e-8));
  }
  CHECK(f_minus(m, mu, mu.path.position(0.35)) == doctest::Approx(0.35).epsilon(1e-12));
  CHECK(f_plus(m, mu, mu.path.position(-0.2)) == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK_THROWS_AS(f_plus(m, mu, Vec4(0.0, 1.5, 0, 0), true), OutOfDiamond);
  // continuity along a convergent sequence
  Vec4 x(0.1, 0.2, -0.1, 0.05);
  double fx = f_plus(m, mu, x);
  for (double h : {1e-2, 1e-3, 1e-4, 1e-5}) CHECK(std::abs(f_plus(m, mu, x + Vec4(h, -h, h, 0)) - fx) < 3 * h + 1e-12);
  // monotone along a future causal curve
  double prev = -2;
  for (double s = 0; s < 0.5; s += 0.05) {
    double v = f_plus(m, mu, x + Vec4(s, 0.5 * s, 0, 0));
    CHECK(v >= prev - 1e-6);
    prev = v;
  }
}

TEST_CASE("f plus on the product metric agrees with the bisection definition") {
  ProductLens lens(0.2, 0.5);
  auto mu = ObserverFamily::make_observer(lens, Vec4::Zero(), Vec4(1, 0, 0, 0));
  Vec4 x(-0.2, 0.3, 0.1, -0.1);
  ShootOptions so;
  CHECK(f_plus(lens, mu, x) == doctest::Approx(f_plus_bisect(lens, mu, x, 1e-7)).epsilon(1e-6));
}

TEST_CASE("earliest point") {
  auto fam = flat_family();
  const Observer& mu = fam.observers()[3];
  std::vector<Vec4> W{mu.path.position(0.7), mu.path.position(0.3)};
  auto h = earliest_point(mu, W);
  REQUIRE(h);
  CHECK(h->s == doctest::Approx(0.3).epsilon(1e-10));
  CHECK(!earliest_point(mu, std::vector<Vec4>{Vec4(0, 5, 5, 5)}));
  Vec4 q(-0.4, 0.1, 0.2, 0.0);
  Minkowski m;
  auto cone = [&](const Vec4& p) { return cone_offset(m, q, p); };
  auto c = earliest_point(mu, cone);
  REQUIRE(c);
  double want = q[0] + (mu.z.tail<3>() - q.tail<3>()).norm();
  CHECK(c->s == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("earliest light observation set") {
  Minkowski m;
  auto fam = flat_family();
  Vec4 q(-0.3, 0.2, 0.1, -0.15);
  auto rec = earliest_light_observation_set(m, q, fam);
  REQUIRE(rec.values.size() == 27);
  for (size_t i = 0; i < fam.size(); ++i) {
    double want = q[0] + (fam.observers()[i].z.tail<3>() - q.tail<3>()).norm();
    CHECK(rec.values[i] == doctest::Approx(std::min(want, 1.0)).epsilon(1e-12));
  }
  Vec4 on = fam.observers()[5].path.position(-0.25);
  CHECK(earliest_light_observation_set(m, on, fam).values[5] == doctest::Approx(-0.25).epsilon(1e-12));
  // injectivity on a random sample
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  std::vector<ObservationRecord> recs;
  for (int i = 0; i < 50; ++i) recs.push_back(earliest_light_observation_set(m, Vec4(u(rng), u(rng), u(rng), u(rng)), fam));
  for (size_t i = 0; i < recs.size(); ++i)
    for (size_t j = i + 1; j < recs.size(); ++j) {
      double d = 0;
      for (size_t k = 0; k < fam.size(); ++k) d = std::max(d, std::abs(recs[i].values[k] - recs[j].values[k]));
      CHECK(d > 1e-6);
    }
}

TEST_CASE("cut locus") {
  Minkowski m;
  auto r = cut_locus(m, Vec4::Zero(), Vec4(1, 1, 0, 0));
  CHECK(!r.found);
  CHECK(r.rho == 4.0);

  ProductLens lens(0.5, 0.5);
  oracle::OpticalTracer T;
  T.n = [&](const Eigen::Vector3d& y, Eigen::Vector3d& g) { return lens.index(y, &g); };
  Eigen::Vector3d y0(-1.5, 0.15, 0), dir(1, 0, 0);
  auto want = oracle::lens_conjugate(T, Eigen::Vector3d::Zero(), y0, dir, 6.0);
  REQUIRE(want);
  Vec4 x(0, -1.5, 0.15, 0);
  CutOptions co;
  co.horizon = 6.0;
  auto c = cut_locus(lens, x, null_direction(lens.eval(x), dir), co);
  CHECK(c.found);
  CHECK(c.conjugate == doctest::Approx(*want).epsilon(1e-3 / *want));
  // lower semicontinuity spot check under small perturbations
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1e-3, 1e-3);
  for (int i = 0; i < 5; ++i) {
    Vec4 xp = x + Vec4(0, u(rng), u(rng), u(rng));
    auto cp = cut_locus(lens, xp, null_direction(lens.eval(xp), dir + Eigen::Vector3d(0, u(rng), u(rng))), co);
    CHECK(cp.rho <= c.rho + 0.05);
  }
}

TEST_CASE("direction tuples and intersection") {
  Minkowski m;
  Vec4 q(0.2, 0.1, 0.3, -0.1);
  Vec4 y = q - 0.6 * Vec4(1, 0.6, 0.8, 0).normalized() * std::sqrt(2.0);
  y = q - 0.6 * Vec4(1, 0.6, 0.8, 0);
  auto tuples = direction_tuples_for(m, q, y, 0.05, 3);
  REQUIRE(tuples.size() == 3);
  for (const auto& T : tuples) {
    for (int j = 0; j < 4; ++j) CHECK(classify(eta(), T.xi[j]) == CausalClass::null);
    auto I = intersection_point(m, T, 0.05);
    REQUIRE(I);
    CHECK((I->q - q).norm() < 1e-8);
  }
  // shrinking perturbation: directions converge to the reference
  TupleOptions small;
  small.perturbation = 1e-4;
  auto t2 = direction_tuples_for(m, q, y, 0.05, 1, small);
  for (int j = 1; j < 4; ++j)
    CHECK((t2[0].xi[j].normalized() - t2[0].xi[0].normalized()).norm() < 1e-3);
  // parallel translate by 0.1: misses
  NullTuple moved = tuples[0];
  moved.x[2] += Vec4(0, 0, 0, 0.1);
  CHECK(!intersection_point(m, moved, 0.05));
}

TEST_CASE("intersection beyond a conjugate point is rejected") {
  ProductLens lens(0.5, 0.5);
  Vec4 x(0, -1.5, 0.15, 0);
  Vec4 xi = null_direction(lens.eval(x), Eigen::Vector3d(1, 0, 0));
  auto c = first_conjugate(lens, x, xi, 6.0);
  REQUIRE(c);
  // q before and after the conjugate point on the same geodesic
  for (double frac : {0.7, 1.15}) {
    Vec4 q = geodesic_endpoint(lens, x, xi, frac * *c).x;
    NullTuple T;
    T.x[0] = x;
    T.xi[0] = xi;
    // companions arriving at q from other directions
    Mat4 gq = lens.eval(q);
    for (int j = 1; j < 4; ++j) {
      double phi = 2.0944 * j;
      Eigen::Vector3d n(-1, 0.3 * std::cos(phi), 0.3 * std::sin(phi));
      Vec4 eta = null_direction(gq, n, false);
      auto e = geodesic_endpoint(lens, q, eta, 0.8);
      T.x[j] = e.x;
      T.xi[j] = -e.v;
    }
    IntersectionOptions io;
    io.span = 6.0;
    auto I = intersection_point(lens, T, 0.05, io);
    if (frac < 1) {
      REQUIRE(I);
      CHECK((I->q - q).norm() < 1e-7);
    } else {
      CHECK(!I);
    }
  }
}
