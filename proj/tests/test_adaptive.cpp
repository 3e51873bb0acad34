#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fixtures.hpp"
#include "lorentz/errors.hpp"
#include "lorentz/symbol.hpp"

using namespace lorentz;

namespace {

std::mt19937_64 rng(11);

// Leibniz formula, independent of any factorization
double leibniz_det(const Eigen::Matrix<double, 5, 5>& B) {
  std::array<int, 5> p{0, 1, 2, 3, 4};
  double det = 0;
  do {
    int inv = 0;
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) inv += p[i] > p[j];
    double t = inv % 2 ? -1.0 : 1.0;
    for (int i = 0; i < 5; ++i) t *= B(i, p[i]);
    det += t;
  } while (std::next_permutation(p.begin(), p.end()));
  return det;
}

// Newton on the full nonlinear system in the five unknowns S_A
Eigen::VectorXd newton_oracle(const PointFrame& f, const SourceInput& in, const Permutation& sg) {
  int L = f.L();
  Eigen::VectorXd S = Eigen::VectorXd::Zero(L);
  for (int i = 5; i < L; ++i) S[sg[i]] = in.Q[sg[i]];
  auto F = [&](const Eigen::VectorXd& s) {
    Eigen::Matrix<double, 5, 1> r;
    r.head<4>() = f.dphi * s + in.R;
    r[4] = s.dot(f.phi) + in.Q[f.K - 1] + s.squaredNorm() / (2 * f.m * f.m);
    return r;
  };
  for (int it = 0; it < 50; ++it) {
    Eigen::Matrix<double, 5, 5> J;
    for (int c = 0; c < 5; ++c) {
      int l = sg[c];
      J.block<4, 1>(0, c) = f.dphi.col(l);
      J(4, c) = f.phi[l] + S[l] / (f.m * f.m);
    }
    Eigen::Matrix<double, 5, 1> d = J.fullPivLu().solve(F(S));
    for (int c = 0; c < 5; ++c) S[sg[c]] -= d[c];
    if (d.norm() < 1e-17) break;
  }
  return S;
}

SourceInput random_input(const PointFrame& f, double norm) {
  SourceInput in;
  in.Q = Eigen::VectorXd::Random(f.K);
  in.R = Eigen::Vector4d::Random();
  double n = in.norm();
  in.Q *= norm / n;
  in.R *= norm / n;
  return in;
}

}  // namespace

TEST_CASE("Condition A matrix") {
  Minkowski m;
  auto f = PointFrame::at(m, fixture::canonical_fields(5), Vec4::Zero());
  auto c = condition_A_matrix(f, identity_permutation(5));
  CHECK((c.B - Eigen::Matrix<double, 5, 5>::Identity()).norm() == 0.0);
  CHECK(c.det == 1.0);
  CHECK(c.invertible);

  f.phi[4] = 0.0;
  auto s = condition_A_matrix(f, identity_permutation(5));
  CHECK_FALSE(s.invertible);
  CHECK(s.det == 0.0);

  for (int k = 0; k < 20; ++k) {
    auto g = fixture::random_frame(rng, 7, 8);
    auto r = condition_A_matrix(g, identity_permutation(7));
    CHECK(std::abs(r.det - leibniz_det(r.B)) <= 1e-12 * std::max(1.0, std::abs(r.det)));
  }
}

TEST_CASE("permutation choice") {
  Minkowski m;
  // identity subset degenerate (φ₅ ≡ 0), field 6 takes its place
  Eigen::VectorXd c = Eigen::VectorXd::Zero(6);
  c[5] = 2.0;
  Eigen::Matrix<double, 4, Eigen::Dynamic> grad = Eigen::Matrix<double, 4, Eigen::Dynamic>::Zero(4, 6);
  for (int l = 0; l < 4; ++l) grad(l, l) = 1.0;
  auto f = PointFrame::at(m, ScalarFieldFrame::affine(c, grad, 1.0), Vec4::Zero());
  auto sg = choose_permutation(f);
  CHECK(condition_A_matrix(f, sg).invertible);
  CHECK(std::find(sg.begin(), sg.begin() + 5, 5) != sg.begin() + 5);

  f.phi.setZero();
  CHECK_THROWS_AS(choose_permutation(f), ConditionAFailure);
}

TEST_CASE("fixed point") {
  Minkowski m;
  auto f = PointFrame::at(m, fixture::canonical_fields(5), Vec4::Zero());
  auto id = identity_permutation(5);
  SourceInput zero{Eigen::VectorXd::Zero(6), Eigen::Vector4d::Zero()};
  CHECK(solve_adaptive_sources(f, zero, id).S.norm() == 0.0);

  SourceInput in{Eigen::VectorXd::Zero(6), Eigen::Vector4d::Zero()};
  in.Q[5] = 1e-4;
  auto sol = solve_adaptive_sources(f, in, id);
  // S₅ + S₅²/2 = −Q_K
  CHECK(sol.S[4] == doctest::Approx(-1 + std::sqrt(1 - 2e-4)).epsilon(1e-13));
  CHECK((sol.S - newton_oracle(f, in, id)).norm() <= 1e-13);
  CHECK(sol.residual <= 1e-13);
  CHECK(stress_density_Z(sol.S, f.phi, f.m) == doctest::Approx(1e-4).epsilon(1e-12));

  for (int k = 0; k < 20; ++k) {
    auto g = fixture::random_frame(rng, 7, 9, 1e-3);
    auto sg = identity_permutation(7);
    auto gin = random_input(g, 5e-4);
    auto s = solve_adaptive_sources(g, gin, sg);
    CHECK((s.S - newton_oracle(g, gin, sg)).norm() <= 1e-12);
    CHECK(s.residual <= 1e-12);
    CHECK(std::abs(stress_density_Z(s.S, g.phi, g.m) - gin.Q[g.K - 1]) <= 1e-12);
    CHECK(conservation_residual_pointwise(g, s.S, gin.R).norm() <= 1e-11);
    for (int l = 5; l < 7; ++l) CHECK(s.S[l] == gin.Q[l]);
  }
}

TEST_CASE("Banach regime") {
  for (int k = 0; k < 20; ++k) {
    auto g = fixture::random_frame(rng, 6, 7);
    auto sg = identity_permutation(6);
    double radius = admission_radius(g, sg);
    auto s = solve_adaptive_sources(g, random_input(g, radius / 2), sg);
    for (size_t i = 2; i < s.steps.size(); ++i)
      if (s.steps[i - 1] > 1e-15) CHECK(s.steps[i] <= 0.5 * s.steps[i - 1]);
    CHECK_THROWS_AS(solve_adaptive_sources(g, random_input(g, 2 * radius), sg), RadiusExceeded);
  }
}

TEST_CASE("stress density") {
  CHECK(stress_density_Z(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3), 1.3) == 0.0);
  Eigen::VectorXd S(1), phi(1);
  double m = 1.7;
  S << m * m;
  phi << 0.0;
  CHECK(stress_density_Z(S, phi, m) == doctest::Approx(-m * m / 2));
}

TEST_CASE("pointwise conservation residual") {
  auto f = fixture::random_frame(rng, 6, 7);
  CHECK(conservation_residual_pointwise(f, Eigen::VectorXd::Zero(6), Eigen::Vector4d::Zero()).norm() == 0.0);
  Eigen::VectorXd S = Eigen::VectorXd::Random(6);
  Eigen::Vector4d R = Eigen::Vector4d::Random();
  auto base = conservation_residual_pointwise(f, S, R);
  S[3] += 0.25;
  CHECK((conservation_residual_pointwise(f, S, R) - base - 0.25 * f.dphi.col(3)).norm() < 1e-15);
}

TEST_CASE("source differential") {
  Minkowski m;
  auto f = PointFrame::at(m, fixture::canonical_fields(5), Vec4::Zero());
  auto sd = source_differential(f, identity_permutation(5));
  CHECK(sd.rank == 5);
  CHECK(sd.D.cols() == 10);

  auto f7 = PointFrame::at(m, fixture::canonical_fields(7), Vec4::Zero(), 9);
  auto sd7 = source_differential(f7, identity_permutation(7));
  for (int l = 5; l < 7; ++l) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(7);
    e[l] = 1;
    CHECK((sd7.D.col(l) - e).norm() == 0.0);
  }
  CHECK(sd7.rank == 7);

  for (int k = 0; k < 10; ++k) {
    auto g = fixture::random_frame(rng, 7, 9);
    auto sg = identity_permutation(7);
    auto d = source_differential(g, sg);
    CHECK(d.rank == 7);
    // central-difference Jacobian of the solver at 0
    const double h = 1e-7;
    SolveOptions o;
    o.enforce_radius = false;
    Eigen::MatrixXd J(7, g.K + 4);
    for (int c = 0; c < g.K + 4; ++c) {
      SourceInput p{Eigen::VectorXd::Zero(g.K), Eigen::Vector4d::Zero()}, q = p;
      if (c < g.K) {
        p.Q[c] = h;
        q.Q[c] = -h;
      } else {
        p.R[c - g.K] = h;
        q.R[c - g.K] = -h;
      }
      J.col(c) = (solve_adaptive_sources(g, p, sg, o).S - solve_adaptive_sources(g, q, sg, o).S) / (2 * h);
    }
    CHECK((J - d.D).cwiseAbs().maxCoeff() <= 1e-6);
  }

  // degenerate frame: Y_σ = 0 leaves only the pass-through block
  f7.phi[4] = 0.0;
  CHECK_THROWS_AS(source_differential(f7, identity_permutation(7)), ConditionAFailure);
  auto deg = source_differential(f7, identity_permutation(7), false);
  CHECK_FALSE(deg.condition_a);
  CHECK(deg.rank < 7);
}

TEST_CASE("linearized source") {
  auto f = fixture::random_frame(rng, 5, 6);
  Vec4 xi = fixture::random_null_covector(rng, f.ghat);
  auto id = identity_permutation(5);
  CHECK(linearized_source(f, xi, SymbolData::zero(6), id).norm() == 0.0);

  NullCovectorFrame fr{Vec4::Zero(), xi, f.ghat};
  auto d = SymbolData::zero(6);
  d.w2a = 0.7;
  d.va = -0.7 * trace_compensator(f.ghat, xi);
  auto out = linearized_source(f, xi, d, id);
  auto p = PolarizationVector::from_flat(out);
  CHECK((p.v - (d.va + 0.7 * f.ghat)).norm() < 1e-15);
  CHECK(conservation_residual(fr, p).norm() < 1e-12);
}

TEST_CASE("linearized source image") {
  for (int L : {5, 6}) {
    for (int k = 0; k < 10; ++k) {
      auto f = fixture::random_frame(rng, L, L + 1);
      Vec4 xi = fixture::random_null_covector(rng, f.ghat);
      auto img = linearized_source_image(f, xi, identity_permutation(L));
      CHECK(img.cols() == L + 6);
      NullCovectorFrame fr{Vec4::Zero(), xi, f.ghat};
      auto ker = constraint_space_basis(fr, Constraint::conservation, L);
      CHECK((img - ker * (ker.transpose() * img)).norm() <= 1e-8);
      CHECK((ker - img * (img.transpose() * ker)).norm() <= 1e-8);
    }
  }
}
