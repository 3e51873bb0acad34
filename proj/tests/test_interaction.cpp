#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "lorentz/errors.hpp"
#include "lorentz/interaction.hpp"
#include "lorentz/symbol.hpp"

using namespace lorentz;
using cd = std::complex<double>;

namespace {

std::mt19937_64 rng(5);

const TermCatalog& catalog() {
  static TermCatalog c = TermCatalog::load(TermCatalog::default_path());
  return c;
}

double eta_pair(const Vec4& a, const Vec4& b) { return -a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]; }

// ĝ^{jk}∂_j∂_k by central differences
cd fd_box_h(const std::function<cd(const Vec4&)>& f, const Vec4& x, double h) {
  cd out = 0.0;
  for (int j = 0; j < 4; ++j) {
    Vec4 e = Vec4::Zero();
    e[j] = h;
    cd d2 = (f(x + e) - 2.0 * f(x) + f(x - e)) / (h * h);
    out += (j == 0 ? -1.0 : 1.0) * d2;
  }
  return out;
}

// one Richardson step removes the h² term
cd fd_box(const std::function<cd(const Vec4&)>& f, const Vec4& x, double h) {
  return (4.0 * fd_box_h(f, x, h / 2) - fd_box_h(f, x, h)) / 3.0;
}

// displayed ρ-denominator offsets (ρ₁, ρ₂, ρ₃, ρ₄): exponent −2(a − k_j + c_j)
const std::map<std::string, std::array<int, 4>> kPrinted = {
    {"T_QQ", {3, 2, 1, 3}},  {"Tt_QQ", {3, 2, 3, 2}}, {"T_IQ", {1, 1, 1, 3}}, {"Tt_IQ", {1, 1, 3, 2}},
    {"T_QI", {3, 2, 1, 1}},  {"Tt_QI", {3, 2, 1, 1}}, {"T_II", {1, 1, 1, 1}}, {"Tt_II", {1, 1, 1, 1}},
};
const std::map<std::string, int> kPrintedTau = {{"T_QQ", 12}, {"Tt_QQ", 12}, {"T_IQ", 10}, {"Tt_IQ", 10},
                                                {"T_QI", 10}, {"Tt_QI", 10}, {"T_II", 8},  {"Tt_II", 8}};

Mat4 random_sym() {
  std::normal_distribution<double> n;
  Mat4 m;
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) m(i, j) = m(j, i) = n(rng);
  return m;
}

}  // namespace

TEST_CASE("covectors are null with the exact pairing to the modulation") {
  std::uniform_real_distribution<double> u(1e-4, 0.49);
  for (int t = 0; t < 50; ++t) {
    Arr4<double> rho{u(rng), u(rng), u(rng), u(rng)};
    auto s = build_covectors(rho);
    for (int j = 1; j <= 5; ++j) CHECK(std::abs(eta_pair(s(j), s(j))) <= 1e-15);
    for (int j = 1; j <= 4; ++j) {
      CHECK(s.w(j, 5) == -0.5 * rho[j - 1] * rho[j - 1]);
      CHECK(std::abs(eta_pair(s(j), s(5)) - s.w(j, 5)) <= 1e-16);
    }
  }
  for (double r : {1e-2, 1e-3, 1e-5}) {
    auto s = build_covectors({r, r, r, r});
    CHECK((s(1) - s(5)).norm() / r == doctest::Approx(1.0).epsilon(2 * r));
  }
  CHECK_THROWS_AS(build_covectors({0.6, 0.1, 0.1, 0.1}), ConstraintViolation);
  CHECK_THROWS_AS(build_covectors({0.1, 0.0, 0.1, 0.1}), ConstraintViolation);
  auto h = hierarchy_rhos(0.05, 2);
  CHECK(h[2] == doctest::Approx(0.0025));
  CHECK(h[1] == doctest::Approx(0.0025 * 0.0025));
  CHECK(h[3] == doctest::Approx(std::pow(0.0025, 4)));
}

TEST_CASE("q0 on plane-wave products") {
  auto s = build_covectors({0.3, 0.25, 0.2, 0.15});
  const int a = 4;
  PlaneWaveTerm u{1.0, {{1, double(a)}, {2, double(a)}}};
  auto q = q0_apply(s, u);
  CHECK(q.factors[0].a == a + 1);
  CHECK(q.factors[1].a == a + 1);
  CHECK(std::abs(q.coefficient - 1.0 / (2.0 * (a + 1) * (a + 1) * eta_pair(s(1), s(2)))) <= 1e-13 * std::abs(q.coefficient));

  SUBCASE("box of q0 is the identity on random terms") {
    std::uniform_int_distribution<int> lab(1, 4);
    std::uniform_real_distribution<double> ex(0.0, 8.0);
    for (int t = 0; t < 20; ++t) {
      PlaneWaveTerm v;
      v.coefficient = cd(ex(rng) - 4, ex(rng) - 4);
      if (t % 2) {
        int i = lab(rng), j;
        do j = lab(rng);
        while (j == i);
        v.factors = {{i, ex(rng)}, {j, ex(rng)}};
      } else {
        v.factors = {{lab(rng), ex(rng)}};
        v.modulated = true;
        v.tau = 10 + 10 * ex(rng);
      }
      CHECK(same_term(wave_operator(s, q0_apply(s, v)), v, 1e-13));
    }
  }

  SUBCASE("finite-difference wave operator agrees") {
    Vec4 x(2.0, 0.3, 0.4, 0.1);
    PlaneWaveTerm v{1.0, {{1, 3.0}, {3, 2.0}}};
    auto w = q0_apply(s, v);
    cd box = fd_box([&](const Vec4& y) { return w.eval(s, y); }, x, 1e-3);
    CHECK(std::abs(box - v.eval(s, x)) <= 1e-5 * std::abs(v.eval(s, x)));

    PlaneWaveTerm m{1.0, {{2, 3.0}}, true, 3.0};
    auto wm = q0_apply(s, m);
    cd boxm = fd_box([&](const Vec4& y) { return wm.eval(s, y); }, x, 1e-3);
    CHECK(std::abs(boxm - m.eval(s, x)) <= 1e-5 * std::abs(m.eval(s, x)));
  }

  SUBCASE("modulated branch carries 1/(i tau)") {
    PlaneWaveTerm m{1.0, {{4, 2.0}}, true, 7.0};
    auto w = q0_apply(s, m);
    cd expect = 1.0 / (cd(0, 2) * 3.0 * s.w(4, 5) * 7.0);
    CHECK(std::abs(w.coefficient - expect) <= 1e-14 * std::abs(expect));
    CHECK(std::abs((w.coefficient * cd(0, 7.0)).imag()) <= 1e-14 * std::abs(w.coefficient));
  }

  SUBCASE("degenerate shapes") {
    CHECK_THROWS_AS(q0_apply(s, PlaneWaveTerm{1.0, {{1, 1.0}}}), ParametrixUndefined);
    CHECK_THROWS_AS(q0_apply(s, PlaneWaveTerm{1.0, {{1, 1.0}, {1, 2.0}}}), ParametrixUndefined);
    auto same = build_covectors({0.2, 0.2, 0.1, 0.1});
    CHECK_THROWS_AS(q0_apply(same, PlaneWaveTerm{1.0, {{1, 1.0}, {2, 1.0}}}), ParametrixUndefined);
  }
}

TEST_CASE("catalog fixture") {
  const auto& c = catalog();
  CHECK(c.families.size() == 8);
  CHECK(c.find("T_QQ").modulated());
  CHECK_FALSE(c.find("Tt_QQ").modulated());
  CHECK_THROWS_AS(c.find("T_XX"), CatalogMiss);
  std::string bad = "/tmp/lorentz_bad_catalog.txt";
  std::ofstream(bad) << "T_QQ 0 1 1\n";
  CHECK_THROWS_AS(TermCatalog::load(bad), CatalogMiss);
  CHECK_THROWS_AS(TermCatalog::load("/nonexistent/catalog.txt"), CatalogMiss);
}

TEST_CASE("closed-form exponents against the displayed family formulas") {
  const int a = 6;
  auto b1 = closed_form_T(catalog().find("T_QQ"), a, kBeta1K, 1.0);
  CHECK(b1.tau_exp == -(6 + 4 * a));
  std::int64_t d = -2 * (a + 1);
  CHECK(b1.rho_exp == Arr4<std::int64_t>{d + 20, d - 2, d + 0, d - 4});
  CHECK(closed_form_T(catalog().find("T_QQ"), a, {0, 0, 0, 0}, 1.0).tau_exp == -(12 + 4 * a));

  CHECK_NOTHROW(closed_form_T(catalog().find("T_QQ"), a, {3, 3, 0, 0}, 1.0));
  try {
    closed_form_T(catalog().find("T_QI"), a, {0, 0, 3, 3}, 1.0);
    FAIL("accepted inadmissible k");
  } catch (const ConstraintViolation& e) {
    CHECK(std::string(e.what()).find("k3+k4 <= 2K2+2") != std::string::npos);
  }
  CHECK_THROWS_AS(closed_form_T(catalog().find("T_QQ"), a, {0, 0, 1, 3}, 1.0), ConstraintViolation);
  CHECK_THROWS_AS(closed_form_T(catalog().find("Tt_QQ"), a, {3, 2, 0, 0}, 1.0), ConstraintViolation);

  // every admissible k at the identity order, polarization part removed
  for (const auto& fam : catalog().families) {
    const auto& c = kPrinted.at(fam.name);
    int n = 0;
    KVector k;
    for (k[0] = 0; k[0] <= 6; ++k[0])
      for (k[1] = 0; k[1] <= 6; ++k[1])
        for (k[2] = 0; k[2] <= 6; ++k[2])
          for (k[3] = 0; k[3] <= 6; ++k[3]) {
            AsymptoticMonomial m;
            try {
              m = closed_form_T(fam, a, k, 1.0);
            } catch (const ConstraintViolation&) {
              continue;
            }
            ++n;
            int sum = k[0] + k[1] + k[2] + k[3];
            CHECK(m.tau_exp == -(kPrintedTau.at(fam.name) + 4 * a - sum));
            for (int j = 0; j < 4; ++j) CHECK(m.rho_exp[j] - m.pol_exp[j] == -2 * (a - k[j] + c[j]));
          }
    CHECK(n > 0);
  }
}

TEST_CASE("chosen polarizations") {
  auto s = build_covectors({0.3, 0.25, 0.2, 0.15});
  auto v = chosen_polarizations(s);
  for (int r = 2; r <= 4; ++r) {
    const Mat4& vr = v[r - 2];
    NullCovectorFrame f{Vec4::Zero(), s(r), minkowski_eta()};
    CHECK(harmonicity_residual(f, PolarizationVector(vr, Eigen::VectorXd())).norm() <= 1e-14);
    CHECK(std::abs((minkowski_eta() * vr).trace()) <= 1e-14);
    for (int j = 1; j <= 5; ++j) {
      double w = eta_pair(s(r), s(j));
      CHECK(std::abs(contract_vbb(vr, s(j)) - w * w) <= 1e-15);
    }
    // the vbb constant with the modulation covector
    double rr = s.rho[r - 1];
    CHECK(contract_vbb(vr, s(5)) == doctest::Approx(0.25 * std::pow(rr, 4)).epsilon(1e-12));
  }
}

TEST_CASE("polarization factor of beta1") {
  auto s = build_covectors({0.3, 0.25, 0.2, 0.15});
  auto ch = chosen_polarizations(s);
  Mat4 eta = minkowski_eta();
  std::array<Mat4, 5> v{eta, ch[0], ch[1], ch[2], eta};
  auto pf = polarization_factor_beta1(v, s);
  CHECK(pf.D == doctest::Approx(4.0));
  double w41 = eta_pair(s(4), s(1)), w31 = eta_pair(s(3), s(1)), w21 = eta_pair(s(2), s(1));
  CHECK(pf.P == doctest::Approx(w41 * w41 * w31 * w31 * w21 * w21 * 4.0).epsilon(1e-12));

  // explicit index loop oracle for 𝒟
  Mat4 v1 = random_sym(), v5 = random_sym();
  double D = 0;
  for (int n = 0; n < 4; ++n)
    for (int m = 0; m < 4; ++m) D += eta(n, n) * eta(m, m) * v5(n, m) * v1(n, m);
  CHECK(bilinear_B(v5, v1) == doctest::Approx(D).epsilon(1e-13));

  // v⁽¹⁾ ⟂ v⁽⁵⁾
  Mat4 perp = Mat4::Zero();
  perp(1, 2) = perp(2, 1) = 1.0;
  std::array<Mat4, 5> z{perp, ch[0], ch[1], ch[2], eta};
  auto pz = polarization_factor_beta1(z, s);
  CHECK(pz.D == 0.0);
  CHECK(pz.P == 0.0);
}

TEST_CASE("dominance ordering") {
  const int a = 6;
  const auto& c = catalog();
  auto b1 = closed_form_T(c.find("T_QQ"), a, kBeta1K, 1.0);
  auto sic = closed_form_T(c.find("T_QQ"), a, {2, 0, 4, 0}, 1.0, {3, 2, 1, 4});
  CHECK(dominance_compare(b1, sic, 100) == Order::stronger);
  CHECK(dominance_compare(sic, b1, 100) == Order::weaker);
  CHECK(sic.rho_exp[2] - b1.rho_exp[2] == 4);
  CHECK(dominance_compare(b1, b1, 100) == Order::equal);
  CHECK(dominance_compare(b1, b1, 2) == Order::equal);

  auto zero = b1;
  zero.coefficient = 0.0;
  CHECK(dominance_compare(zero, sic, 100) == Order::weaker);

  auto terms = enumerate_catalog(c, a);
  CHECK(terms.size() > 1000);
  int beta = 0, tilde = 0, weaker = 0;
  for (const auto& t : terms) {
    if (t.is_beta1()) {
      ++beta;
      CHECK(dominance_compare(t.m, b1, 100) == Order::equal);
      continue;
    }
    if (t.family->tilde) {
      ++tilde;
      CHECK(dominance_compare(t.m, b1, 100) == Order::weaker);
    }
    weaker += dominance_compare(t.m, b1, 100) == Order::weaker;
  }
  CHECK(beta == 2);
  CHECK(tilde > 0);
  CHECK(weaker == int(terms.size()) - 2);

  // collapsed exponent at N against direct evaluation of log ρ₁-powers
  std::int64_t N = 3;
  auto m = sic;
  CHECK(collapsed_exponent(m, 3) == m.rho_exp[0] + N * m.rho_exp[2] + N * N * m.rho_exp[1] + N * N * N * m.rho_exp[3]);
  CHECK_THROWS_AS(collapsed_exponent(m, 1), ConstraintViolation);
}

TEST_CASE("indicator is linear in D and nonzero for chosen polarizations") {
  auto s = build_covectors(hierarchy_rhos(0.05, 2));
  auto ch = chosen_polarizations(s);
  Mat4 eta = minkowski_eta();
  std::array<Mat4, 5> v{eta, ch[0], ch[1], ch[2], eta};
  auto g = indicator_G(v, s, catalog());
  CHECK(g.top_count == 2);
  CHECK(g.mantissa != 0.0);
  CHECK(std::isfinite(g.log10_scale));
  REQUIRE(g.next.has_value());
  CHECK(dominance_compare(*g.next, g.leading, kOrderingN) == Order::weaker);

  // id and σ₀ carry the same monomial
  auto& fam = catalog().find("T_QQ");
  auto mid = closed_form_T(fam, 6, kBeta1K, 1.0, kIdentityOrder);
  auto ms0 = closed_form_T(fam, 6, {0, 6, 0, 0}, 1.0, kSigma0);
  CHECK(mid.rho_exp == ms0.rho_exp);
  CHECK(mid.tau_exp == ms0.tau_exp);

  Mat4 perp = Mat4::Zero();
  perp(1, 2) = perp(2, 1) = 1.0;
  std::array<Mat4, 5> z{perp, ch[0], ch[1], ch[2], eta};
  auto gz = indicator_G(z, s, catalog());
  CHECK(gz.mantissa == 0.0);
  CHECK(gz.next.has_value());

  // multilinearity in each slot
  for (int slot = 0; slot < 5; ++slot) {
    auto va = v, vb = v, vs = v;
    va[slot] = random_sym();
    vb[slot] = random_sym();
    double al = 0.7, be = -1.3;
    vs[slot] = al * va[slot] + be * vb[slot];
    double ga = indicator_G(va, s, catalog()).mantissa;
    double gb = indicator_G(vb, s, catalog()).mantissa;
    double gs = indicator_G(vs, s, catalog()).mantissa;
    CHECK(std::abs(gs - (al * ga + be * gb)) <= 1e-12 * (std::abs(ga) + std::abs(gb)));
  }
}

TEST_CASE("kappa determinant") {
  auto s = build_covectors(hierarchy_rhos(0.05, 2));
  auto ch = chosen_polarizations(s);
  auto V1 = harmonicity_basis(s, 1);
  REQUIRE(V1.size() == 6);
  auto V5 = dual_basis(s, V1);
  for (int p = 0; p < 6; ++p)
    for (int q = 0; q < 6; ++q) CHECK(bilinear_B(V5[p], V1[q]) == doctest::Approx(p == q ? 1.0 : 0.0).scale(1.0).epsilon(1e-9));
  auto k = kappa_determinant(s, ch, V1, V5, catalog());
  CHECK(std::abs(k.kappa) > 1e-8);
  CHECK(k.rank == 6);
  auto W1 = V1;
  std::swap(W1[0], W1[3]);
  auto ks = kappa_determinant(s, ch, W1, V5, catalog());
  CHECK(ks.kappa == doctest::Approx(-k.kappa).epsilon(1e-10));
}

TEST_CASE("oscillatory integral oracle") {
  const auto& c = catalog();
  Arr4<double> rho{0.3, 0.25, 0.2, 0.15};

  SUBCASE("quadrature matches the exact cutoff integral") {
    // ∫₀^∞ yⁿ e^{(iτp − ε)y} dy = n!/(ε − iτp)^{n+1}
    auto r = oscillatory_integral_oracle(c.find("T_QQ"), 6, kBeta1K, rho, 300.0, 0.5);
    cd exact = r.prefactor;
    for (int j = 0; j < 4; ++j) exact *= std::tgamma(r.n[j] + 1.0) / std::pow(cd(0.5, -300.0 * r.p[j]), r.n[j] + 1);
    CHECK(std::abs(r.value - exact) <= 1e-8 * std::abs(exact));
  }

  struct Entry {
    const char* fam;
    KVector k;
  };
  for (Entry e : {Entry{"T_QQ", {6, 0, 0, 0}}, Entry{"T_IQ", {2, 2, 0, 0}}, Entry{"Tt_II", {1, 1, 0, 0}}}) {
    CAPTURE(e.fam);
    const auto& fam = c.find(e.fam);
    std::vector<double> lx, ly;
    for (double tau : {250.0, 500.0, 1000.0, 2000.0}) {
      auto r = oscillatory_integral_oracle(fam, 6, e.k, rho, tau);
      lx.push_back(std::log(tau));
      ly.push_back(std::log(std::abs(r.value)));
    }
    double mx = 0, my = 0;
    for (int i = 0; i < 4; ++i) mx += lx[i] / 4, my += ly[i] / 4;
    double sxy = 0, sxx = 0;
    for (int i = 0; i < 4; ++i) sxy += (lx[i] - mx) * (ly[i] - my), sxx += (lx[i] - mx) * (lx[i] - mx);
    auto m = closed_form_T(fam, 6, e.k, 1.0);
    CHECK(std::abs(sxy / sxx - double(m.tau_exp + 4)) <= 0.05);

    auto r = oscillatory_integral_oracle(fam, 6, e.k, rho, 2000.0);
    double ratio = std::abs(r.value) / std::abs(r.closed_form);
    CHECK(ratio >= 0.9);
    CHECK(ratio <= 1.1);
    auto rn = oscillatory_integral_oracle(fam, 6, e.k, rho, -2000.0);
    CHECK(std::abs(rn.value - std::conj(r.value)) <= 1e-10 * std::abs(r.value));
  }
}
