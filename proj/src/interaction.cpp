#include "lorentz/interaction.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "lorentz/errors.hpp"
#include "lorentz/symbol.hpp"

#ifndef LORENTZ_DATA_DIR
#define LORENTZ_DATA_DIR "data"
#endif

namespace lorentz {

namespace {

using cd = std::complex<double>;

// ρ₁ > ρ₃ > ρ₂ > ρ₄ under the hierarchy
int rank_of_wave(int j) {
  static constexpr int r[5] = {0, 3, 1, 2, 0};
  return r[j];
}

int dominant_wave(int j, int k) {
  if (j == 5) return k;
  if (k == 5) return j;
  return rank_of_wave(j) > rank_of_wave(k) ? j : k;
}

// (n₄, n₂, n₃, n₁): lexicographic order of this tuple is the N → ∞ order
std::array<std::int64_t, 4> hierarchy_key(const Arr4<std::int64_t>& e) { return {e[3], e[1], e[2], e[0]}; }

}  // namespace

const Mat4& minkowski_eta() {
  static const Mat4 eta = Eigen::Vector4d(-1, 1, 1, 1).asDiagonal();
  return eta;
}

Mat4 NullCovectorSet::B() const {
  Mat4 m;
  for (int j = 0; j < 4; ++j) m.row(j) = b[j].transpose();
  return m;
}

NullCovectorSet build_covectors(const Arr4<double>& rho) {
  NullCovectorSet s;
  s.rho = rho;
  s.b[4] = Vec4(1, 1, 0, 0);
  for (int j = 0; j < 4; ++j) {
    double r = rho[j];
    if (!(r > 0.0 && r < 0.5)) throw ConstraintViolation(fmt::format("rho_{} = {} outside (0, 1/2)", j + 1, r));
    double r2 = r * r, r3 = r2 * r;
    double rad = r2 - 0.25 * r2 * r2 - r3 * r3;
    if (rad < 0.0) throw ConstraintViolation(fmt::format("negative radicand for rho_{}", j + 1));
    s.b[j] = Vec4(1.0, 1.0 - 0.5 * r2, std::sqrt(rad), r3);
  }
  const Mat4& eta = minkowski_eta();
  for (int k = 0; k < 5; ++k)
    for (int j = 0; j < 5; ++j) s.omega(k, j) = s.b[k].dot(eta * s.b[j]);
  for (int j = 0; j < 4; ++j) {
    s.omega(j, j) = 0.0;
    s.omega(j, 4) = s.omega(4, j) = -0.5 * rho[j] * rho[j];
  }
  s.omega(4, 4) = 0.0;
  return s;
}

Arr4<double> hierarchy_rhos(double rho1, int N) {
  if (N < 2) throw ConstraintViolation("hierarchy exponent N must be >= 2");
  double r3 = std::pow(rho1, N);
  double r2 = std::pow(r3, N);
  double r4 = std::pow(r2, N);
  return {rho1, r2, r3, r4};
}

// ---- plane waves ----

void PlaneWaveTerm::validate() const {
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (factors[i].j < 1 || factors[i].j > 4) throw ParametrixUndefined("factor covector label outside 1..4");
    for (std::size_t k = i + 1; k < factors.size(); ++k)
      if (factors[i].j == factors[k].j) throw ParametrixUndefined("two factors share a covector");
  }
}

cd PlaneWaveTerm::eval(const NullCovectorSet& s, const Vec4& x) const {
  cd v = coefficient;
  for (const auto& f : factors) {
    double y = s(f.j).dot(x);
    if (y <= 0.0) return 0.0;
    v *= std::pow(y, f.a);
  }
  if (modulated) v *= std::exp(cd(0.0, tau * s(5).dot(x)));
  return v;
}

PlaneWaveTerm q0_apply(const NullCovectorSet& s, const PlaneWaveTerm& u) {
  u.validate();
  PlaneWaveTerm out = u;
  if (!u.modulated && u.factors.size() == 2) {
    const auto& f1 = u.factors[0];
    const auto& f2 = u.factors[1];
    double w = s.w(f1.j, f2.j);
    if (std::abs(w) < 1e-12) throw ParametrixUndefined("covector pair is parallel or orthogonal");
    out.coefficient = u.coefficient / (2.0 * (f1.a + 1.0) * (f2.a + 1.0) * w);
  } else if (u.modulated && u.factors.size() == 1) {
    const auto& f = u.factors[0];
    double w = s.w(f.j, 5);
    if (std::abs(w) < 1e-12 || u.tau == 0.0) throw ParametrixUndefined("degenerate modulated factor");
    out.coefficient = u.coefficient / (cd(0.0, 2.0) * (f.a + 1.0) * w * u.tau);
  } else {
    throw ParametrixUndefined("q0 needs two Heaviside factors or one factor with modulation");
  }
  for (auto& f : out.factors) f.a += 1.0;
  return out;
}

PlaneWaveTerm wave_operator(const NullCovectorSet& s, const PlaneWaveTerm& u) {
  u.validate();
  PlaneWaveTerm out = u;
  if (!u.modulated && u.factors.size() == 2) {
    const auto& f1 = u.factors[0];
    const auto& f2 = u.factors[1];
    out.coefficient = u.coefficient * 2.0 * f1.a * f2.a * s.w(f1.j, f2.j);
  } else if (u.modulated && u.factors.size() == 1) {
    const auto& f = u.factors[0];
    out.coefficient = u.coefficient * cd(0.0, 2.0) * f.a * s.w(f.j, 5) * u.tau;
  } else {
    throw ParametrixUndefined("wave operator identity only for the q0 shapes");
  }
  for (auto& f : out.factors) f.a -= 1.0;
  return out;
}

bool same_term(const PlaneWaveTerm& u, const PlaneWaveTerm& v, double rel_tol) {
  if (u.modulated != v.modulated || u.factors.size() != v.factors.size()) return false;
  if (u.modulated && u.tau != v.tau) return false;
  for (std::size_t i = 0; i < u.factors.size(); ++i) {
    if (u.factors[i].j != v.factors[i].j) return false;
    if (std::abs(u.factors[i].a - v.factors[i].a) > rel_tol * std::max(1.0, std::abs(u.factors[i].a))) return false;
  }
  return std::abs(u.coefficient - v.coefficient) <= rel_tol * std::max(std::abs(u.coefficient), std::abs(v.coefficient));
}

// ---- catalog ----

bool FamilySpec::modulated() const {
  return std::any_of(omega_pairs.begin(), omega_pairs.end(), [](auto p) { return p.first == 5 || p.second == 5; });
}

const FamilySpec& TermCatalog::find(const std::string& name) const {
  for (const auto& f : families)
    if (f.name == name) return f;
  throw CatalogMiss("no family named " + name);
}

std::string TermCatalog::default_path() { return std::string(LORENTZ_DATA_DIR) + "/term_catalog.txt"; }

TermCatalog TermCatalog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CatalogMiss("cannot open catalog " + path);
  TermCatalog cat;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    FamilySpec f;
    int tilde;
    std::string pairs;
    if (!(ls >> f.name)) continue;
    if (!(ls >> tilde >> f.K1 >> f.K2 >> f.e[0] >> f.e[1] >> f.e[2] >> f.e[3] >> f.base >> pairs))
      throw CatalogMiss(fmt::format("{}:{}: malformed family row", path, lineno));
    f.tilde = tilde != 0;
    if (pairs != "-") {
      std::istringstream ps(pairs);
      std::string tok;
      while (std::getline(ps, tok, ',')) {
        if (tok.size() != 2) throw CatalogMiss(fmt::format("{}:{}: bad pair '{}'", path, lineno, tok));
        f.omega_pairs.emplace_back(tok[0] - '0', tok[1] - '0');
      }
    }
    cat.families.push_back(std::move(f));
  }
  if (cat.families.empty()) throw CatalogMiss("empty catalog " + path);
  return cat;
}

namespace {

// all violated inequalities, joined
std::optional<std::string> admissibility_violation(const FamilySpec& fam, int a, const KVector& k) {
  std::vector<std::string> bad;
  int sum = 0;
  for (int p = 0; p < 4; ++p) {
    if (k[p] < 0) bad.push_back(fmt::format("k{} >= 0", p + 1));
    if (a - k[p] + fam.e[p] < 0) bad.push_back(fmt::format("a - k{} + e{} >= 0", p + 1, p + 1));
    sum += k[p];
  }
  if (sum > 2 * fam.K1 + 2 * fam.K2 + 2) bad.emplace_back("k1+k2+k3+k4 <= 2K1+2K2+2");
  if (k[2] + k[3] > 2 * fam.K2 + 2) bad.emplace_back("k3+k4 <= 2K2+2");
  if (!fam.tilde && k[3] > 2) bad.emplace_back("k4 <= 2");
  if (fam.tilde && k[0] + k[1] > 2 * fam.K1 + 2) bad.emplace_back("k1+k2 <= 2K1+2");
  if (bad.empty()) return std::nullopt;
  return fmt::format("{}", fmt::join(bad, ", "));
}

bool is_chain(const FamilySpec& fam) { return !fam.tilde && fam.K1 == 1 && fam.K2 == 1; }

}  // namespace

void check_admissible(const FamilySpec& fam, int a, const KVector& k) {
  if (auto v = admissibility_violation(fam, a, k))
    throw ConstraintViolation(fmt::format("{}: k=({},{},{},{}) violates {}", fam.name, k[0], k[1], k[2], k[3], *v));
}

Arr4<std::int64_t> polarization_exponent(const FamilySpec& fam, const WaveOrder& sigma, const KVector& k) {
  Arr4<std::int64_t> best{};
  if (!is_chain(fam)) return best;
  // three contraction levels: {1,2}, {3,x₂}, {4,x₃}; each puts at most two derivatives on its pair
  static constexpr int splits[6][2] = {{0, 0}, {1, 0}, {0, 1}, {2, 0}, {0, 2}, {1, 1}};
  bool found = false;
  for (int x2 = 0; x2 < 2; ++x2)
    for (int x3 = 0; x3 < 3; ++x3) {
      const int pa[3] = {0, 2, 3};
      const int pb[3] = {1, x2, x3};
      for (int s1 = 0; s1 < 6; ++s1)
        for (int s2 = 0; s2 < 6; ++s2)
          for (int s3 = 0; s3 < 6; ++s3) {
            const int sp[3] = {s1, s2, s3};
            KVector got{};
            Arr4<std::int64_t> e{};
            for (int l = 0; l < 3; ++l) {
              int da = splits[sp[l]][0], db = splits[sp[l]][1];
              got[pa[l]] += da;
              got[pb[l]] += db;
              int recv = -1, pol = -1;
              if (da == 2) recv = pa[l], pol = pb[l];
              if (db == 2) recv = pb[l], pol = pa[l];
              if (recv < 0) continue;
              int r = sigma[pol], j = sigma[recv];
              if (r == 1) continue;  // v^(1) is not a chosen polarization
              e[dominant_wave(r, j) - 1] += 4;
            }
            if (got != k) continue;
            if (!found || hierarchy_key(e) < hierarchy_key(best)) best = e;
            found = true;
          }
    }
  return best;
}

AsymptoticMonomial closed_form_T(const FamilySpec& fam, int a, const KVector& k, double P, const WaveOrder& sigma) {
  check_admissible(fam, a, k);
  AsymptoticMonomial m;
  int sum = k[0] + k[1] + k[2] + k[3];
  m.tau_exp = -(fam.base + 4 * a - sum);
  for (int p = 0; p < 4; ++p) m.rho_exp[sigma[p] - 1] += -2 * (a - k[p] + fam.e[p] + 1);
  for (auto [p, q] : fam.omega_pairs) {
    int wp = p == 5 ? 5 : sigma[p - 1];
    int wq = q == 5 ? 5 : sigma[q - 1];
    m.rho_exp[dominant_wave(wp, wq) - 1] -= 2;
  }
  m.pol_exp = polarization_exponent(fam, sigma, k);
  for (int j = 0; j < 4; ++j) m.rho_exp[j] += m.pol_exp[j];
  m.coefficient = kDetALead * P;
  m.label = fmt::format("{} sigma=({},{},{},{}) k=({},{},{},{})", fam.name, sigma[0], sigma[1], sigma[2], sigma[3], k[0],
                        k[1], k[2], k[3]);
  return m;
}

std::int64_t collapsed_exponent(const AsymptoticMonomial& m, int N) {
  if (N < 2) throw ConstraintViolation("hierarchy exponent N must be >= 2");
  std::int64_t n = N;
  return n * n * n * m.rho_exp[3] + n * n * m.rho_exp[1] + n * m.rho_exp[2] + m.rho_exp[0];
}

Order dominance_compare(const AsymptoticMonomial& m1, const AsymptoticMonomial& m2, int N) {
  bool z1 = m1.coefficient == 0.0, z2 = m2.coefficient == 0.0;
  if (z1 || z2) return z1 == z2 ? Order::equal : (z1 ? Order::weaker : Order::stronger);
  if (m1.tau_exp != m2.tau_exp) return m1.tau_exp > m2.tau_exp ? Order::stronger : Order::weaker;
  auto c1 = collapsed_exponent(m1, N), c2 = collapsed_exponent(m2, N);
  if (c1 == c2) return Order::equal;
  return c1 < c2 ? Order::stronger : Order::weaker;
}

bool CatalogTerm::is_beta1() const {
  if (!is_chain(*family)) return false;
  return (sigma == kIdentityOrder && k == kBeta1K) || (sigma == kSigma0 && k == KVector{0, 6, 0, 0});
}

std::vector<CatalogTerm> enumerate_catalog(const TermCatalog& cat, int a) {
  std::vector<CatalogTerm> out;
  WaveOrder perm{1, 2, 3, 4};
  for (const auto& fam : cat.families) {
    std::sort(perm.begin(), perm.end());
    do {
      KVector k;
      for (k[0] = 0; k[0] <= 6; ++k[0])
        for (k[1] = 0; k[1] <= 6; ++k[1])
          for (k[2] = 0; k[2] <= 6; ++k[2])
            for (k[3] = 0; k[3] <= 6; ++k[3]) {
              if (admissibility_violation(fam, a, k)) continue;
              out.push_back({&fam, perm, k, closed_form_T(fam, a, k, 1.0, perm)});
            }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return out;
}

// ---- polarizations ----

std::array<Mat4, 3> chosen_polarizations(const NullCovectorSet& s) {
  std::array<Mat4, 3> v;
  for (int r = 2; r <= 4; ++r) v[r - 2] = s(r) * s(r).transpose();
  return v;
}

double bilinear_B(const Mat4& v, const Mat4& w) {
  const Mat4& eta = minkowski_eta();  // its own inverse
  return (eta * v * eta * w).trace();
}

double contract_vbb(const Mat4& v, const Vec4& b) {
  const Mat4& eta = minkowski_eta();
  Mat4 up = eta * v * eta;
  return b.dot(up * b);
}

PolarizationFactor polarization_factor_beta1(const std::array<Mat4, 5>& v, const NullCovectorSet& s) {
  double D = bilinear_B(v[4], v[0]);
  double P = contract_vbb(v[3], s(1)) * contract_vbb(v[2], s(1)) * contract_vbb(v[1], s(1)) * D;
  return {P, D};
}

double Indicator::value() const { return mantissa * std::pow(10.0, log10_scale); }

namespace {

struct LeadingClass {
  AsymptoticMonomial leading;
  std::optional<AsymptoticMonomial> next;
  int count = 0;
  double log10_scale = 0.0;
  double sign = 1.0;
};

LeadingClass leading_class(const NullCovectorSet& s, int N, const TermCatalog& cat, int a) {
  auto terms = enumerate_catalog(cat, a);
  std::size_t top = 0;
  for (std::size_t i = 1; i < terms.size(); ++i)
    if (dominance_compare(terms[i].m, terms[top].m, N) == Order::stronger) top = i;
  LeadingClass lc;
  lc.leading = terms[top].m;
  for (const auto& t : terms) {
    if (dominance_compare(t.m, lc.leading, N) == Order::equal) {
      if (!t.is_beta1()) throw CatalogMiss("leading term without a polarization formula: " + t.m.label);
      ++lc.count;
    } else if (!lc.next || dominance_compare(t.m, *lc.next, N) == Order::stronger) {
      lc.next = t.m;
    }
  }
  // 𝒢 = count · det(A) · 𝒫_{β₁} · ρ^(e − pol)
  double detA = 1.0 / s.B().determinant();
  lc.sign = detA < 0 ? -1.0 : 1.0;
  lc.log10_scale = std::log10(std::abs(detA));
  for (int j = 0; j < 4; ++j)
    lc.log10_scale += double(lc.leading.rho_exp[j] - lc.leading.pol_exp[j]) * std::log10(s.rho[j]);
  return lc;
}

}  // namespace

Indicator indicator_G(const std::array<Mat4, 5>& v, const NullCovectorSet& s, const TermCatalog& cat, int a,
                      int ordering_N) {
  auto lc = leading_class(s, ordering_N, cat, a);
  Indicator g;
  g.top_count = lc.count;
  g.leading = lc.leading;
  g.next = lc.next;
  g.log10_scale = lc.log10_scale;
  g.mantissa = lc.sign * lc.count * polarization_factor_beta1(v, s).P;
  g.leading.coefficient = g.mantissa;
  return g;
}

std::vector<Mat4> harmonicity_basis(const NullCovectorSet& s, int j) {
  NullCovectorFrame f{Vec4::Zero(), s(j), minkowski_eta()};
  Eigen::MatrixXd K = constraint_space_basis(f, Constraint::harmonicity, 0);
  std::vector<Mat4> out;
  for (int c = 0; c < K.cols(); ++c) out.push_back(PolarizationVector::from_flat(K.col(c)).v);
  return out;
}

std::vector<Mat4> dual_basis(const NullCovectorSet& s, const std::vector<Mat4>& V1) {
  auto H5 = harmonicity_basis(s, 5);
  int n = static_cast<int>(H5.size());
  if (static_cast<int>(V1.size()) != n) throw DegenerateFrame("V1 must have the harmonicity dimension");
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int q = 0; q < n; ++q) M(i, q) = bilinear_B(H5[i], V1[q]);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  if (!lu.isInvertible()) throw DegenerateFrame("B pairing between harmonicity spaces is degenerate");
  Eigen::MatrixXd C = lu.inverse().transpose();
  std::vector<Mat4> V5(n, Mat4::Zero());
  for (int p = 0; p < n; ++p)
    for (int i = 0; i < n; ++i) V5[p] += C(i, p) * H5[i];
  return V5;
}

Kappa kappa_determinant(const NullCovectorSet& s, const std::array<Mat4, 3>& v234, const std::vector<Mat4>& V1,
                        const std::vector<Mat4>& V5, const TermCatalog& cat, int a, int ordering_N) {
  if (V1.size() != V5.size() || V1.empty()) throw DegenerateFrame("basis sizes differ");
  auto lc = leading_class(s, ordering_N, cat, a);
  int n = static_cast<int>(V1.size());
  Kappa k;
  k.G.resize(n, n);
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q) {
      std::array<Mat4, 5> v{V1[p], v234[0], v234[1], v234[2], V5[q]};
      k.G(p, q) = lc.sign * lc.count * polarization_factor_beta1(v, s).P;
    }
  for (int p = 0; p < n; ++p) {
    double m = k.G.row(p).cwiseAbs().maxCoeff();
    if (m > 0) k.G.row(p) /= m;
  }
  k.kappa = k.G.determinant();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(k.G);
  lu.setThreshold(1e-10);
  k.rank = static_cast<int>(lu.rank());
  return k;
}

// ---- oracle ----

OracleResult oscillatory_integral_oracle(const FamilySpec& fam, int a, const KVector& k, const Arr4<double>& rho,
                                         double tau, double cutoff, double rel_tol) {
  check_admissible(fam, a, k);
  if (tau == 0.0) throw QuadratureFailure("tau must be nonzero");
  auto s = build_covectors(rho);
  Mat4 B = s.B();
  Vec4 p = B.transpose().fullPivLu().solve(s(5));
  OracleResult res;
  cd integral = 1.0, closed = 1.0;
  for (int j = 0; j < 4; ++j) {
    int n = a - k[j] + fam.e[j];
    res.n[j] = n;
    res.p[j] = p[j];
    double c = std::abs(tau * p[j]);
    if (c == 0.0) throw QuadratureFailure("phase vector has a zero component");
    double sg = tau * p[j] > 0 ? 1.0 : -1.0;
    // contour y = i·sg·t, then t = u/c; the cutoff becomes the slow phase e^{−iεsg·u/c}
    double w = cutoff / c;
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    double err_re = 0, err_im = 0;
    double inf = std::numeric_limits<double>::infinity();
    double re = GK::integrate([&](double u) { return std::pow(u, n) * std::exp(-u) * std::cos(w * u); }, 0.0, inf, 15,
                              1e-13, &err_re);
    double im = GK::integrate([&](double u) { return -sg * std::pow(u, n) * std::exp(-u) * std::sin(w * u); }, 0.0,
                              inf, 15, 1e-13, &err_im);
    cd I(re, im);
    double scale = std::tgamma(n + 1.0);
    if (err_re + err_im > rel_tol * scale) throw QuadratureFailure(fmt::format("factor {} did not converge", j + 1));
    res.error = std::max(res.error, (err_re + err_im) / scale);
    cd rot = std::pow(cd(0.0, sg), n + 1) * std::pow(c, -(n + 1.0));
    integral *= rot * I;
    closed *= std::tgamma(n + 1.0) / std::pow(cd(0.0, -tau * p[j]), n + 1);
  }
  cd pre = 1.0 / B.determinant();
  for (auto [i, j] : fam.omega_pairs) {
    int wi = i == 5 ? 5 : i, wj = j == 5 ? 5 : j;
    pre /= s.w(wi, wj);
  }
  if (fam.modulated()) pre /= cd(0.0, 2.0 * tau);
  res.prefactor = pre;
  res.value = pre * integral;
  res.closed_form = pre * closed;
  return res;
}

}  // namespace lorentz
