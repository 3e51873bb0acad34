#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lorentz/metric.hpp"

namespace lorentz {

// Minkowski four-wave interactions. Waves are labelled 1..5, wave 5 carries the modulation e^{iτ b⁵·x}.

struct NullCovectorSet {
  std::array<Vec4, 5> b;           // b[j-1] = b^(j)
  Arr4<double> rho{};               // ρ₁..ρ₄
  Eigen::Matrix<double, 5, 5> omega;  // ω_kj = ĝ(b^(k), b^(j)), 0-based

  const Vec4& operator()(int j) const { return b[j - 1]; }
  double w(int k, int j) const { return omega(k - 1, j - 1); }
  // rows b^(1..4), so that y = Bx
  Mat4 B() const;
};

const Mat4& minkowski_eta();

NullCovectorSet build_covectors(const Arr4<double>& rho);
// ρ₃ = ρ₁^N, ρ₂ = ρ₃^N, ρ₄ = ρ₂^N
Arr4<double> hierarchy_rhos(double rho1, int N);

struct WaveFactor {
  int j;     // covector label 1..4
  double a;  // exponent of (b^(j)·x)₊
};

struct PlaneWaveTerm {
  std::complex<double> coefficient{1.0, 0.0};
  std::vector<WaveFactor> factors;
  bool modulated = false;
  double tau = 0.0;

  void validate() const;
  std::complex<double> eval(const NullCovectorSet& s, const Vec4& x) const;
};

PlaneWaveTerm q0_apply(const NullCovectorSet& s, const PlaneWaveTerm& u);
// □ = ĝ^{jk}∂_j∂_k on the two shapes q0_apply accepts, as a term identity
PlaneWaveTerm wave_operator(const NullCovectorSet& s, const PlaneWaveTerm& u);
bool same_term(const PlaneWaveTerm& u, const PlaneWaveTerm& v, double rel_tol = 1e-14);

// ---- catalog ----

struct FamilySpec {
  std::string name;
  bool tilde = false;
  int K1 = 0, K2 = 0;
  std::array<int, 4> e{};  // exponent offsets per position
  int base = 0;            // printed τ count: −(base + 4a − |k|)
  std::vector<std::pair<int, int>> omega_pairs;  // positions, 5 = modulation
  bool modulated() const;
};

struct TermCatalog {
  std::vector<FamilySpec> families;
  const FamilySpec& find(const std::string& name) const;
  static TermCatalog load(const std::string& path);
  static std::string default_path();
};

using WaveOrder = std::array<int, 4>;  // wave label (1..4) sitting at each position
using KVector = std::array<int, 4>;

inline constexpr WaveOrder kIdentityOrder{1, 2, 3, 4};
inline constexpr WaveOrder kSigma0{2, 1, 3, 4};
inline constexpr KVector kBeta1K{6, 0, 0, 0};

struct AsymptoticMonomial {
  double coefficient = 1.0;
  std::int64_t tau_exp = 0;
  Arr4<std::int64_t> rho_exp{};  // ρ₁..ρ₄, including the polarization part
  Arr4<std::int64_t> pol_exp{};  // polarization part alone
  std::string label;
};

// det(A) = det(B)⁻¹ leading behaviour; the printed exponents and the ones the matrix actually has
inline constexpr Arr4<int> kDetAPrinted{-3, -2, -1, 0};
inline constexpr Arr4<int> kDetAExponents{-3, -1, -2, 0};
inline constexpr double kDetALead = 2.0;

void check_admissible(const FamilySpec& fam, int a, const KVector& k);
// ρ-order of the polarization factor with v^(r) = b^r b^r for r = 2,3,4
Arr4<std::int64_t> polarization_exponent(const FamilySpec& fam, const WaveOrder& sigma, const KVector& k);
AsymptoticMonomial closed_form_T(const FamilySpec& fam, int a, const KVector& k, double P,
                                 const WaveOrder& sigma = kIdentityOrder);

enum class Order { stronger, weaker, equal };
std::int64_t collapsed_exponent(const AsymptoticMonomial& m, int N);
// ordering of m1 relative to m2
Order dominance_compare(const AsymptoticMonomial& m1, const AsymptoticMonomial& m2, int N);

struct CatalogTerm {
  const FamilySpec* family;
  WaveOrder sigma;
  KVector k;
  AsymptoticMonomial m;
  bool is_beta1() const;
};
std::vector<CatalogTerm> enumerate_catalog(const TermCatalog& cat, int a);

// ---- polarizations ----

std::array<Mat4, 3> chosen_polarizations(const NullCovectorSet& s);  // v^(2), v^(3), v^(4)
// ĝĝ contraction of two lower-index tensors
double bilinear_B(const Mat4& v, const Mat4& w);
double contract_vbb(const Mat4& v, const Vec4& b);

struct PolarizationFactor {
  double P;
  double D;
};
// v[j-1] = v^(j)
PolarizationFactor polarization_factor_beta1(const std::array<Mat4, 5>& v, const NullCovectorSet& s);

struct Indicator {
  double mantissa = 0.0;     // 𝒢 = mantissa · 10^log10_scale
  double log10_scale = 0.0;
  int top_count = 0;
  AsymptoticMonomial leading;
  std::optional<AsymptoticMonomial> next;  // strongest term outside the leading class
  double value() const;
};

// the numeric ρ values come from s; the leading class is picked with the exact ordering at ordering_N
inline constexpr int kOrderingN = 100;
Indicator indicator_G(const std::array<Mat4, 5>& v, const NullCovectorSet& s, const TermCatalog& cat, int a = 6,
                      int ordering_N = kOrderingN);

// orthonormal basis of the harmonicity space at b^(j), as lower-index tensors
std::vector<Mat4> harmonicity_basis(const NullCovectorSet& s, int j);
// basis of the harmonicity space at b⁵ with B(v5_p, v1_q) = δ_pq
std::vector<Mat4> dual_basis(const NullCovectorSet& s, const std::vector<Mat4>& V1);

struct Kappa {
  double kappa = 0.0;   // determinant after row normalization
  int rank = 0;
  Eigen::MatrixXd G;    // row-normalized 𝒢 values, rows p over V¹, columns q over V⁵
};

Kappa kappa_determinant(const NullCovectorSet& s, const std::array<Mat4, 3>& v234, const std::vector<Mat4>& V1,
                        const std::vector<Mat4>& V5, const TermCatalog& cat, int a = 6,
                        int ordering_N = kOrderingN);

// ---- oracle ----

struct OracleResult {
  std::complex<double> value;        // quadrature times prefactor
  std::complex<double> closed_form;  // endpoint asymptotic times the same prefactor
  std::complex<double> prefactor;
  Arr4<double> p{};                   // phase vector in y coordinates
  Arr4<int> n{};                      // powers of y
  double error = 0.0;
};

// ∫ Π y_p^{n_p} e^{iτp·y} Π e^{−ε y_p} dy over the positive orthant, n_p = a − k_p + e_p.
// Prefactor: det(A) / Π ω over the family pairs, times 1/(2iτ) for modulated families.
OracleResult oscillatory_integral_oracle(const FamilySpec& fam, int a, const KVector& k, const Arr4<double>& rho,
                                         double tau, double cutoff = 1e-3, double rel_tol = 1e-9);

}  // namespace lorentz
