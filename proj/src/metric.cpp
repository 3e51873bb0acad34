#include "lorentz/metric.hpp"

#include <fmt/format.h>

#include <random>

#include "lorentz/errors.hpp"

namespace lorentz {

template <class T>
Sym4<T> inverse4(const Sym4<T>& m) {
  // cofactor expansion via 2x2 minors
  const auto& a = m;
  T s0 = a[0][0] * a[1][1] - a[1][0] * a[0][1];
  T s1 = a[0][0] * a[1][2] - a[1][0] * a[0][2];
  T s2 = a[0][0] * a[1][3] - a[1][0] * a[0][3];
  T s3 = a[0][1] * a[1][2] - a[1][1] * a[0][2];
  T s4 = a[0][1] * a[1][3] - a[1][1] * a[0][3];
  T s5 = a[0][2] * a[1][3] - a[1][2] * a[0][3];
  T c5 = a[2][2] * a[3][3] - a[3][2] * a[2][3];
  T c4 = a[2][1] * a[3][3] - a[3][1] * a[2][3];
  T c3 = a[2][1] * a[3][2] - a[3][1] * a[2][2];
  T c2 = a[2][0] * a[3][3] - a[3][0] * a[2][3];
  T c1 = a[2][0] * a[3][2] - a[3][0] * a[2][2];
  T c0 = a[2][0] * a[3][1] - a[3][0] * a[2][1];
  T det = s0 * c5 - s1 * c4 + s2 * c3 + s3 * c2 - s4 * c1 + s5 * c0;
  if (std::abs(value_of(det)) < 1e-300) throw DegenerateMetric("singular metric matrix");
  T id = T(1.0) / det;
  Sym4<T> b;
  b[0][0] = (a[1][1] * c5 - a[1][2] * c4 + a[1][3] * c3) * id;
  b[0][1] = (T(0.0) - a[0][1] * c5 + a[0][2] * c4 - a[0][3] * c3) * id;
  b[0][2] = (a[3][1] * s5 - a[3][2] * s4 + a[3][3] * s3) * id;
  b[0][3] = (T(0.0) - a[2][1] * s5 + a[2][2] * s4 - a[2][3] * s3) * id;
  b[1][0] = (T(0.0) - a[1][0] * c5 + a[1][2] * c2 - a[1][3] * c1) * id;
  b[1][1] = (a[0][0] * c5 - a[0][2] * c2 + a[0][3] * c1) * id;
  b[1][2] = (T(0.0) - a[3][0] * s5 + a[3][2] * s2 - a[3][3] * s1) * id;
  b[1][3] = (a[2][0] * s5 - a[2][2] * s2 + a[2][3] * s1) * id;
  b[2][0] = (a[1][0] * c4 - a[1][1] * c2 + a[1][3] * c0) * id;
  b[2][1] = (T(0.0) - a[0][0] * c4 + a[0][1] * c2 - a[0][3] * c0) * id;
  b[2][2] = (a[3][0] * s4 - a[3][1] * s2 + a[3][3] * s0) * id;
  b[2][3] = (T(0.0) - a[2][0] * s4 + a[2][1] * s2 - a[2][3] * s0) * id;
  b[3][0] = (T(0.0) - a[1][0] * c3 + a[1][1] * c1 - a[1][2] * c0) * id;
  b[3][1] = (a[0][0] * c3 - a[0][1] * c1 + a[0][2] * c0) * id;
  b[3][2] = (T(0.0) - a[3][0] * s3 + a[3][1] * s1 - a[3][2] * s0) * id;
  b[3][3] = (a[2][0] * s3 - a[2][1] * s1 + a[2][2] * s0) * id;
  return b;
}

template Sym4<double> inverse4(const Sym4<double>&);
template Sym4<Dual4> inverse4(const Sym4<Dual4>&);

Mat4 MetricProvider::inverse(const Vec4& x) const {
  Mat4 g = eval(x);
  if (std::abs(g.determinant()) < 1e-300) throw DegenerateMetric("singular metric matrix");
  return g.inverse();
}

Christoffel christoffel_from(const Mat4& g, const std::array<Mat4, 4>& dg) {
  if (std::abs(g.determinant()) < 1e-300) throw DegenerateMetric("singular metric matrix");
  Mat4 gi = g.inverse();
  // lowered symbols Γ_l,ij = ½(∂_i g_lj + ∂_j g_li − ∂_l g_ij)
  std::array<Mat4, 4> low;
  for (int l = 0; l < 4; ++l)
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) {
        double v = 0.5 * (dg[i](l, j) + dg[j](l, i) - dg[l](i, j));
        low[l](i, j) = v;
        low[l](j, i) = v;
      }
  Christoffel c;
  for (int k = 0; k < 4; ++k) {
    c[k].setZero();
    for (int l = 0; l < 4; ++l) c[k] += gi(k, l) * low[l];
  }
  return c;
}

Christoffel MetricProvider::christoffel(const Vec4& x) const {
  return christoffel_from(eval(x), d_eval(x));
}

Christoffel Minkowski::christoffel(const Vec4&) const {
  Christoffel c;
  for (auto& m : c) m.setZero();
  return c;
}

std::string ProductLens::name() const {
  return fmt::format("product({},{},{},{},{})", A_, w_, c_[0], c_[1], c_[2]);
}

double ProductLens::index(const Eigen::Vector3d& y, Eigen::Vector3d* grad) const {
  Eigen::Vector3d d(y[0] - c_[0], y[1] - c_[1], y[2] - c_[2]);
  double e = A_ * std::exp(-d.squaredNorm() / (w_ * w_));
  if (grad) *grad = (-2.0 / (w_ * w_)) * e * d;
  return 1.0 + e;
}

Christoffel ProductLens::christoffel(const Vec4& x) const {
  Eigen::Vector3d grad;
  double n = index(x.tail<3>(), &grad);
  Eigen::Vector3d dl = grad / n;  // ∂ ln n
  Christoffel c;
  for (auto& m : c) m.setZero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) {
        double v = 0.0;
        if (i == j) v += dl[k];
        if (i == k) v += dl[j];
        if (j == k) v -= dl[i];
        c[i + 1](j + 1, k + 1) = v;
      }
  return c;
}

Perturbed::Perturbed(Base base, double amplitude, unsigned long long seed)
    : base_(std::move(base)), amp_(amplitude), seed_(seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int m = 0; m < modes; ++m) {
    for (int j = 0; j < 4; ++j)
      for (int l = j; l < 4; ++l) {
        double v = u(rng);
        S_[m][j][l] = v;
        S_[m][l][j] = v;
      }
    for (int i = 0; i < 4; ++i) k_[m][i] = u(rng);
    phase_[m] = 3.141592653589793 * u(rng);
  }
}

std::string Perturbed::name() const {
  std::string b = std::visit([](const auto& m) { return m.name(); }, base_);
  return fmt::format("perturbed({},{},{})", b, amp_, seed_);
}

namespace {

std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

// split "name(args)" at top-level commas
std::vector<std::string> split_args(const std::string& s) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char ch : s) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

double to_double(const std::string& s) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw CatalogMiss("bad numeric metric parameter '" + s + "'");
  }
  if (pos != s.size()) throw CatalogMiss("bad numeric metric parameter '" + s + "'");
  return v;
}

ProductLens make_lens(const std::vector<std::string>& args) {
  if (args.size() != 2 && args.size() != 5)
    throw CatalogMiss("product metric takes (amplitude,width) or (amplitude,width,cx,cy,cz)");
  std::array<double, 3> c{0, 0, 0};
  if (args.size() == 5)
    for (int i = 0; i < 3; ++i) c[i] = to_double(args[2 + i]);
  return ProductLens(to_double(args[0]), to_double(args[1]), c);
}

Perturbed::Base make_base(const std::string& spec) {
  std::string s = trim(spec);
  if (s == "minkowski") return Minkowski{};
  if (s == "desitter_like") return DeSitterLike{};
  auto open = s.find('(');
  if (open != std::string::npos && s.back() == ')') {
    std::string head = trim(s.substr(0, open));
    if (head == "product" || head == "lens")
      return make_lens(split_args(s.substr(open + 1, s.size() - open - 2)));
  }
  throw CatalogMiss("unknown base metric '" + spec + "'");
}

}  // namespace

MetricPtr make_metric(const std::string& spec) {
  std::string s = trim(spec);
  if (s == "minkowski") return std::make_shared<Minkowski>();
  if (s == "desitter_like") return std::make_shared<DeSitterLike>();
  auto open = s.find('(');
  if (open == std::string::npos || s.back() != ')') throw CatalogMiss("unknown metric '" + spec + "'");
  std::string head = trim(s.substr(0, open));
  auto args = split_args(s.substr(open + 1, s.size() - open - 2));
  if (head == "product" || head == "lens") return std::make_shared<ProductLens>(make_lens(args));
  if (head == "perturbed") {
    if (args.size() != 3) throw CatalogMiss("perturbed takes (base, amplitude, seed)");
    double seed = to_double(args[2]);
    if (seed < 0 || seed != std::floor(seed)) throw CatalogMiss("perturbed seed must be a non-negative integer");
    return std::make_shared<Perturbed>(make_base(args[0]), to_double(args[1]),
                                       static_cast<unsigned long long>(seed));
  }
  throw CatalogMiss("unknown metric '" + spec + "'");
}

bool has_lorentz_signature(const Mat4& g, double tol) {
  Eigen::SelfAdjointEigenSolver<Mat4> es(0.5 * (g + g.transpose()));
  const auto& ev = es.eigenvalues();
  return ev[0] < -tol && ev[1] > tol;
}

}  // namespace lorentz
