#include "lorentz/geometry.hpp"

#include "lorentz/errors.hpp"

namespace lorentz {

namespace {

template <class T>
struct Conn {
  Sym4<T> gi;
  std::array<Sym4<T>, 4> G;  // G[k][i][j]
};

template <class T>
Conn<T> connection(const Sym4<T>& g, const std::array<Sym4<T>, 4>& dg) {
  Conn<T> c;
  c.gi = inverse4(g);
  Sym4<T> low[4];
  for (int l = 0; l < 4; ++l)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) low[l][i][j] = 0.5 * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]);
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) {
        T s = T(0.0);
        for (int l = 0; l < 4; ++l) s += c.gi[k][l] * low[l][i][j];
        c.G[k][i][j] = s;
        c.G[k][j][i] = s;
      }
  return c;
}

template <class T>
Sym4<T> ricci_core(const Sym4<T>& g, const std::array<Sym4<T>, 4>& dg,
                   const std::array<std::array<Sym4<T>, 4>, 4>& d2g) {
  Conn<T> c = connection(g, dg);
  // ∂_m g^{kl} = −g^{ka} ∂_m g_ab g^{bl}
  std::array<Sym4<T>, 4> dgi;
  for (int m = 0; m < 4; ++m) {
    Sym4<T> tmp{};
    for (int a = 0; a < 4; ++a)
      for (int l = 0; l < 4; ++l) {
        T s = T(0.0);
        for (int b = 0; b < 4; ++b) s += dg[m][a][b] * c.gi[b][l];
        tmp[a][l] = s;
      }
    for (int k = 0; k < 4; ++k)
      for (int l = 0; l < 4; ++l) {
        T s = T(0.0);
        for (int a = 0; a < 4; ++a) s += c.gi[k][a] * tmp[a][l];
        dgi[m][k][l] = T(0.0) - s;
      }
  }
  // dG[m][k][i][j] = ∂_m Γ^k_ij
  std::array<std::array<Sym4<T>, 4>, 4> dG;
  for (int m = 0; m < 4; ++m) {
    Sym4<T> low[4], dlow[4];
    for (int l = 0; l < 4; ++l)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          low[l][i][j] = 0.5 * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]);
          dlow[l][i][j] = 0.5 * (d2g[m][i][l][j] + d2g[m][j][l][i] - d2g[m][l][i][j]);
        }
    for (int k = 0; k < 4; ++k)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          T s = T(0.0);
          for (int l = 0; l < 4; ++l) s += dgi[m][k][l] * low[l][i][j] + c.gi[k][l] * dlow[l][i][j];
          dG[m][k][i][j] = s;
        }
  }
  Sym4<T> R{};
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) {
      T s = T(0.0);
      for (int k = 0; k < 4; ++k) {
        s += dG[k][k][i][j] - dG[j][k][i][k];
        for (int l = 0; l < 4; ++l) s += c.G[k][k][l] * c.G[l][i][j] - c.G[k][j][l] * c.G[l][i][k];
      }
      R[i][j] = s;
      R[j][i] = s;
    }
  return R;
}

template <class T>
Sym4<T> einstein_core(const Sym4<T>& g, const Sym4<T>& ric) {
  Sym4<T> gi = inverse4(g);
  T tr = T(0.0);
  for (int p = 0; p < 4; ++p)
    for (int q = 0; q < 4; ++q) tr += gi[p][q] * ric[p][q];
  Sym4<T> E;
  for (int p = 0; p < 4; ++p)
    for (int q = 0; q < 4; ++q) E[p][q] = ric[p][q] - 0.5 * tr * g[p][q];
  return E;
}

Sym4<double> to_sym(const Mat4& m) {
  Sym4<double> s;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) s[i][j] = m(i, j);
  return s;
}

Mat4 to_mat(const Sym4<double>& s) {
  Mat4 m;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = s[i][j];
  return m;
}

struct Lifted {
  Sym4<Dual4> g;
  std::array<Sym4<Dual4>, 4> dg;
  std::array<std::array<Sym4<Dual4>, 4>, 4> d2g;
};

// metric jets promoted one derivative order: value carries ∂_n
Lifted lift(const MetricJet3& J) {
  Lifted L;
  for (int j = 0; j < 4; ++j)
    for (int k = 0; k < 4; ++k) {
      L.g[j][k] = Dual4(J.g(j, k));
      for (int n = 0; n < 4; ++n) L.g[j][k].d[n] = J.dg[n](j, k);
      for (int p = 0; p < 4; ++p) {
        L.dg[p][j][k] = Dual4(J.dg[p](j, k));
        for (int n = 0; n < 4; ++n) L.dg[p][j][k].d[n] = J.d2g[n][p](j, k);
        for (int q = 0; q < 4; ++q) {
          L.d2g[p][q][j][k] = Dual4(J.d2g[p][q](j, k));
          for (int n = 0; n < 4; ++n) L.d2g[p][q][j][k].d[n] = J.d3g[n][p][q](j, k);
        }
      }
    }
  return L;
}

TensorJet unpack(const Sym4<Dual4>& t) {
  TensorJet out;
  for (int j = 0; j < 4; ++j)
    for (int k = 0; k < 4; ++k) {
      out.value(j, k) = t[j][k].v;
      for (int n = 0; n < 4; ++n) out.d[n](j, k) = t[j][k].d[n];
    }
  return out;
}

Mat4 ricci_of(const MetricJet& J) {
  std::array<Sym4<double>, 4> dg;
  std::array<std::array<Sym4<double>, 4>, 4> d2g;
  for (int p = 0; p < 4; ++p) {
    dg[p] = to_sym(J.dg[p]);
    for (int q = 0; q < 4; ++q) d2g[p][q] = to_sym(J.d2g[p][q]);
  }
  return to_mat(ricci_core(to_sym(J.g), dg, d2g));
}

}  // namespace

ChristoffelJet christoffel_jet(const MetricProvider& g, const Vec4& x) {
  ChristoffelJet out;
  if (g.is_flat()) {
    for (auto& m : out.value) m.setZero();
    for (auto& c : out.d)
      for (auto& m : c) m.setZero();
    return out;
  }
  MetricJet J = g.jet2(x);
  Sym4<Dual4> gl;
  std::array<Sym4<Dual4>, 4> dgl;
  for (int j = 0; j < 4; ++j)
    for (int k = 0; k < 4; ++k) {
      gl[j][k] = Dual4(J.g(j, k));
      for (int n = 0; n < 4; ++n) gl[j][k].d[n] = J.dg[n](j, k);
      for (int p = 0; p < 4; ++p) {
        dgl[p][j][k] = Dual4(J.dg[p](j, k));
        for (int n = 0; n < 4; ++n) dgl[p][j][k].d[n] = J.d2g[n][p](j, k);
      }
    }
  Conn<Dual4> c = connection(gl, dgl);
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        out.value[k](i, j) = c.G[k][i][j].v;
        for (int m = 0; m < 4; ++m) out.d[m][k](i, j) = c.G[k][i][j].d[m];
      }
  return out;
}

Tensor2 raise(const Tensor2& t, const Mat4& g_inv) {
  Tensor2 r(g_inv * t.c * g_inv.transpose(), t.symmetric, {Index::contra, Index::contra});
  return r;
}

Tensor2 lower(const Tensor2& t, const Mat4& g) {
  return Tensor2(g * t.c * g.transpose(), t.symmetric, {Index::co, Index::co});
}

ScalarFieldFrame ScalarFieldFrame::affine(const Eigen::VectorXd& c,
                                          const Eigen::Matrix<double, 4, Eigen::Dynamic>& grad,
                                          double m) {
  ScalarFieldFrame f;
  f.L = static_cast<int>(c.size());
  f.m = m;
  f.phi = [c, grad](const Vec4& x) -> Eigen::VectorXd { return c + grad.transpose() * x; };
  f.d_phi = [grad](const Vec4&) { return grad; };
  return f;
}

Christoffel christoffel(const MetricProvider& g, const Vec4& x) { return g.christoffel(x); }

Tensor2 ricci(const MetricProvider& g, const Vec4& x) {
  if (g.is_flat()) return Tensor2(Mat4::Zero());
  return Tensor2(ricci_of(g.jet2(x)));
}

Tensor2 einstein(const MetricProvider& g, const Vec4& x) {
  MetricJet J = g.jet2(x);
  Mat4 R = ricci_of(J);
  return Tensor2(to_mat(einstein_core(to_sym(J.g), to_sym(R))));
}

Eigen::Vector4d harmonicity_functions(const MetricProvider& g, const MetricProvider& ghat, const Vec4& x) {
  Mat4 gi = g.inverse(x);
  Christoffel G = g.christoffel(x), H = ghat.christoffel(x);
  Eigen::Vector4d F;
  for (int n = 0; n < 4; ++n) F[n] = (gi.cwiseProduct(G[n] - H[n])).sum();
  return F;
}

VectorJet harmonicity_jet(const MetricProvider& g, const MetricProvider& ghat, const Vec4& x) {
  Lifted A = lift(g.jet3(x)), B = lift(ghat.jet3(x));
  Conn<Dual4> ca = connection(A.g, A.dg), cb = connection(B.g, B.dg);
  VectorJet out;
  for (int n = 0; n < 4; ++n) {
    Dual4 s(0.0);
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) s += ca.gi[j][k] * (ca.G[n][j][k] - cb.G[n][j][k]);
    out.value[n] = s.v;
    for (int q = 0; q < 4; ++q) out.d[q][n] = s.d[q];
  }
  return out;
}

Tensor2 reduced_einstein(const MetricProvider& g, const MetricProvider& ghat, const Vec4& x) {
  MetricJet J = g.jet2(x);
  Mat4 R = ricci_of(J);
  VectorJet F = harmonicity_jet(g, ghat, x);
  Christoffel H = ghat.christoffel(x);
  // ∇̂_q F^n
  Mat4 nabF;  // nabF(n,q)
  for (int n = 0; n < 4; ++n)
    for (int q = 0; q < 4; ++q) nabF(n, q) = F.d[q][n] + H[n].row(q).dot(F.value);
  Mat4 S = J.g * nabF;  // S(p,q) = g_pn ∇̂_q F^n
  Mat4 Rh = R - 0.5 * (S + S.transpose());
  return Tensor2(to_mat(einstein_core(to_sym(J.g), to_sym(Rh))));
}

Tensor2 stress_energy(const MetricProvider& g, const ScalarFieldFrame& fields, const Vec4& x) {
  Mat4 gm = g.eval(x), gi = g.inverse(x);
  Eigen::VectorXd phi = fields.phi(x);
  Eigen::Matrix<double, 4, Eigen::Dynamic> dphi = fields.d_phi(x);
  Mat4 T = Mat4::Zero();
  for (int l = 0; l < fields.L; ++l) {
    Eigen::Vector4d d = dphi.col(l);
    double kin = d.dot(gi * d);
    T += d * d.transpose() - 0.5 * kin * gm - 0.5 * fields.m * fields.m * phi[l] * phi[l] * gm;
  }
  return Tensor2(T);
}

Eigen::Vector4d divergence(const MetricProvider& g, const TensorField& Tf, const Vec4& x) {
  Mat4 gi = g.inverse(x);
  Christoffel G = g.christoffel(x);
  TensorJet T = Tf(x);
  Eigen::Vector4d out;
  for (int k = 0; k < 4; ++k) {
    double s = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int j = 0; j < 4; ++j) {
        if (gi(n, j) == 0.0) continue;
        double t = T.d[n](j, k);
        for (int m = 0; m < 4; ++m) t -= G[m](n, j) * T.value(m, k) + G[m](n, k) * T.value(j, m);
        s += gi(n, j) * t;
      }
    out[k] = s;
  }
  return out;
}

TensorField einstein_field(const MetricProvider& g) {
  return [&g](const Vec4& x) {
    Lifted L = lift(g.jet3(x));
    Sym4<Dual4> R = ricci_core(L.g, L.dg, L.d2g);
    return unpack(einstein_core(L.g, R));
  };
}

TensorField fd_field(std::function<Mat4(const Vec4&)> f, double h, int order) {
  return [f = std::move(f), h, order](const Vec4& x) {
    TensorJet out;
    out.value = f(x);
    for (int n = 0; n < 4; ++n) {
      Vec4 e = Vec4::Zero();
      e[n] = h;
      if (order == 4)
        out.d[n] = (8.0 * (f(x + e) - f(x - e)) - (f(x + 2 * e) - f(x - 2 * e))) / (12.0 * h);
      else
        out.d[n] = (f(x + e) - f(x - e)) / (2.0 * h);
    }
    return out;
  };
}

Mat4 ricci_fd(const MetricProvider& g, const Vec4& x, double h) {
  auto gam = [&](const Vec4& p) {
    std::array<Mat4, 4> dg;
    for (int n = 0; n < 4; ++n) {
      Vec4 e = Vec4::Zero();
      e[n] = h;
      dg[n] = (8.0 * (g.eval(p + e) - g.eval(p - e)) - (g.eval(p + 2 * e) - g.eval(p - 2 * e))) / (12.0 * h);
    }
    return christoffel_from(g.eval(p), dg);
  };
  Christoffel G = gam(x);
  std::array<Christoffel, 4> dG;
  for (int m = 0; m < 4; ++m) {
    Vec4 e = Vec4::Zero();
    e[m] = h;
    Christoffel a = gam(x + e), b = gam(x - e), a2 = gam(x + 2 * e), b2 = gam(x - 2 * e);
    for (int k = 0; k < 4; ++k) dG[m][k] = (8.0 * (a[k] - b[k]) - (a2[k] - b2[k])) / (12.0 * h);
  }
  Mat4 R = Mat4::Zero();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) {
        R(i, j) += dG[k][k](i, j) - dG[j][k](i, k);
        for (int l = 0; l < 4; ++l) R(i, j) += G[k](k, l) * G[l](i, j) - G[k](j, l) * G[l](i, k);
      }
  return R;
}

}  // namespace lorentz
