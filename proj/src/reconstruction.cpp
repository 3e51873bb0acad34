#include "lorentz/reconstruction.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <boost/math/tools/toms748_solve.hpp>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

#include "lorentz/errors.hpp"

namespace lorentz {

namespace {

Eigen::Vector3d spatial(const Vec4& v) { return v.tail<3>(); }

std::vector<Eigen::Vector3d> fibonacci_sphere(int n) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(n);
  const double golden = std::numbers::pi * (1.0 + std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    double z = 1.0 - 2.0 * (i + 0.5) / n;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = golden * (i + 0.5);
    out.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return out;
}

// root of a function with f(a) < 0 <= f(b)
double bracket_root(const std::function<double(double)>& f, double a, double b, double fa, double fb) {
  boost::uintmax_t iters = 100;
  auto tol = [](double x, double y) { return std::abs(x - y) <= 1e-14 * std::max(1.0, std::abs(x)); };
  auto r = boost::math::tools::toms748_solve(f, a, b, fa, fb, tol, iters);
  return r.second;
}

// first r in [lo, hi] with f(r) >= 0 when the sign changes once; hi when it never does
std::optional<double> first_crossing(const std::function<double(double)>& f, double lo, double hi) {
  double flo = f(lo);
  if (flo >= 0) return lo;
  double fhi = f(hi);
  if (fhi < 0) return std::nullopt;
  return bracket_root(f, lo, hi, flo, fhi);
}

// ϑ-level companion angle; pairwise (x, ξ̂) spread stays below theta
double companion_angle(double theta, double r) { return theta / (2.0 * std::sqrt(1.0 + r * r)); }

}  // namespace

// ---- experiment ----

Experiment Experiment::build(const Scenario& sc) {
  if (!(sc.s_minus < sc.s_plus && sc.s_plus < sc.s_plus2))
    throw ConfigError("observer window must satisfy s_minus < s_plus < s_plus2");
  if (sc.s_minus < -1.0 || sc.s_plus2 > 1.0) throw ConfigError("observer window must lie in [-1, 1]");
  if (!(sc.t0 > 0.0) || !(sc.eps > 0.0) || !(sc.theta > 0.0) || !(sc.grid_step > 0.0))
    throw ConfigError("t0, eps, theta and grid_step must be positive");
  if (sc.kappa1 > 0.0 && sc.t0 > 4.0 * sc.kappa1)
    throw ConfigError(fmt::format("t0 = {} outside the calibrated range (0, 4 kappa1 = {}]", sc.t0, 4 * sc.kappa1));
  Experiment ex;
  ex.sc_ = sc;
  ex.g_ = make_metric(sc.metric);
  ex.fam_ = ObserverFamily::build(*ex.g_, sc.family);
  return ex;
}

// ---- condition (I) ----

std::optional<ConditionI> condition_I(const MetricProvider& g, const Vec4& y, const NullTuple& T, double t0,
                                      double eps, double horizon) {
  auto I = intersection_point(g, T, t0);
  if (!I) return std::nullopt;
  const Vec4& q = I->q;
  if (spatial(y - q).norm() < 1e-12) return std::nullopt;
  double off = cone_offset(g, q, y);
  if (std::abs(off) > eps) return std::nullopt;
  Vec4 foot = y;
  foot[0] -= off;
  auto link = null_connect(g, q, foot, true, std::max(1e-8, 2.0 * eps));
  if (!link) return std::nullopt;
  if (auto c = first_conjugate(g, q, link->zeta, horizon); c && link->t >= *c) return std::nullopt;
  return ConditionI{q, link->zeta, link->t, off};
}

double tuple_spread(const NullTuple& T) {
  double m = 0.0;
  for (int j = 0; j < 4; ++j)
    for (int k = j + 1; k < 4; ++k) {
      double dx = (T.x[j] - T.x[k]).squaredNorm();
      double dxi = (T.xi[j].normalized() - T.xi[k].normalized()).squaredNorm();
      m = std::max(m, std::sqrt(dx + dxi));
    }
  return m;
}

void check_tuple_admissible(const MetricProvider& g, const NullTuple& T, double t0, double theta1) {
  std::array<Vec4, 4> xt;
  for (int j = 0; j < 4; ++j) xt[j] = geodesic_endpoint(g, T.x[j], T.xi[j], t0).x;
  for (int j = 0; j < 4; ++j)
    for (int k = 0; k < 4; ++k) {
      if (j == k) continue;
      if ((xt[j] - xt[k]).norm() < 1e-12 || cone_offset(g, xt[k], xt[j]) >= 0.0)
        throw AdmissibilityError(fmt::format("clause (i): x_{}(t0) lies in the causal future of x_{}(t0)", j + 1, k + 1));
    }
  if (theta1 > 0.0) {
    double s = tuple_spread(T);
    if (s >= theta1) throw AdmissibilityError(fmt::format("clause (ii): tuple spread {} >= theta1 = {}", s, theta1));
  }
}

// ---- detection sets ----

std::optional<double> earliest_cone_hit(const MetricProvider& g, const Observer& mu, const Vec4& q) {
  auto h = [&](double s) { return cone_offset(g, q, mu.path.position(s)); };
  double a = -1.0, b = 1.0;
  double fa = h(a);
  if (fa >= 0) return a;
  double fb = h(b);
  if (fb < 0) return std::nullopt;
  // secant steps from a Newton start, safeguarded by the bracket
  double x = a - fa / mu.path.at(a).v[0], xp = a, fxp = fa;
  for (int it = 0; it < 80; ++it) {
    if (!(x > a && x < b)) x = 0.5 * (a + b);
    double fx = h(x);
    if (fx >= 0) b = x;
    else a = x;
    if (fx == 0.0 || b - a < 1e-14) return x;
    double xn = fx != fxp ? x - fx * (x - xp) / (fx - fxp) : 0.5 * (a + b);
    if (std::abs(xn - x) < 1e-14) return xn;
    xp = x;
    fxp = fx;
    x = xn;
  }
  return b;
}

ObservationRecord DetectionSet::record() const {
  ObservationRecord r;
  r.q = q ? q->q : Vec4::Constant(NAN);
  r.values = earliest;
  return r;
}

DetectionSet detection_set(const MetricProvider& g, const NullTuple& T, double t0, const ObserverFamily& family,
                           const DetectionOptions& opt) {
  if (opt.check_admissible) check_tuple_admissible(g, T, t0, opt.theta1);
  DetectionSet ds;
  ds.tuple = T;
  ds.t0 = t0;
  ds.q = intersection_point(g, T, t0);
  if (!ds.q) return ds;
  const Vec4& q = ds.q->q;
  if (!g.is_flat()) {
    CutOptions co;
    co.horizon = 3.0;
    for (int j = 0; j < 4; ++j) {
      GeodesicState s = geodesic_endpoint(g, T.x[j], T.xi[j], t0);
      CutResult c = cut_locus(g, s.x, s.v, co);
      if (c.found) ds.cut_points.push_back(geodesic_endpoint(g, s.x, s.v, c.rho).x);
    }
  }
  size_t n = opt.center_only ? 1 : family.size();
  ds.earliest.assign(n, 1.0);
  ds.hit.assign(n, false);
  for (size_t i = 0; i < n; ++i) {
    const Observer& o = family.observers()[i];
    auto s = earliest_cone_hit(g, o, q);
    if (!s) continue;
    // observations outside 𝒱 are not analyzed
    Vec4 p = o.path.position(*s);
    bool in_v = std::none_of(ds.cut_points.begin(), ds.cut_points.end(),
                             [&](const Vec4& c) { return cone_offset(g, c, p) >= 0.0; });
    if (!in_v) continue;
    ds.earliest[i] = *s;
    ds.hit[i] = true;
  }
  if (opt.sample_cone) {
    Mat4 gq = g.eval(q);
    for (const auto& w : fibonacci_sphere(opt.cone_directions)) {
      ConeGenerator c;
      c.zeta = null_direction(gq, w, true);
      c.limit = opt.cone_horizon;
      if (auto k = first_conjugate(g, q, c.zeta, opt.cone_horizon)) c.limit = *k;
      FlowOptions fo;
      fo.sample_step = 1e-2;
      c.path = geodesic_flow(g, q, c.zeta, c.limit, fo);
      ds.generators.push_back(std::move(c));
    }
  }
  return ds;
}

double DetectionSet::distance(const MetricProvider& g, const Vec4& y) const {
  if (!q) return INFINITY;
  if (generators.empty()) throw Error("detection set has no cone sample");
  const Vec4& qq = q->q;
  double best = (y - qq).norm();
  const ConeGenerator* gb = nullptr;
  double sb = 0.0;
  for (const auto& c : generators)
    for (const auto& st : c.path.states) {
      double d = (st.x - y).norm();
      if (d < best) {
        best = d;
        gb = &c;
        sb = st.s;
      }
    }
  if (!gb) return best;
  // Gauss-Newton for the foot point on the cone, unknowns (w, t)
  Mat4 gq = g.eval(qq);
  Eigen::Vector3d w = spatial(gb->zeta).normalized();
  double t = sb;
  double d = best;
  for (int it = 0; it < 40; ++it) {
    Vec4 z = null_direction(gq, w, true);
    Eigen::Matrix4d J;
    GeodesicState e = geodesic_endpoint_jacobi(g, qq, z, t, J);
    Vec4 r = e.x - y;
    d = std::min(d, r.norm());
    Eigen::Matrix4d A;
    A.leftCols<3>() = J * null_direction_jacobian(gq, w, true);
    A.col(3) = e.v;
    Eigen::VectorXd step = least_squares_step(A, r);
    w -= step.head<3>();
    w.normalize();
    t = std::clamp(t - step[3], 1e-9, gb->limit);
    if (step.norm() < 1e-13) break;
  }
  return std::min(best, d);
}

// ---- 𝕊 ----

GeodesicPath observation_geodesic(const Experiment& ex, const Vec4& y, const Vec4& zeta) {
  const auto& g = ex.metric();
  const auto& sc = ex.scenario();
  if (!(zeta[0] > 0)) throw AdmissibilityError("zeta must be future pointing");
  Vec4 top = ex.mu(sc.s_plus2);
  double len = 1.25 * std::max(top[0] - y[0], 0.0) / zeta[0] + 0.2;
  FlowOptions fo;
  fo.sample_step = 5e-3;
  GeodesicPath P = geodesic_flow(g, y, zeta, len, fo);
  // distance to μ̂ at equal coordinate time
  const auto& cs = ex.center().path.states;
  double dmin = INFINITY;
  for (const auto& st : P.states) {
    double t = st.x[0];
    auto it = std::lower_bound(cs.begin(), cs.end(), t, [](const GeodesicState& a, double v) { return a.x[0] < v; });
    if (it == cs.begin() || it == cs.end()) continue;
    auto pv = std::prev(it);
    double s = pv->s + (it->s - pv->s) * (t - pv->x[0]) / (it->x[0] - pv->x[0]);
    dmin = std::min(dmin, spatial(ex.center().path.position(s) - st.x).norm());
  }
  if (dmin < sc.avoid_tol)
    throw AdmissibilityError(fmt::format("geodesic passes within {} of the central observer", dmin));
  return P;
}

namespace {

struct Window {
  double r1 = INFINITY, r2 = INFINITY, rp = INFINITY;
};

Window observation_window(const Experiment& ex, const GeodesicPath& P, double s1) {
  const auto& g = ex.metric();
  Vec4 x1 = ex.mu(s1), top = ex.mu(ex.scenario().s_plus2), pp = ex.p_plus();
  Window w;
  auto F2 = [&](double r) { return -cone_offset(g, P.position(r), top); };
  auto r2 = first_crossing(F2, 0.0, P.s_end());
  if (!r2) throw Error("geodesic sample too short to leave the past of mu(s_plus2)");
  w.r2 = *r2;
  auto Fp = [&](double r) { return -cone_offset(g, P.position(r), pp); };
  if (auto rp = first_crossing(Fp, 0.0, w.r2)) w.rp = *rp;
  auto F1 = [&](double r) { return cone_offset(g, x1, P.position(r)); };
  if (auto r1 = first_crossing(F1, 0.0, w.r2)) w.r1 = *r1;
  return w;
}

}  // namespace

CutObservation cut_observation_S(const Experiment& ex, const Vec4& y, const Vec4& zeta, double s1) {
  const auto& g = ex.metric();
  GeodesicPath P = observation_geodesic(ex, y, zeta);
  Window w = observation_window(ex, P, s1);
  CutObservation c;
  c.r1 = w.r1;
  c.r2 = w.r2;
  c.r0 = std::min(w.r1, w.r2);
  c.S = ex.scenario().s_plus;
  if (std::isfinite(c.r0)) c.q0 = P.position(c.r0);
  if (std::isfinite(w.r1) && w.r1 < w.r2) {
    Vec4 e = P.position(w.r1);
    c.entered = cone_offset(g, e, ex.p_plus()) >= -1e-12;
  }
  if (c.entered) c.S = f_plus(g, ex.center(), c.q0);
  return c;
}

// ---- T ----

namespace {

struct Probe {
  bool built = false;       // tuple and detection set exist
  bool admissible = false;  // 𝒮_e lies in E_U(J⁺(μ̂(s1)) ∩ J⁻(p⁺))
  bool past_top = false;    // generating point outside J⁻(p⁺)
  double s_hit = 1.0;
};

Probe probe(const Experiment& ex, const GeodesicPath& P, double r, double theta, double s1) {
  const auto& g = ex.metric();
  const auto& sc = ex.scenario();
  Probe out;
  Vec4 y = P.states.front().x;
  std::vector<NullTuple> tuples;
  double a = companion_angle(theta, r);
  for (int attempt = 0; attempt < 4; ++attempt, a *= 0.5) {
    try {
      TupleOptions to;
      to.perturbation = a;
      tuples = direction_tuples_for(g, P.position(r), y, sc.t0, 1, to);
      check_tuple_admissible(g, tuples[0], sc.t0, theta);
      break;
    } catch (const AdmissibilityError& e) {
      tuples.clear();
      if (std::string(e.what()).find("clause (ii)") == std::string::npos) return out;
    } catch (const TopologyError&) {
      return out;
    }
  }
  if (tuples.empty()) return out;
  DetectionOptions o;
  o.center_only = true;
  o.check_admissible = false;
  DetectionSet ds = detection_set(g, tuples[0], sc.t0, ex.family(), o);
  if (ds.empty()) return out;
  out.built = true;
  const Vec4& q = ds.q->q;
  out.past_top = cone_offset(g, q, ex.p_plus()) < -1e-12;
  bool after_s1 = cone_offset(g, ex.mu(s1), q) >= -1e-12;
  out.admissible = ds.hit[0] && after_s1 && !out.past_top && ds.earliest[0] <= sc.s_plus + 1e-12;
  out.s_hit = ds.earliest[0];
  return out;
}

}  // namespace

GenuineObservation genuine_observation_T(const Experiment& ex, const Vec4& y, const Vec4& zeta, double s1) {
  const auto& sc = ex.scenario();
  GenuineObservation G;
  G.T = sc.s_plus;
  GeodesicPath P = observation_geodesic(ex, y, zeta);
  const double coarse = 0.02;
  const double levels[3] = {sc.theta, sc.theta / 2, sc.theta / 4};
  auto eval = [&](double r, int l) {
    Probe p = probe(ex, P, r, levels[l], s1);
    G.evaluated += p.built;
    G.genuine += p.admissible;
    return p;
  };
  int built = 0;
  double lo = sc.t0, hi = NAN;
  Probe found;
  for (double r = sc.t0 + coarse; r < P.s_end(); r += coarse) {
    Probe p = eval(r, 0);
    if (!p.built) continue;
    ++built;
    if (p.admissible) {
      hi = r;
      found = p;
      break;
    }
    if (p.past_top) break;
    lo = r;
  }
  if (built == 0) {
    G.resolution_warning = true;
    G.warning = "no tuple sample along the geodesic";
    G.per_level.assign(3, G.T);
    return G;
  }
  if (std::isnan(hi)) {
    G.per_level.assign(3, G.T);
    return G;
  }
  while (hi - lo > sc.grid_step / 4) {
    double m = 0.5 * (lo + hi);
    Probe p = eval(m, 0);
    if (p.built && p.admissible) {
      hi = m;
      found = p;
    } else {
      lo = m;
    }
  }
  // the observation must be realized at every ϑ level
  for (int shift = 0; shift < 4; ++shift) {
    double r = hi + shift * sc.grid_step / 4;
    std::vector<double> vals{found.s_hit};
    if (shift > 0) {
      Probe p = eval(r, 0);
      if (!p.admissible) continue;
      vals[0] = p.s_hit;
    }
    bool ok = true;
    for (int l = 1; l < 3 && ok; ++l) {
      Probe p = eval(r, l);
      ok = p.admissible;
      vals.push_back(p.s_hit);
    }
    if (!ok) continue;
    G.per_level = vals;
    G.r = r;
    G.T = *std::min_element(vals.begin(), vals.end());
    return G;
  }
  G.resolution_warning = true;
  G.warning = "observation not reproduced at all theta levels";
  G.per_level.assign(3, found.s_hit);
  G.r = hi;
  G.T = found.s_hit;
  return G;
}

// ---- collection and reconstruction ----

CollectedSets collect_earliest_sets(const Experiment& ex, const Vec4& y, const Vec4& zeta, double s1,
                                    const CollectOptions& opt) {
  const auto& g = ex.metric();
  const auto& sc = ex.scenario();
  GeodesicPath P = observation_geodesic(ex, y, zeta);
  Window w = observation_window(ex, P, s1);
  CollectedSets out;
  out.r0 = std::min(w.r1, w.r2);
  out.r_end = std::min(out.r0, w.rp);
  std::vector<double> ts;
  if (!opt.ts.empty()) {
    for (double t : opt.ts)
      if (t > sc.t0 && t < out.r_end) ts.push_back(t);
  } else {
    for (int k = 1;; ++k) {
      double t = sc.t0 + k * opt.t_step;
      if (t >= out.r_end) break;
      ts.push_back(t);
    }
  }
  out.grid_count = static_cast<int>(ts.size());
  // the boundary point just inside the domain
  if (out.r_end >= opt.end_lo && out.r_end < opt.end_hi && out.r_end > sc.t0 &&
      (ts.empty() || out.r_end - ts.back() > 1e-6))
    ts.push_back(out.r_end - 1e-7);
  double theta = opt.theta > 0 ? opt.theta : sc.theta;
  for (double t : ts) {
    try {
      TupleOptions to;
      to.perturbation = companion_angle(theta, t);
      auto tuples = direction_tuples_for(g, P.position(t), y, sc.t0, 1, to);
      DetectionOptions o;
      o.theta1 = theta;
      DetectionSet ds = detection_set(g, tuples[0], sc.t0, ex.family(), o);
      if (ds.empty()) {
        ++out.failed;
        continue;
      }
      out.records.push_back({t, P.position(t), ds.record()});
    } catch (const AdmissibilityError&) {
      ++out.failed;
    } catch (const TopologyError&) {
      ++out.failed;
    }
  }
  return out;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  unsigned nt = threads > 0 ? static_cast<unsigned>(threads) : hw;
  nt = static_cast<unsigned>(std::min<std::size_t>(nt, n));
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex m;
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < nt; ++k)
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next++;
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(m);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

Cloud reconstruct_diamond(const Experiment& ex, const ReconstructionOptions& opt) {
  const auto& g = ex.metric();
  const auto& sc = ex.scenario();
  if (!(sc.kappa2 > 0.0)) throw ConfigError("kappa2 is not calibrated");
  Cloud cloud;
  const double ds = opt.ds_factor * opt.delta, dr = opt.dr_factor * opt.delta, h = opt.dir_factor * opt.delta;
  double s0 = sc.s_plus - std::max(opt.seed_height, 2.5 * ds);
  double width = std::min(opt.stage_width, 0.9 * sc.kappa2);
  int K = std::max(1, static_cast<int>(std::ceil((s0 - sc.s_minus) / width - 1e-12)));
  for (int j = 0; j <= K; ++j) cloud.s_grid.push_back(s0 - (s0 - sc.s_minus) * j / K);

  const double rmin = opt.y_offset + sc.t0 + 1e-9;

  // lattice rows s_i, radii r with a half-step stagger, direction bands of ratio √2
  struct Task {
    int stage;
    double s;
    Eigen::Vector3d w;
    std::vector<double> radii;
    double band_lo, band_hi;
    bool axis;  // also the point μ̂(s) itself
  };
  std::vector<double> rows;
  for (int i = 0;; ++i) {
    double s = sc.s_plus - (i + 0.5) * ds;
    if (s < sc.s_minus) break;
    rows.push_back(s);
  }
  if (rows.empty() || rows.back() > sc.s_minus + 0.25 * ds) rows.push_back(sc.s_minus);
  // largest cone parameter still inside J⁻(p⁺), probed along the axes
  auto radius_bound = [&](double s) {
    Vec4 x = ex.mu(s);
    Mat4 gx = g.eval(x);
    double m = 0.0;
    for (int a = 0; a < 6; ++a) {
      Eigen::Vector3d w = Eigen::Vector3d::Zero();
      w[a / 2] = a % 2 ? -1.0 : 1.0;
      Vec4 z = null_direction(gx, w, true);
      GeodesicPath P = geodesic_flow(g, x, z, 1.5 * (ex.p_plus()[0] - x[0]) / z[0] + 0.1);
      auto F = [&](double r) { return -cone_offset(g, P.position(r), ex.p_plus()); };
      m = std::max(m, first_crossing(F, 0.0, P.s_end()).value_or(P.s_end()));
    }
    return m;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double s = rows[i];
    int stage = 0;
    for (int j = 1; j <= K; ++j)
      if (s < cloud.s_grid[j - 1]) stage = j;
    double rb = radius_bound(s);
    double rmax = 1.1 * rb + dr;
    // seed points need no t0 clearance
    double r_start = stage == 0 ? 0.25 * dr : rmin;
    bool axis_done = false;
    std::vector<double> rs;
    for (double r = r_start + 0.5 * dr * (i % 2); r < rmax; r += dr) rs.push_back(r);
    double lo = r_start;
    while (lo < rmax) {
      double hi = lo * std::numbers::sqrt2;
      std::vector<double> band;
      for (double r : rs)
        if (r >= lo && r < hi) band.push_back(r);
      if (!band.empty() || (lo <= rb && rb < hi)) {
        double top = std::min(hi, rmax);
        int n = static_cast<int>(std::ceil(4 * std::numbers::pi * top * top / (h * h)));
        for (const auto& w : fibonacci_sphere(std::max(n, 4))) {
          tasks.push_back({stage, s, w, band, lo, hi, stage == 0 && !axis_done});
          axis_done = true;
        }
      }
      lo = hi;
    }
  }

  struct Result {
    std::vector<CloudPoint> pts;
    int failed = 0;
    bool ok = false;
  };
  std::vector<Result> results(tasks.size());
  parallel_for(tasks.size(), sc.threads, [&](std::size_t k) {
    const Task& T = tasks[k];
    Vec4 x = ex.mu(T.s);
    Vec4 zh = null_direction(g.eval(x), T.w, true);
    Result& R = results[k];
    if (T.stage == 0) {
      // seed: J⁺(μ̂(s0)) ∩ J⁻(p⁺) is observed directly
      std::vector<double> radii = T.radii;
      GeodesicPath P = geodesic_flow(g, x, zh, 1.5 * (ex.p_plus()[0] - x[0]) / zh[0] + 0.1);
      auto F = [&](double r) { return -cone_offset(g, P.position(r), ex.p_plus()); };
      if (auto re = first_crossing(F, 0.0, P.s_end()); re && *re >= T.band_lo && *re < T.band_hi)
        radii.push_back(*re - 1e-7);
      if (T.axis) radii.insert(radii.begin(), 0.0);
      for (double r : radii) {
        Vec4 q = r > 0 ? geodesic_endpoint(g, x, zh, r).x : x;
        if (cone_offset(g, q, ex.p_plus()) < 0.0) continue;
        CloudPoint p;
        p.stage = 0;
        p.target = q;
        p.record = earliest_light_observation_set(g, q, ex.family());
        R.pts.push_back(std::move(p));
      }
      R.ok = true;
      return;
    }
    GeodesicState ys = geodesic_endpoint(g, x, zh, opt.y_offset);
    CollectOptions co;
    for (double r : T.radii) co.ts.push_back(r - opt.y_offset);
    co.end_lo = T.band_lo - opt.y_offset;
    co.end_hi = T.band_hi - opt.y_offset;
    CollectedSets cs;
    try {
      cs = collect_earliest_sets(ex, ys.x, ys.v, cloud.s_grid[T.stage - 1], co);
    } catch (const AdmissibilityError&) {
      R.failed = static_cast<int>(T.radii.size());
      return;
    }
    R.ok = true;
    R.failed = cs.failed;
    for (auto& c : cs.records) {
      CloudPoint p;
      p.stage = T.stage;
      p.target = c.target;
      p.record = std::move(c.record);
      R.pts.push_back(std::move(p));
    }
  });

  cloud.stages.resize(K + 1);
  for (int j = 0; j <= K; ++j) {
    cloud.stages[j].stage = j;
    cloud.stages[j].s_hi = j == 0 ? sc.s_plus : cloud.s_grid[j - 1];
    cloud.stages[j].s_lo = j == 0 ? s0 : cloud.s_grid[j];
  }
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    auto& st = cloud.stages[tasks[k].stage];
    st.geodesics += results[k].ok;
    st.failed += results[k].failed;
    st.records += static_cast<int>(results[k].pts.size());
    for (auto& p : results[k].pts) cloud.points.push_back(std::move(p));
  }
  for (const auto& st : cloud.stages)
    if (st.records == 0)
      throw StageStarvation(fmt::format("stage {} (s in [{}, {})) produced no records: {} geodesics, {} failures",
                                        st.stage, st.s_lo, st.s_hi, st.geodesics, st.failed));
  if (opt.ground_truth)
    parallel_for(cloud.points.size(), sc.threads, [&](std::size_t i) {
      auto& p = cloud.points[i];
      p.truth = p.stage == 0 ? p.record : earliest_light_observation_set(g, p.target, ex.family());
    });
  return cloud;
}

// ---- scoring ----

double conformal_consistency(const std::vector<ObservationRecord>& a, const std::vector<ObservationRecord>& b,
                             const Matching& matching) {
  double score = 0.0;
  for (auto [i, j] : matching) {
    if (i >= a.size() || j >= b.size()) throw Error("matching index out of range");
    const auto& va = a[i].values;
    const auto& vb = b[j].values;
    if (va.size() != vb.size()) throw Error("records over different observer grids");
    for (std::size_t k = 0; k < va.size(); ++k) score = std::max(score, std::abs(va[k] - vb[k]));
  }
  return score;
}

double conformal_consistency(const std::vector<ObservationRecord>& a, const std::vector<ObservationRecord>& b) {
  if (a.size() != b.size()) throw Error("clouds of different size need an explicit matching");
  Matching m;
  for (std::size_t i = 0; i < a.size(); ++i) m.emplace_back(i, i);
  return conformal_consistency(a, b, m);
}

double cloud_consistency(const Cloud& c) {
  std::vector<ObservationRecord> a, b;
  for (const auto& p : c.points) {
    if (!p.truth) throw Error("cloud has no ground truth");
    a.push_back(p.record);
    b.push_back(*p.truth);
  }
  return conformal_consistency(a, b);
}

double coverage_radius(const Cloud& c, const std::vector<Vec4>& targets) {
  double worst = 0.0;
  for (const auto& t : targets) {
    double best = INFINITY;
    for (const auto& p : c.points) best = std::min(best, (p.record.q - t).squaredNorm());
    worst = std::max(worst, std::sqrt(best));
  }
  return worst;
}

double min_record_separation(const Cloud& c, std::size_t sample) {
  std::size_t n = c.points.size();
  std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(sample, 1));
  std::vector<const ObservationRecord*> recs;
  for (std::size_t i = 0; i < n; i += stride) recs.push_back(&c.points[i].record);
  double best = INFINITY;
  for (std::size_t i = 0; i < recs.size(); ++i)
    for (std::size_t j = i + 1; j < recs.size(); ++j) {
      if ((recs[i]->q - recs[j]->q).norm() < 1e-9) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < recs[i]->values.size(); ++k)
        d = std::max(d, std::abs(recs[i]->values[k] - recs[j]->values[k]));
      best = std::min(best, d);
    }
  return best;
}

// ---- calibration ----


KappaEstimate calibrate_kappa(const Experiment& ex, const CalibrationOptions& opt) {
  const auto& g = ex.metric();
  const auto& sc = ex.scenario();
  KappaEstimate k;
  k.min_rho = opt.horizon;
  CutOptions co;
  co.horizon = opt.horizon;
  Vec4 top = ex.mu(sc.s_plus2);
  auto dirs = fibonacci_sphere(opt.directions);
  struct Ray {
    double s;
    Vec4 x, z;
  };
  std::vector<Ray> rays;
  for (int i = 0; i < opt.s_samples; ++i) {
    double s = opt.s_samples > 1 ? sc.s_minus + (sc.s_plus - sc.s_minus) * i / (opt.s_samples - 1) : sc.s_minus;
    Vec4 x = ex.mu(s);
    Mat4 gx = g.eval(x);
    for (const auto& w : dirs) rays.push_back({s, x, null_direction(gx, w, true)});
  }
  for (const auto& R : rays) k.min_rho = std::min(k.min_rho, cut_locus(g, R.x, R.z, co).rho);
  k.kappa1 = 0.5 * k.min_rho / 5.0;
  k.theta1 = k.kappa1;
  // the gap shrinks with t0, so it is measured at the smallest admissible t0 = κ₁
  auto gap = [&](double s, const Vec4& x, const Vec4& z) -> std::optional<double> {
    GeodesicState x1 = geodesic_endpoint(g, x, z, k.kappa1);
    CutResult c1 = cut_locus(g, x1.x, x1.v, co);
    if (!c1.found) return std::nullopt;
    Vec4 p = geodesic_endpoint(g, x1.x, x1.v, c1.rho).x;
    if (cone_offset(g, p, top) < 0.0) return std::nullopt;
    // f⁻(p): latest observer hit over past null geodesics from p; rays bent around a lens
    // leave p far from the chart line, so the starts fan out widely
    Eigen::Vector3d d = spatial(x - p).normalized();
    Eigen::Vector3d e1 = d.unitOrthogonal(), e2 = d.cross(e1);
    double r2 = -INFINITY;
    for (double a : {0.0, 0.1, 0.25, 0.45, 0.7, 0.95, 1.2})
      for (int m = 0; m < (a > 0 ? 12 : 1); ++m) {
        double phi = std::numbers::pi * m / 6;
        Eigen::Vector3d w = std::cos(a) * d + std::sin(a) * (std::cos(phi) * e1 + std::sin(phi) * e2);
        if (auto h = cone_hits_observer(g, ex.center(), p, false, s, w); h && *h <= p[0]) r2 = std::max(r2, *h);
      }
    return std::max(r2, s) - s;
  };
  const Ray* best = nullptr;
  for (const auto& R : rays) {
    auto v = gap(R.s, R.x, R.z);
    if (!v) continue;
    ++k.cut_points;
    if (*v < k.min_gap) {
      k.min_gap = *v;
      best = &R;
    }
  }
  // the sampled minimum depends on how close a direction falls to the minimizer; refine by pattern search
  if (best) {
    Mat4 gx = g.eval(best->x);
    Eigen::Vector3d w = spatial(best->z).normalized();
    for (double h = 0.5 * std::sqrt(4 * std::numbers::pi / opt.directions); h > 2e-3; h *= 0.5) {
      bool moved = true;
      while (moved) {
        moved = false;
        Eigen::Vector3d e1 = w.unitOrthogonal(), e2 = w.cross(e1);
        for (const Eigen::Vector3d& e : {e1, e2, Eigen::Vector3d(-e1), Eigen::Vector3d(-e2)}) {
          Eigen::Vector3d wn = (w + h * e).normalized();
          auto v = gap(best->s, best->x, null_direction(gx, wn, true));
          if (v && *v < k.min_gap) {
            k.min_gap = *v;
            w = wn;
            moved = true;
            break;
          }
        }
      }
    }
  }
  k.kappa2_sentinel = k.cut_points == 0;
  k.kappa2 = k.kappa2_sentinel ? sc.s_plus - sc.s_minus : 0.5 * k.min_gap / 2.0;
  return k;
}

}  // namespace lorentz
