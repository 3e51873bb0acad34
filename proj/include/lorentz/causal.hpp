#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "lorentz/metric.hpp"

namespace lorentz {

enum class CausalClass { timelike, null, spacelike };

CausalClass classify(const Mat4& g, const Vec4& v, double band = 1e-10);
const char* to_string(CausalClass c);

struct GeodesicState {
  Vec4 x;
  Vec4 v;
  double s = 0.0;
};

// sampled geodesic with cubic Hermite interpolation between samples
struct GeodesicPath {
  std::vector<GeodesicState> states;  // increasing s
  std::vector<Vec4> acc;              // dv/ds at the samples
  // Jacobi data for δv-variations (present when requested): J = ∂x/∂v0, dJ = ∂v/∂v0
  std::vector<Eigen::Matrix4d> J, dJ;

  double s_begin() const { return states.front().s; }
  double s_end() const { return states.back().s; }
  GeodesicState at(double s) const;
  Vec4 position(double s) const { return at(s).x; }
  Eigen::Matrix4d jacobi(double s) const;
};

struct FlowOptions {
  double tol = 1e-11;
  double sample_step = 5e-3;  // spacing of stored samples
  bool jacobi = false;
};

// exp_x(s v0) for s between 0 and s_max (either sign)
GeodesicPath geodesic_flow(const MetricProvider& g, const Vec4& x0, const Vec4& v0, double s_max,
                           const FlowOptions& opt = {});
GeodesicState geodesic_endpoint(const MetricProvider& g, const Vec4& x0, const Vec4& v0, double s,
                                double tol = 1e-11);
// endpoint with J = ∂x(s)/∂v0
GeodesicState geodesic_endpoint_jacobi(const MetricProvider& g, const Vec4& x0, const Vec4& v0, double s,
                                       Eigen::Matrix4d& J, double tol = 1e-11);

// null vector (±1, c ŵ) with spatial direction w
Vec4 null_direction(const Mat4& g, const Eigen::Vector3d& w, bool future = true);
// ∂ null_direction / ∂w, central differences
Eigen::Matrix<double, 4, 3> null_direction_jacobian(const Mat4& g, const Eigen::Vector3d& w, bool future = true);
// minimum-norm least-squares step for Newton iterations on the unit-sphere parametrization
Eigen::VectorXd least_squares_step(const Eigen::MatrixXd& A, const Eigen::VectorXd& r);

struct ShootOptions {
  int max_iter = 40;
  double tol = 1e-11;
  int direction_grid = 6;   // extra guesses on curved metrics
  double grid_angle = 0.35;  // radians
};

// all geodesic solutions of exp_x(v) = y found from the guess set
std::vector<Vec4> shoot(const MetricProvider& g, const Vec4& x, const Vec4& y, const ShootOptions& opt = {});

double time_separation(const MetricProvider& g, const Vec4& x, const Vec4& y, const ShootOptions& opt = {});

// null geodesic from `from` through `to`: initial null vector (x^0-component ±1) and parameter
struct NullLink {
  Vec4 zeta;
  double t = 0.0;
  double residual = 0.0;
};
std::optional<NullLink> null_connect(const MetricProvider& g, const Vec4& from, const Vec4& to, bool future = true,
                                     double tol = 1e-9);

// signed offset y^0 − (arrival time of the future null cone of q at the spatial location of y)
// >0 inside the future cone, 0 on it, <0 outside
double cone_offset(const MetricProvider& g, const Vec4& q, const Vec4& y);

struct Observer {
  Vec4 z;
  Vec4 eta;
  GeodesicPath path;  // sampled on an extended span
};

struct ObserverFamilySpec {
  Vec4 z0 = Vec4::Zero();
  Vec4 eta0 = Vec4(1, 0, 0, 0);
  double radius = 0.1;
  int grid = 3;       // points per spatial axis
  int tilts = 0;      // extra velocity tilts per grid point
  double tilt = 0.05;
};

class ObserverFamily {
 public:
  static ObserverFamily build(const MetricProvider& g, const ObserverFamilySpec& spec);
  static Observer make_observer(const MetricProvider& g, const Vec4& z, const Vec4& eta_dir);

  const Observer& center() const { return obs_.front(); }
  const std::vector<Observer>& observers() const { return obs_; }
  size_t size() const { return obs_.size(); }
  const ObserverFamilySpec& spec() const { return spec_; }

 private:
  ObserverFamilySpec spec_;
  std::vector<Observer> obs_;  // index 0 is the center
};

struct ObservationRecord {
  Vec4 q;
  std::vector<double> values;
};

// f⁺ = inf{s : τ(x, μ(s)) > 0} and f⁻ = sup{s : τ(μ(s), x) > 0}, clamped to [−1,1]
// observer parameter where the null geodesic from x with initial spatial direction near w meets mu
std::optional<double> cone_hits_observer(const MetricProvider& g, const Observer& mu, const Vec4& x, bool future,
                                         double s_guess, Eigen::Vector3d w);
double f_plus(const MetricProvider& g, const Observer& mu, const Vec4& x, bool require_diamond = false);
double f_minus(const MetricProvider& g, const Observer& mu, const Vec4& x, bool require_diamond = false);
// bisection on s ↦ [τ(x, μ(s)) > 0]
double f_plus_bisect(const MetricProvider& g, const Observer& mu, const Vec4& x, double tol = 1e-10);

struct EarliestHit {
  double s;
  Vec4 point;
};
std::optional<EarliestHit> earliest_point(const Observer& mu, const std::vector<Vec4>& W, double eps = 1e-6);
// W given implicitly as {p : indicator(p) ≥ 0}
std::optional<EarliestHit> earliest_point(const Observer& mu, const std::function<double(const Vec4&)>& indicator,
                                          double tol = 1e-12);

ObservationRecord earliest_light_observation_set(const MetricProvider& g, const Vec4& q,
                                                 const ObserverFamily& family);

struct CutOptions {
  double horizon = 4.0;
  bool check_competing = false;
  double competing_step = 0.1;
  ShootOptions shoot;
};
struct CutResult {
  double rho;
  bool found = false;  // false: sentinel, no cut point within horizon
  double conjugate = -1.0;
  double competing = -1.0;
};
CutResult cut_locus(const MetricProvider& g, const Vec4& x, const Vec4& xi, const CutOptions& opt = {});
// first conjugate parameter from the Jacobi determinant, or nullopt
std::optional<double> first_conjugate(const MetricProvider& g, const Vec4& x, const Vec4& xi, double horizon);

struct NullTuple {
  std::array<Vec4, 4> x;
  std::array<Vec4, 4> xi;
};

struct IntersectionOptions {
  double span = 3.0;
  double tol = 1e-8;
  int scan = 600;
  bool pre_cut = true;
};
struct Intersection {
  Vec4 q;
  std::array<double, 4> params;
  int multiplicity = 1;
};
std::optional<Intersection> intersection_point(const MetricProvider& g, const NullTuple& t, double t0,
                                               const IntersectionOptions& opt = {});

struct TupleOptions {
  double perturbation = 0.05;  // angle of the three companion directions
  double tol = 1e-8;
};
// tuples with (x1, ξ1) = (y, ζ) whose geodesics meet at q; throws TopologyError when y–q has no null link
std::vector<NullTuple> direction_tuples_for(const MetricProvider& g, const Vec4& q, const Vec4& y, double t0,
                                            int count, const TupleOptions& opt = {});

}  // namespace lorentz
