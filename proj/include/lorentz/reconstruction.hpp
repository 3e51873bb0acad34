#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lorentz/causal.hpp"
#include "lorentz/metric.hpp"

namespace lorentz {

// Singularity detection is simulated geometrically: a tuple "detects" y exactly when y lies on the
// pre-cut future light cone of the tuple's intersection point. No wave equation is solved.

struct Scenario {
  std::string metric = "minkowski";
  ObserverFamilySpec family;
  double s_minus = -0.5;
  double s_plus = 0.5;
  double s_plus2 = 0.75;  // μ̂(s₊₂) bounds the exit parameter r₂
  double t0 = 0.02;
  double eps = 1e-3;        // hit tolerance
  double theta = 0.05;      // ϑ for tuple sampling
  double grid_step = 1e-3;  // resolution of T
  double avoid_tol = 1e-3;  // minimal distance of γ_{y,ζ} from μ̂
  // calibration; zero means not calibrated
  double kappa1 = 0.0;
  double kappa2 = 0.0;
  double theta1 = 0.0;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: hardware concurrency
};

// scenario with metric and observers built
class Experiment {
 public:
  static Experiment build(const Scenario& sc);

  const Scenario& scenario() const { return sc_; }
  const MetricProvider& metric() const { return *g_; }
  MetricPtr metric_ptr() const { return g_; }
  const ObserverFamily& family() const { return fam_; }
  const Observer& center() const { return fam_.center(); }
  Vec4 mu(double s) const { return fam_.center().path.position(s); }
  Vec4 p_minus() const { return mu(sc_.s_minus); }
  Vec4 p_plus() const { return mu(sc_.s_plus); }

 private:
  Scenario sc_;
  MetricPtr g_;
  ObserverFamily fam_;
};

// ---- condition (I) and detection sets ----

struct ConditionI {
  Vec4 q;
  Vec4 zeta;
  double t = 0.0;
  double offset = 0.0;  // cone_offset(q, y)
};

// y on the pre-cut future cone of the tuple's intersection point, within eps in x⁰
std::optional<ConditionI> condition_I(const MetricProvider& g, const Vec4& y, const NullTuple& T, double t0,
                                      double eps, double horizon = 3.0);

// clause (i): x_j(t0) ∉ J⁺(x_k(t0)); clause (ii): pairwise (x, ξ/|ξ|) distance below theta1
void check_tuple_admissible(const MetricProvider& g, const NullTuple& T, double t0, double theta1);
// largest pairwise (x, ξ/|ξ|) distance of the tuple
double tuple_spread(const NullTuple& T);

struct DetectionOptions {
  bool center_only = false;
  bool sample_cone = false;
  int cone_directions = 200;
  double cone_horizon = 1.5;
  double theta1 = 0.0;  // clause (ii) skipped when zero
  bool check_admissible = true;
};

struct ConeGenerator {
  Vec4 zeta;
  double limit;  // pre-cut end of the sampled segment
  GeodesicPath path;
};

struct DetectionSet {
  NullTuple tuple;
  double t0 = 0.0;
  std::optional<Intersection> q;
  std::vector<Vec4> cut_points;          // cut points of the tuple geodesics after t0
  std::vector<ConeGenerator> generators;  // sample of 𝒮^cl
  std::vector<double> earliest;          // per observer, clamped to [−1,1] like f⁺
  std::vector<bool> hit;

  bool empty() const { return !q.has_value(); }
  ObservationRecord record() const;
  // Euclidean chart distance from y to the sampled closure 𝒮^cl, refined on the cone
  double distance(const MetricProvider& g, const Vec4& y) const;
  bool contains(const MetricProvider& g, const Vec4& y, double eps) const { return distance(g, y) <= eps; }
};

DetectionSet detection_set(const MetricProvider& g, const NullTuple& T, double t0, const ObserverFamily& family,
                           const DetectionOptions& opt = {});

// earliest s ∈ [−1,1] with μ(s) in the closed future cone of q; nullopt without a hit
std::optional<double> earliest_cone_hit(const MetricProvider& g, const Observer& mu, const Vec4& q);

// ---- 𝕊 and T ----

struct CutObservation {
  double S = 0.0;
  double r1 = INFINITY;  // entry into J⁺(μ̂(s1))
  double r2 = INFINITY;  // exit from I⁻(μ̂(s₊₂))
  double r0 = INFINITY;
  bool entered = false;  // γ meets J⁺(μ̂(s1)) ∩ J⁻(p⁺)
  Vec4 q0 = Vec4::Zero();
};

// γ_{y,ζ} sampled far enough to leave I⁻(μ̂(s₊₂)); throws AdmissibilityError when it meets μ̂
GeodesicPath observation_geodesic(const Experiment& ex, const Vec4& y, const Vec4& zeta);

CutObservation cut_observation_S(const Experiment& ex, const Vec4& y, const Vec4& zeta, double s1);

struct GenuineObservation {
  double T = 0.0;
  std::vector<double> per_level;  // T at ϑ, ϑ/2, ϑ/4
  double r = INFINITY;            // accepted parameter
  int evaluated = 0;              // detection sets built
  int genuine = 0;                // admissible ones
  bool resolution_warning = false;
  std::string warning;
};

GenuineObservation genuine_observation_T(const Experiment& ex, const Vec4& y, const Vec4& zeta, double s1);

// ---- reconstruction ----

struct CollectedRecord {
  double t = 0.0;
  Vec4 target;                 // γ_{y,ζ}(t)
  ObservationRecord record;    // q is the tuple's intersection point
};

struct CollectOptions {
  double t_step = 0.05;
  std::vector<double> ts;  // explicit grid, overrides t_step
  double theta = 0.0;      // ϑ of the tuples, defaults to the scenario's
  // also record the domain end r_end when end_lo <= r_end < end_hi
  double end_lo = 0.0;
  double end_hi = 0.0;
};

struct CollectedSets {
  double r0 = INFINITY;
  double r_end = 0.0;  // min(r0, exit of I⁻(p⁺))
  int grid_count = 0;
  int failed = 0;
  std::vector<CollectedRecord> records;
};

CollectedSets collect_earliest_sets(const Experiment& ex, const Vec4& y, const Vec4& zeta, double s1,
                                    const CollectOptions& opt = {});

struct ReconstructionOptions {
  double delta = 0.05;
  double stage_width = 0.25;  // capped by 0.9 κ₂
  double seed_height = 0.1;  // at least 2.5 row spacings  // s₀ = s₊ − seed_height
  double ds_factor = 1.0;     // lattice spacings in units of δ
  double dr_factor = 0.9;
  double dir_factor = 1.0;
  double y_offset = 0.01;
  bool ground_truth = true;
};

struct CloudPoint {
  int stage = 0;  // 0: seed
  Vec4 target;
  ObservationRecord record;
  std::optional<ObservationRecord> truth;  // E_U(target) computed directly
};

struct StageReport {
  int stage = 0;
  double s_hi = 0.0, s_lo = 0.0;
  int geodesics = 0;
  int records = 0;
  int failed = 0;
};

struct Cloud {
  std::vector<CloudPoint> points;
  std::vector<StageReport> stages;
  std::vector<double> s_grid;
};

Cloud reconstruct_diamond(const Experiment& ex, const ReconstructionOptions& opt = {});

// pairs (i, j) with i indexing a, j indexing b
using Matching = std::vector<std::pair<std::size_t, std::size_t>>;
double conformal_consistency(const std::vector<ObservationRecord>& a, const std::vector<ObservationRecord>& b,
                             const Matching& matching);
double conformal_consistency(const std::vector<ObservationRecord>& a, const std::vector<ObservationRecord>& b);
// score of the reconstructed records against their ground truth
double cloud_consistency(const Cloud& c);
// max over targets of the distance to the nearest generating point
double coverage_radius(const Cloud& c, const std::vector<Vec4>& targets);
// smallest sup-distance between records of distinct generating points
double min_record_separation(const Cloud& c, std::size_t sample = 2000);

struct KappaEstimate {
  double kappa1 = 0.0;
  double kappa2 = 0.0;
  double theta1 = 0.0;
  double min_rho = 0.0;
  double min_gap = INFINITY;
  int cut_points = 0;
  bool kappa2_sentinel = true;
};

struct CalibrationOptions {
  int s_samples = 5;
  int directions = 24;
  double horizon = 2.0;
};

KappaEstimate calibrate_kappa(const Experiment& ex, const CalibrationOptions& opt = {});

// deterministic parallel map over [0, n); results are written by index
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace lorentz
