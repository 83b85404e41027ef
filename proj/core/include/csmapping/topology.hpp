#pragma once

#include <cstdint>
#include <vector>

#include "csmapping/cdtw.hpp"
#include "csmapping/geometry.hpp"

namespace csmap {

/// Vehicle trajectory: ordered waypoints with per-waypoint observability.
struct Trajectory {
  Polyline2D waypoints;
  std::vector<char> observable;  // empty means fully observable
  double confidence = -1.0;      // cached by trajectory_confidence

  void validate() const;
};

struct TopoConfig {
  int k = 25;
  double tau_nms = 3.0;  // meters, on the normalized trajectory distance
  double lambda_obs = 0.2;
  double lambda_head = 0.3;
  double lambda_smooth = 0.5;
  double tau_theta_deg = 4.0;
  double sigma_r = 0.2;
  double dt = 0.1;
  double lambda_ctrl = 10.0;
  double wheelbase = 2.7;
  double a_max = 3.0;
  double delta_max = 0.6;
  double v_max = 20.0;
  double v_ref = 8.0;              // nominal speed for state spacing
  double field_resolution = 0.25;  // distance-field grid pitch
  double resample_spacing = 1.0;   // pre-CDTW resampling
  int max_outer = 8;               // augmented-Lagrangian iterations
  int max_inner = 30;              // iLQR iterations per outer step
  CdtwConfig cdtw;
};

/// lambda_obs s_obs + lambda_head s_head + lambda_smooth s_smooth, each
/// score in [0, 1].
double trajectory_confidence(const Trajectory& t, const TopoConfig& cfg);

/// Harmonic mean 2 w_i w_j / (w_i + w_j); zero when both vanish.
double pairwise_confidence(double wi, double wj);

/// Normalized trajectory distance: sqrt(cdtw_cost / (L_i + L_j)), a
/// meters-scale quantity comparable with tau_nms and the TP thresholds.
double trajectory_distance(const Polyline2D& a, const Polyline2D& b, const TopoConfig& cfg);

/// Symmetric distance and pairwise-confidence matrices with incremental
/// append support.
struct TrajectoryMatrices {
  std::vector<double> confidences;                // per trajectory
  std::vector<std::vector<double>> distance;      // normalized CDTW
  std::vector<std::vector<double>> weight;        // harmonic pair confidence
  std::size_t size() const { return confidences.size(); }
};

TrajectoryMatrices build_matrices(const std::vector<Trajectory>& trajectories,
                                  const TopoConfig& cfg);

/// Appends one trajectory by computing only its new row/column.
void append_trajectory(TrajectoryMatrices& m, const std::vector<Trajectory>& all,
                       std::size_t new_index, const TopoConfig& cfg);

struct ClusterResult {
  std::vector<int> medoids;     // indices into the trajectory set
  std::vector<int> assignment;  // per trajectory: position in `medoids`
  double cost = 0.0;            // sum of weighted distances to assigned medoids
};

/// Confidence-weighted k-medoids: greedy BUILD then best-improvement SWAP
/// passes with incremental deltas until no improving swap exists.
/// Deterministic; ties break on the lowest index.
ClusterResult weighted_kmedoids(const std::vector<std::vector<double>>& distance,
                                const std::vector<std::vector<double>>& weight, int k,
                                std::uint64_t seed = 0);

/// Cluster-size-ordered suppression: medoids closer than tau_nms to any
/// retained larger-cluster medoid are removed. Returns retained trajectory
/// indices.
std::vector<int> nms_medoids(const ClusterResult& clusters,
                             const std::vector<std::vector<double>>& distance,
                             double tau_nms);

/// Per-cell Euclidean distance to the trajectory polyline (exact segment
/// distance). Bilinear interpolation off-lattice.
struct DistanceField {
  GridSpec grid;
  std::vector<double> values;

  double sample(const Vec2& p) const;
  Vec2 gradient(const Vec2& p) const;
  void add(const DistanceField& other);  // accumulate member fields
};

DistanceField distance_field(const Polyline2D& trajectory, const GridSpec& grid);

struct BicycleState {
  double x = 0, y = 0, theta = 0, v = 0;
};

struct BicycleControl {
  double a = 0, delta = 0;
};

/// Kinematic bicycle, explicit Euler.
BicycleState bicycle_step(const BicycleState& x, const BicycleControl& u, double dt,
                          double wheelbase);

struct BicycleTrajectory {
  std::vector<BicycleState> states;     // n+1 states
  std::vector<BicycleControl> controls; // n controls; states are their rollout
  double dt = 0.1;

  Polyline2D path() const;
};

struct RefineResult {
  BicycleTrajectory trajectory;
  double cost = 0.0;
  double max_violation = 0.0;           // constraint violation after AL
  std::vector<double> violation_trace;  // per outer iteration
  bool warning = false;                 // inner loop returned best feasible iterate
};

/// AL-iLQR alignment of a medoid to its cluster's summed distance fields
/// under control/state constraints (Euler bicycle dynamics).
RefineResult refine_medoid(const Trajectory& medoid,
                           const std::vector<const Trajectory*>& members,
                           const TopoConfig& cfg);

enum class Maneuver { straight, left, right, uturn };

/// Net-heading-change classification at +-45 and +-135 degrees.
Maneuver classify_maneuver(const Polyline2D& line);

struct PrfRow {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0, fp = 0, fn = 0;
};

struct CenterlineReport {
  std::vector<PrfRow> overall;                       // per threshold
  std::vector<std::vector<PrfRow>> per_maneuver;     // [maneuver][threshold]
};

/// Greedy one-to-one matching by ascending normalized CDTW distance; a match
/// is a true positive below the threshold.
CenterlineReport centerline_metrics(const std::vector<Polyline2D>& predicted,
                                    const std::vector<Polyline2D>& ground_truth,
                                    const std::vector<double>& thresholds,
                                    const TopoConfig& cfg);

}  // namespace csmap
