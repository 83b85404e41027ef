#pragma once

#include <cstdint>
#include <vector>

#include "csmapping/geometry.hpp"
#include "csmapping/raster.hpp"
#include "csmapping/topology.hpp"
#include "csmapping/voxel_assoc.hpp"

namespace csmap {

// Semantic channels follow the common three-class convention.
inline constexpr int kClassCrossing = 1;
inline constexpr int kClassDivider = 2;
inline constexpr int kClassBoundary = 3;
inline constexpr int kNumClasses = 3;

enum class SceneLayout { straight, curved, uturn, intersection };

struct SceneSpec {
  double extent = 50.0;  // square side, meters
  int lanes = 2;
  SceneLayout layout = SceneLayout::straight;
  double resolution = 0.25;
  bool with_crossing = true;
};

struct Scene {
  SceneSpec spec;
  GridSpec grid;
  std::vector<Detection> landmarks;           // ground-truth vector elements
  std::vector<Polyline2D> centerlines;        // one per lane route
  std::vector<Polyline2D> lane_paths;         // driving guides per lane
  RasterStack gt_raster;                      // rendered landmarks, C channels
};

struct NoiseModel {
  double vertex_sigma = 0.1;      // per-vertex Gaussian, meters
  double dropout = 0.0;           // probability a detection is dropped
  double outlier_rate = 0.0;      // spurious curves per frame
  double session_bias_sigma = 0.0;  // per-session systematic offset
  double lateral_drift_sigma = 0.0; // smooth lateral trajectory wander
  double coverage = 1.0;          // fraction of the route driven per session
};

struct Frame {
  Pose2D pose;                       // reporting pose
  std::vector<Detection> detections;
  std::vector<CellIndex> observed;   // field-of-view cells
  Polyline2D fov_polygon;            // closed polygon (first == last vertex)
};

struct SessionData {
  int session = 0;
  Trajectory trajectory;
  std::vector<Frame> frames;
};

/// Deterministic synthetic scene: lane boundaries, dividers, optional
/// crossings, plus geometrically consistent centerlines.
Scene generate_scene(const SceneSpec& spec, std::uint64_t seed);

/// Per-session noisy observations: a bicycle-feasible trajectory along one
/// lane, per-frame field-of-view regions, and perturbed/dropped/outlier
/// detections of in-view landmarks.
std::vector<SessionData> simulate_observations(const Scene& scene, const NoiseModel& noise,
                                               int sessions, std::uint64_t seed);

/// Renders ground-truth landmarks to a binary class raster.
RasterStack render_landmarks(const std::vector<Detection>& landmarks, const GridSpec& grid,
                             int num_classes = kNumClasses);

/// Cells whose centers fall inside a convex counterclockwise polygon.
std::vector<CellIndex> rasterize_convex_polygon(const std::vector<Vec2>& polygon,
                                                const GridSpec& grid);

}  // namespace csmap
