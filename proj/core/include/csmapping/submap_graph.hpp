#pragma once

#include <vector>

#include "csmapping/geometry.hpp"
#include "csmapping/latent_opt.hpp"
#include "csmapping/raster.hpp"

namespace csmap {

/// One submap latent with its pose (local frame -> world) and optional
/// observation bundle.
struct SubmapNode {
  int id = 0;
  GaussianBasisSet basis;
  std::vector<double> w;  // unit norm
  Pose2D pose;
  bool has_observations = false;
  RasterStack target;
  RasterStack mask;
};

/// Overlap factor between two submaps: T_ij maps node i local coordinates
/// into node j's frame; the (single-channel) overlap mask lives in node j's
/// frame.
struct ConsistencyEdge {
  int i = 0;
  int j = 0;
  Pose2D relative;
  std::vector<double> overlap;  // H x W, binary
};

struct GraphConfig {
  const DiffusionSchedule* schedule = nullptr;
  const NoisePredictor* pred = nullptr;
  LatentCodec codec;
  OptimizeConfig opt;                 // per-node solver settings
  std::vector<int> invert_steps;     // increasing; default 5 uniform steps
  double consistency_weight = 1.0;
  double observation_weight = 1.0;
  bool symmetric_consistency = true;
  int sweeps = 40;
  double rel_tol = 1e-4;
};

/// Geometric overlap from the node poses; throws when the overlap fraction
/// is below min_overlap_frac of the submap area.
ConsistencyEdge make_edge(const SubmapNode& a, const SubmapNode& b, const GridSpec& grid,
                          double min_overlap_frac = 0.1);

/// Decoded map of a node's current weights.
RasterStack node_map(const SubmapNode& node, const GraphConfig& cfg);

/// Masked l2 between node j's map and node i's map warped into j's frame;
/// the symmetric variant averages both directions.
double consistency_residual(const RasterStack& map_i, const RasterStack& map_j,
                            const ConsistencyEdge& edge, const GridSpec& grid,
                            bool symmetric = true);

/// Masked l2 of the node's map against its observation bundle; nodes
/// without observations contribute zero.
double observation_residual(const SubmapNode& node, const RasterStack& map);

/// Total factor-graph objective at the current weights.
double total_objective(const std::vector<SubmapNode>& nodes,
                       const std::vector<ConsistencyEdge>& edges, const GraphConfig& cfg,
                       const std::vector<RasterStack>& maps);

/// Chain initialization: the first node is optimized from observations
/// alone; each following node starts from the inverted composite of the
/// warped previous map and its own observations, then optimizes under
/// consistency plus (when present) observation factors.
void propagate_sequential(std::vector<SubmapNode>& chain,
                          const std::vector<ConsistencyEdge>& edges, const GraphConfig& cfg);

struct RefineResult {
  std::vector<double> objective_trace;  // one entry per sweep
  bool diverged = false;
  int sweeps_run = 0;
};

/// Block-coordinate projected gradient over all nodes; the total objective
/// is non-increasing per sweep (backtracking enforced).
RefineResult joint_refine(std::vector<SubmapNode>& nodes,
                          const std::vector<ConsistencyEdge>& edges, const GraphConfig& cfg);

/// Global mosaic: decoded node maps warped into the destination grid and
/// averaged where they overlap.
RasterStack stitch_maps(const std::vector<SubmapNode>& nodes, const GraphConfig& cfg,
                        const GridSpec& global_grid);

}  // namespace csmap
