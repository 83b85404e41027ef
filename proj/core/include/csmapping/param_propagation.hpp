#pragma once

#include <cstddef>
#include <vector>

#include "csmapping/cdtw.hpp"
#include "csmapping/curve_fit.hpp"
#include "csmapping/geometry.hpp"

namespace csmap {

struct PropagationConfig {
  double chamfer_trunc = 3.0;     // graph edges exist below this distance
  double chamfer_spacing = 0.2;   // chamfer sampling, defaults to grid resolution
  double point_spacing = 0.2;     // spacing of emitted parameter points
  CdtwConfig cdtw;
};

struct PropagationResult {
  ParamPointSet points;            // t normalized to [-1, 1] over the union range
  double s_min = 0.0;              // raw union parameter range, meters
  double s_max = 0.0;
  std::size_t reference = 0;       // index of the reference segment
  std::vector<std::size_t> orphans;  // segments with no tree connection
};

/// Builds a truncated-Chamfer graph over the segments, extracts a minimum
/// spanning tree, and BFS-propagates arc-length parameters from the
/// highest-degree node through CDTW matching (trimmed, transitively
/// composed). Segments outside the reference component are reported as
/// orphans for independent fitting.
PropagationResult propagate_parameters(const std::vector<Polyline2D>& segments,
                                       const PropagationConfig& cfg = {});

}  // namespace csmap
