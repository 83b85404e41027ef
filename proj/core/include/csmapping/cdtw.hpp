#pragma once

#include <cstdint>
#include <vector>

#include "csmapping/geometry.hpp"

namespace csmap {

/// Point in the joint arc-length parameter space of two curves.
struct ParamSpacePoint {
  double s = 0.0;  // position on curve r, in [0, L_r]
  double o = 0.0;  // position on curve o, in [0, L_o]
};

/// Monotone matching path from (0,0) to (L_r, L_o). Cost units are
/// distance^2 x L1 parameter length (m^3).
struct WarpingPath {
  std::vector<ParamSpacePoint> points;
  double cost = 0.0;
};

struct CdtwConfig {
  // Cell boundary subdivision resolution (meters). <= 0 selects
  // clamp(min(L_a, L_b) / 50, 0.05, 0.5).
  double delta = 0.0;
  // Fallback fine-grid resolution for degenerate inputs (curves shorter
  // than delta).
  double fine_resolution = 0.01;
  bool record_explored = false;
};

struct CdtwResult {
  double cost = 0.0;
  WarpingPath path;
  std::vector<ParamSpacePoint> explored;  // settled nodes, when recorded
};

/// Closed-form cost of a straight monotone parameter-space edge across the
/// cell spanned by segments [ra, rb] and [oa, ob]. `from`/`to` are local arc
/// positions within the two segments. The squared distance between the two
/// affinely parameterized points is quadratic along the edge, so the
/// integral evaluates exactly.
double cell_edge_cost(const Vec2& ra, const Vec2& rb, const Vec2& oa, const Vec2& ob,
                      const ParamSpacePoint& from, const ParamSpacePoint& to);

/// Shortest monotone path on the subdivided cell graph, bidirectional
/// Dijkstra with lazily evaluated analytic edge costs.
CdtwResult cdtw(const Polyline2D& a, const Polyline2D& b, const CdtwConfig& cfg = {});

/// Shortest-path cost between two parameter-space points that lie on the
/// cell graph (e.g. nodes of a returned path).
double cdtw_between(const Polyline2D& a, const Polyline2D& b, const CdtwConfig& cfg,
                    const ParamSpacePoint& from, const ParamSpacePoint& to);

/// Dense-grid reference: right/up/diagonal moves, trapezoid edge costs.
/// Throws on grids above the node budget.
double fine_grid_cdtw_oracle(const Polyline2D& a, const Polyline2D& b, double res,
                             std::size_t max_nodes = 4'000'000);

/// Matched sub-ranges after cutting endpoint runs at their minimum-distance
/// point (partial-overlap recognition).
struct MatchedInterval {
  double lo = 0.0;
  double hi = 0.0;
  double length() const { return hi - lo; }
};

struct TrimResult {
  MatchedInterval on_a;
  MatchedInterval on_b;
};

TrimResult trim_nonoverlap(const WarpingPath& path, const Polyline2D& a,
                           const Polyline2D& b);

/// Piecewise-linear strictly increasing correspondence o -> s built from a
/// warping path restricted to the matched intervals; runs where one
/// coordinate stalls are collapsed to their midpoint anchor.
struct MonotoneMap {
  std::vector<double> o_knots;
  std::vector<double> s_knots;
  double operator()(double o) const;  // linear extension with unit slope outside
};

MonotoneMap path_to_monotone_map(const WarpingPath& path, const TrimResult& trim);

}  // namespace csmap
