#pragma once

#include <cstdint>
#include <vector>

#include "csmapping/geometry.hpp"

namespace csmap {

/// Arc-length-parameterized Chebyshev expansion: point(t) = sum_i a_i T_i(t)
/// for t in [-1, 1], coefficients in R^2. The source arc-length range
/// [s_min, s_max] maps affinely onto [-1, 1].
struct ChebyshevCurve {
  std::vector<Vec2> coeffs;  // a_0 .. a_n
  double s_min = -1.0;
  double s_max = 1.0;

  int order() const { return static_cast<int>(coeffs.size()) - 1; }
  double to_t(double s) const { return -1.0 + 2.0 * (s - s_min) / (s_max - s_min); }
};

/// Clenshaw evaluation; |t| <= 1 required.
Vec2 chebyshev_eval(const ChebyshevCurve& c, double t);

/// Densified polyline over [-1, 1] at the given point spacing in meters
/// (arc length approximated by parameter span).
Polyline2D chebyshev_to_polyline(const ChebyshevCurve& c, double spacing);

struct ParamPoint {
  Vec2 p;
  double t = 0.0;       // in [-1, 1]
  int observation = 0;  // source observation id
};

using ParamPointSet = std::vector<ParamPoint>;

/// Weighted linear least squares over the Chebyshev design matrix; x and y
/// solved jointly. Rank-deficient designs degrade the order by one and
/// retry; reaching order 0 throws.
ChebyshevCurve fit_weighted_ls(const ParamPointSet& pts, int order,
                               const std::vector<double>& weights);

struct GncConfig {
  double c = 1.5;          // truncation threshold, meters
  double kappa = 1.4;      // mu growth factor
  int max_iter = 50;
  double grad_tol = 1e-6;
};

struct GncResult {
  ChebyshevCurve curve;
  std::vector<double> weights;  // final per-point weights in [0, 1]
  int iterations = 0;
};

/// Closed-form TLS weight update: 0 for r2 >= (mu+1)/mu c^2, 1 for
/// r2 <= mu/(mu+1) c^2, else c sqrt(mu(mu+1)/r2) - mu.
double gnc_weight_update(double r2, double mu, double c);

/// Truncated-least-squares fit by graduated non-convexity: alternating
/// weighted LS and the closed-form three-branch weight update, with
/// mu^0 = c^2 / (2 max r + c^2) and mu <- kappa * mu per iteration.
GncResult gnc_tls_fit(const ParamPointSet& pts, int order, const GncConfig& cfg = {});

/// TLS objective value: sum_j min(r_j^2, c^2).
double tls_objective(const ParamPointSet& pts, const ChebyshevCurve& curve, double c);

/// Adaptive expansion order: clamp(ceil(length / 10 m) + 1, 2, 8), further
/// capped at floor(point_count / 3) - 1 (never below 1).
int select_order(double instance_arc_length, std::size_t point_count);

}  // namespace csmap
