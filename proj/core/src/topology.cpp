#include "csmapping/topology.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "csmapping/curve_fit.hpp"
#include "csmapping/parallel.hpp"
#include "csmapping/rng.hpp"

namespace csmap {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double turn_angle(const Vec2& a, const Vec2& b, const Vec2& c) {
  const Vec2 u = b - a, v = c - b;
  const double cross = u.x * v.y - u.y * v.x;
  const double dot = u.dot(v);
  return std::atan2(cross, dot);
}

}  // namespace

void Trajectory::validate() const {
  waypoints.validate();
  if (waypoints.size() < 5) throw std::invalid_argument("trajectory needs >= 5 waypoints");
  if (!observable.empty() && observable.size() != waypoints.size())
    throw std::invalid_argument("observability flag count mismatch");
}

double trajectory_confidence(const Trajectory& t, const TopoConfig& cfg) {
  t.validate();
  const auto& pts = t.waypoints.vertices;

  double s_obs = 1.0;
  if (!t.observable.empty()) {
    double seen = 0.0;
    for (char f : t.observable) seen += f ? 1.0 : 0.0;
    s_obs = seen / t.observable.size();
  }

  const double tau = cfg.tau_theta_deg * M_PI / 180.0;
  double smooth_count = 0.0;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i)
    if (std::abs(turn_angle(pts[i - 1], pts[i], pts[i + 1])) < tau) smooth_count += 1.0;
  const double s_head = smooth_count / static_cast<double>(pts.size() - 2);

  // Geometric coherence: mean residual of a robust Chebyshev fit.
  const auto cum = cumulative_lengths(t.waypoints);
  const double L = cum.back();
  ParamPointSet fitpts;
  for (std::size_t i = 0; i < pts.size(); ++i)
    fitpts.push_back({pts[i], -1.0 + 2.0 * cum[i] / L, 0});
  const int order = select_order(L, fitpts.size());
  double rbar = 0.0;
  try {
    const GncResult fit = gnc_tls_fit(fitpts, order, {});
    for (const auto& q : fitpts)
      rbar += (q.p - chebyshev_eval(fit.curve, q.t)).norm();
    rbar /= static_cast<double>(fitpts.size());
  } catch (const std::exception&) {
    rbar = cfg.sigma_r * 10.0;  // degenerate geometry: no coherence credit
  }
  const double s_smooth = std::exp(-rbar / cfg.sigma_r);

  return cfg.lambda_obs * s_obs + cfg.lambda_head * s_head + cfg.lambda_smooth * s_smooth;
}

double pairwise_confidence(double wi, double wj) {
  if (wi + wj <= 0.0) return 0.0;
  return 2.0 * wi * wj / (wi + wj);
}

double trajectory_distance(const Polyline2D& a, const Polyline2D& b, const TopoConfig& cfg) {
  const Polyline2D ra = cfg.resample_spacing > 0 ? resample(a, cfg.resample_spacing) : a;
  const Polyline2D rb = cfg.resample_spacing > 0 ? resample(b, cfg.resample_spacing) : b;
  const double cost = cdtw(ra, rb, cfg.cdtw).cost;
  return std::sqrt(std::max(0.0, cost) / (arc_length(ra) + arc_length(rb)));
}

TrajectoryMatrices build_matrices(const std::vector<Trajectory>& trajectories,
                                  const TopoConfig& cfg) {
  if (trajectories.size() < 2)
    throw std::invalid_argument("build_matrices: need at least two trajectories");
  TrajectoryMatrices m;
  const std::size_t n = trajectories.size();
  m.confidences.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    m.confidences[i] = trajectories[i].confidence >= 0.0
                           ? trajectories[i].confidence
                           : trajectory_confidence(trajectories[i], cfg);
  m.distance.assign(n, std::vector<double>(n, 0.0));
  m.weight.assign(n, std::vector<double>(n, 0.0));

  // Rows are independent; fill the upper triangle in parallel.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  parallel_for(pairs.size(), [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    const double d =
        trajectory_distance(trajectories[i].waypoints, trajectories[j].waypoints, cfg);
    m.distance[i][j] = m.distance[j][i] = d;
  });
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m.weight[i][j] = pairwise_confidence(m.confidences[i], m.confidences[j]);
  return m;
}

void append_trajectory(TrajectoryMatrices& m, const std::vector<Trajectory>& all,
                       std::size_t new_index, const TopoConfig& cfg) {
  const std::size_t n = m.size();
  if (new_index != n) throw std::invalid_argument("append_trajectory: index mismatch");
  m.confidences.push_back(all[new_index].confidence >= 0.0
                              ? all[new_index].confidence
                              : trajectory_confidence(all[new_index], cfg));
  for (std::size_t i = 0; i < n; ++i) {
    m.distance[i].push_back(0.0);
    m.weight[i].push_back(0.0);
  }
  m.distance.emplace_back(n + 1, 0.0);
  m.weight.emplace_back(n + 1, 0.0);
  std::vector<double> row(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    row[i] = trajectory_distance(all[i].waypoints, all[new_index].waypoints, cfg);
  });
  for (std::size_t i = 0; i < n; ++i) {
    m.distance[i][n] = m.distance[n][i] = row[i];
  }
  for (std::size_t i = 0; i <= n; ++i) {
    const double w = pairwise_confidence(m.confidences[i], m.confidences[n]);
    m.weight[i][n] = m.weight[n][i] = w;
  }
}

namespace {

struct KmedoidsRun {
  std::vector<int> medoids;
  std::vector<int> near;
  std::vector<double> d1;
  double cost = 0.0;
};

// SWAP descent from a given medoid set; FasterPAM-style incremental deltas.
KmedoidsRun kmedoids_swap(const std::vector<std::vector<double>>& distance,
                          const std::vector<std::vector<double>>& weight,
                          std::vector<int> medoids) {
  const std::size_t n = distance.size();
  const int k = static_cast<int>(medoids.size());
  auto delta = [&](std::size_t j, std::size_t c) { return weight[j][c] * distance[j][c]; };
  std::vector<char> is_medoid(n, 0);
  for (int m : medoids) is_medoid[m] = 1;
  std::vector<double> d1(n, kInf), d2(n, kInf);
  std::vector<int> near(n, -1);

  auto recompute_nearest = [&]() {
    for (std::size_t j = 0; j < n; ++j) {
      d1[j] = d2[j] = kInf;
      near[j] = -1;
      for (std::size_t r = 0; r < medoids.size(); ++r) {
        const double dj = delta(j, medoids[r]);
        if (dj < d1[j]) {
          d2[j] = d1[j];
          d1[j] = dj;
          near[j] = static_cast<int>(r);
        } else if (dj < d2[j]) {
          d2[j] = dj;
        }
      }
    }
  };
  recompute_nearest();

  std::vector<double> removal(k, 0.0);
  bool improved = static_cast<std::size_t>(k) < n;
  while (improved) {
    improved = false;
    double best_delta = -1e-12;
    int best_c = -1, best_r = -1;
    for (std::size_t c = 0; c < n; ++c) {
      if (is_medoid[c]) continue;
      std::fill(removal.begin(), removal.end(), 0.0);
      double shared = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double dc = delta(j, c);
        const double gain = std::min(0.0, dc - d1[j]);
        shared += gain;
        // If j's nearest medoid is removed, j pays min(dc, d2) instead.
        removal[near[j]] += std::min(dc, d2[j]) - d1[j] - gain;
      }
      for (int r = 0; r < k; ++r) {
        const double total = shared + removal[r];
        if (total < best_delta) {
          best_delta = total;
          best_c = static_cast<int>(c);
          best_r = r;
        }
      }
    }
    if (best_c >= 0) {
      is_medoid[medoids[best_r]] = 0;
      is_medoid[best_c] = 1;
      medoids[best_r] = best_c;
      recompute_nearest();
      improved = true;
    }
  }

  KmedoidsRun out;
  out.medoids = std::move(medoids);
  out.near = std::move(near);
  out.d1 = std::move(d1);
  for (double v : out.d1) out.cost += v;
  return out;
}

}  // namespace

ClusterResult weighted_kmedoids(const std::vector<std::vector<double>>& distance,
                                const std::vector<std::vector<double>>& weight, int k,
                                std::uint64_t seed) {
  const std::size_t n = distance.size();
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw std::invalid_argument("weighted_kmedoids: k out of range");

  auto delta = [&](std::size_t j, std::size_t c) { return weight[j][c] * distance[j][c]; };

  std::vector<int> medoids;
  std::vector<char> is_medoid(n, 0);
  std::vector<double> d1(n, kInf);

  // BUILD: greedy cost minimization, ties to the lowest index.
  for (int round = 0; round < k; ++round) {
    int best = -1;
    double best_cost = kInf;
    for (std::size_t c = 0; c < n; ++c) {
      if (is_medoid[c]) continue;
      double cost = 0.0;
      for (std::size_t j = 0; j < n; ++j) cost += std::min(d1[j], delta(j, c));
      if (cost < best_cost) {
        best_cost = cost;
        best = static_cast<int>(c);
      }
    }
    is_medoid[best] = 1;
    medoids.push_back(best);
    for (std::size_t j = 0; j < n; ++j) d1[j] = std::min(d1[j], delta(j, best));
  }

  KmedoidsRun best_run = kmedoids_swap(distance, weight, medoids);

  // Seeded random restarts guard the SWAP descent against local optima.
  const int restarts = n <= 128 ? 8 : 3;
  for (int attempt = 0; attempt < restarts; ++attempt) {
    auto rng = make_rng(seed, 0x4a7 + attempt);
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int r = 0; r < k; ++r) {
      std::uniform_int_distribution<int> pick(r, static_cast<int>(n) - 1);
      std::swap(pool[r], pool[pick(rng)]);
    }
    KmedoidsRun run =
        kmedoids_swap(distance, weight, std::vector<int>(pool.begin(), pool.begin() + k));
    if (run.cost < best_run.cost) best_run = std::move(run);
  }

  ClusterResult out;
  out.medoids = best_run.medoids;
  out.assignment = best_run.near;
  out.cost = best_run.cost;
  return out;
}

std::vector<int> nms_medoids(const ClusterResult& clusters,
                             const std::vector<std::vector<double>>& distance,
                             double tau_nms) {
  if (tau_nms <= 0.0) throw std::invalid_argument("nms: tau must be > 0");
  const int k = static_cast<int>(clusters.medoids.size());
  std::vector<int> sizes(k, 0);
  for (int a : clusters.assignment)
    if (a >= 0) ++sizes[a];
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (sizes[a] != sizes[b]) return sizes[a] > sizes[b];
    return clusters.medoids[a] < clusters.medoids[b];
  });
  std::vector<int> kept;
  for (int pos : order) {
    const int m = clusters.medoids[pos];
    bool suppressed = false;
    for (int other : kept) {
      if (distance[m][other] < tau_nms) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(m);
  }
  return kept;
}

double DistanceField::sample(const Vec2& p) const {
  const double u = std::clamp((p.x - grid.origin.x) / grid.resolution - 0.5, 0.0,
                              grid.width - 1.0);
  const double v = std::clamp((p.y - grid.origin.y) / grid.resolution - 0.5, 0.0,
                              grid.height - 1.0);
  const int x0 = std::min(static_cast<int>(u), grid.width - 2);
  const int y0 = std::min(static_cast<int>(v), grid.height - 2);
  const double fx = u - x0, fy = v - y0;
  const auto at = [&](int x, int y) {
    return values[static_cast<std::size_t>(y) * grid.width + x];
  };
  return (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x0 + 1, y0)) +
         fy * ((1 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
}

Vec2 DistanceField::gradient(const Vec2& p) const {
  const double u = std::clamp((p.x - grid.origin.x) / grid.resolution - 0.5, 0.0,
                              grid.width - 1.0);
  const double v = std::clamp((p.y - grid.origin.y) / grid.resolution - 0.5, 0.0,
                              grid.height - 1.0);
  const int x0 = std::min(static_cast<int>(u), grid.width - 2);
  const int y0 = std::min(static_cast<int>(v), grid.height - 2);
  const double fx = u - x0, fy = v - y0;
  const auto at = [&](int x, int y) {
    return values[static_cast<std::size_t>(y) * grid.width + x];
  };
  const double dx = ((1 - fy) * (at(x0 + 1, y0) - at(x0, y0)) +
                     fy * (at(x0 + 1, y0 + 1) - at(x0, y0 + 1))) /
                    grid.resolution;
  const double dy = ((1 - fx) * (at(x0, y0 + 1) - at(x0, y0)) +
                     fx * (at(x0 + 1, y0 + 1) - at(x0 + 1, y0))) /
                    grid.resolution;
  return {dx, dy};
}

void DistanceField::add(const DistanceField& other) {
  if (other.values.size() != values.size())
    throw std::invalid_argument("distance field shape mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
}

DistanceField distance_field(const Polyline2D& trajectory, const GridSpec& grid) {
  grid.validate();
  DistanceField field;
  field.grid = grid;
  field.grid.channels = 1;
  field.values.assign(grid.cell_count(), 0.0);

  // Exact per-cell distance to the polyline segments. Column-major sweep
  // with a per-segment bounding test keeps the scan cheap.
  const auto& verts = trajectory.vertices;
  parallel_for(static_cast<std::size_t>(grid.height), [&](std::size_t row) {
    const int cy = static_cast<int>(row);
    const double y = grid.origin.y + (cy + 0.5) * grid.resolution;
    for (int cx = 0; cx < grid.width; ++cx) {
      const Vec2 p{grid.origin.x + (cx + 0.5) * grid.resolution, y};
      double best = kInf;
      for (std::size_t i = 1; i < verts.size(); ++i) {
        const double lo_y = std::min(verts[i - 1].y, verts[i].y);
        const double hi_y = std::max(verts[i - 1].y, verts[i].y);
        if (lo_y - best > p.y || p.y > hi_y + best) continue;
        best = std::min(best, point_segment_distance(p, verts[i - 1], verts[i]));
      }
      field.values[static_cast<std::size_t>(cy) * grid.width + cx] = best;
    }
  });
  return field;
}

BicycleState bicycle_step(const BicycleState& x, const BicycleControl& u, double dt,
                          double wheelbase) {
  if (std::abs(u.delta) >= M_PI / 2)
    throw std::invalid_argument("bicycle_step: steering at singularity");
  BicycleState n;
  n.x = x.x + dt * x.v * std::cos(x.theta);
  n.y = x.y + dt * x.v * std::sin(x.theta);
  n.theta = x.theta + dt * x.v * std::tan(u.delta) / wheelbase;
  n.v = x.v + dt * u.a;
  return n;
}

Polyline2D BicycleTrajectory::path() const {
  Polyline2D out;
  for (const auto& s : states) {
    const Vec2 p{s.x, s.y};
    if (!out.vertices.empty() && (p - out.vertices.back()).squared_norm() < 1e-18) continue;
    out.vertices.push_back(p);
  }
  if (out.vertices.size() < 2)
    out.vertices.push_back(out.vertices.back() + Vec2{1e-6, 0.0});
  return out;
}

namespace {

using Mat4 = Eigen::Matrix4d;
using Vec4 = Eigen::Vector4d;
using Mat42 = Eigen::Matrix<double, 4, 2>;
using Mat24 = Eigen::Matrix<double, 2, 4>;
using Mat2 = Eigen::Matrix2d;
using Vec2d = Eigen::Vector2d;

struct AlMultipliers {
  // Per control step: a+, a-, delta+, delta-. Per state: v+, v-.
  std::vector<std::array<double, 4>> control;
  std::vector<std::array<double, 2>> state;
};

struct IlqrProblem {
  const DistanceField* field;
  const TopoConfig* cfg;
  double rho = 1.0;
  const AlMultipliers* lambda;
  int n = 0;  // control count

  double control_g(const BicycleControl& u, int which) const {
    switch (which) {
      case 0: return u.a - cfg->a_max;
      case 1: return -u.a - cfg->a_max;
      case 2: return u.delta - cfg->delta_max;
      default: return -u.delta - cfg->delta_max;
    }
  }
  double state_g(const BicycleState& x, int which) const {
    return which == 0 ? x.v - cfg->v_max : -x.v;
  }

  double al_term(double g, double lam) const {
    const double s = std::max(0.0, lam + rho * g);
    return (s * s - lam * lam) / (2.0 * rho);
  }
  double al_sigma(double g, double lam) const { return std::max(0.0, lam + rho * g); }

  double total_cost(const std::vector<BicycleState>& xs,
                    const std::vector<BicycleControl>& us) const {
    double acc = 0.0;
    for (const auto& x : xs) acc += field->sample({x.x, x.y});
    for (const auto& u : us)
      acc += cfg->lambda_ctrl * (u.a * u.a + u.delta * u.delta) * cfg->dt;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 4; ++c)
        acc += al_term(control_g(us[i], c), (*lambda).control[i][c]);
    for (std::size_t i = 0; i < xs.size(); ++i)
      for (int c = 0; c < 2; ++c)
        acc += al_term(state_g(xs[i], c), (*lambda).state[i][c]);
    return acc;
  }
};

void rollout(const BicycleState& x0, const std::vector<BicycleControl>& us, double dt,
             double L, std::vector<BicycleState>& xs) {
  xs.resize(us.size() + 1);
  xs[0] = x0;
  for (std::size_t i = 0; i < us.size(); ++i) xs[i + 1] = bicycle_step(xs[i], us[i], dt, L);
}

}  // namespace

RefineResult refine_medoid(const Trajectory& medoid,
                           const std::vector<const Trajectory*>& members,
                           const TopoConfig& cfg) {
  if (members.empty()) throw std::invalid_argument("refine_medoid: empty cluster");
  medoid.validate();

  // Cluster-local aggregate distance field.
  double xmin = kInf, xmax = -kInf, ymin = kInf, ymax = -kInf;
  auto grow = [&](const Polyline2D& p) {
    for (const auto& v : p.vertices) {
      xmin = std::min(xmin, v.x);
      xmax = std::max(xmax, v.x);
      ymin = std::min(ymin, v.y);
      ymax = std::max(ymax, v.y);
    }
  };
  grow(medoid.waypoints);
  for (const auto* t : members) grow(t->waypoints);
  const double margin = 5.0;
  GridSpec fgrid;
  fgrid.resolution = cfg.field_resolution;
  fgrid.origin = {xmin - margin, ymin - margin};
  fgrid.width = static_cast<int>(std::ceil((xmax - xmin + 2 * margin) / fgrid.resolution));
  fgrid.height = static_cast<int>(std::ceil((ymax - ymin + 2 * margin) / fgrid.resolution));

  DistanceField field;
  field.grid = fgrid;
  field.values.assign(fgrid.cell_count(), 0.0);
  std::vector<DistanceField> partial(members.size());
  parallel_for(members.size(), [&](std::size_t i) {
    partial[i] = distance_field(members[i]->waypoints, fgrid);
  });
  for (const auto& f : partial) field.add(f);

  // Initial state/control sequence from the medoid by finite differences.
  const double L = arc_length(medoid.waypoints);
  const double ds = std::min(cfg.v_ref, 0.9 * cfg.v_max) * cfg.dt;
  const int n = std::clamp(static_cast<int>(std::ceil(L / ds)), 8, 400);
  const Polyline2D ref = resample(medoid.waypoints, L / n);
  std::vector<BicycleState> init_states;
  const auto& rv = ref.vertices;
  for (std::size_t i = 0; i < rv.size(); ++i) {
    BicycleState s;
    s.x = rv[i].x;
    s.y = rv[i].y;
    const std::size_t j = std::min(i, rv.size() - 2);
    s.theta = std::atan2(rv[j + 1].y - rv[j].y, rv[j + 1].x - rv[j].x);
    s.v = (i + 1 < rv.size()) ? (rv[i + 1] - rv[i]).norm() / cfg.dt
                              : (rv[i] - rv[i - 1]).norm() / cfg.dt;
    s.v = std::clamp(s.v, 0.0, 0.95 * cfg.v_max);
    init_states.push_back(s);
  }
  std::vector<BicycleControl> us(init_states.size() - 1);
  for (std::size_t i = 0; i + 1 < init_states.size(); ++i) {
    const double dtheta = normalize_angle(init_states[i + 1].theta - init_states[i].theta);
    const double v = std::max(init_states[i].v, 0.5);
    us[i].a = std::clamp((init_states[i + 1].v - init_states[i].v) / cfg.dt,
                         -0.95 * cfg.a_max, 0.95 * cfg.a_max);
    us[i].delta = std::clamp(std::atan(cfg.wheelbase * dtheta / (cfg.dt * v)),
                             -0.95 * cfg.delta_max, 0.95 * cfg.delta_max);
  }

  std::vector<BicycleState> xs;
  rollout(init_states[0], us, cfg.dt, cfg.wheelbase, xs);

  AlMultipliers lambda;
  lambda.control.assign(us.size(), {0.0, 0.0, 0.0, 0.0});
  lambda.state.assign(xs.size(), {0.0, 0.0});

  IlqrProblem prob;
  prob.field = &field;
  prob.cfg = &cfg;
  prob.lambda = &lambda;
  prob.n = static_cast<int>(us.size());

  RefineResult result;
  result.warning = false;
  double reg = 1.0;

  const int outer_iters = cfg.max_outer;
  const int inner_iters = cfg.max_inner;
  for (int outer = 0; outer < outer_iters; ++outer) {
    double cost = prob.total_cost(xs, us);
    // iLQR inner loop.
    for (int inner = 0; inner < inner_iters; ++inner) {
      // Backward Riccati pass on the quadratized cost.
      std::vector<Vec2d> kff(us.size());
      std::vector<Mat24> Kfb(us.size());
      bool backward_ok = true;

      Vec4 Vx = Vec4::Zero();
      Mat4 Vxx = Mat4::Zero();
      {
        const BicycleState& xN = xs.back();
        const Vec2 gf = field.gradient({xN.x, xN.y});
        Vx << gf.x, gf.y, 0.0, 0.0;
        for (int c = 0; c < 2; ++c) {
          const double g = prob.state_g(xN, c);
          const double sig = prob.al_sigma(g, lambda.state.back()[c]);
          const double dg = c == 0 ? 1.0 : -1.0;
          Vx(3) += sig * dg;
          if (lambda.state.back()[c] + prob.rho * g > 0.0) Vxx(3, 3) += prob.rho;
        }
      }

      for (int i = static_cast<int>(us.size()) - 1; i >= 0; --i) {
        const BicycleState& x = xs[i];
        const BicycleControl& u = us[i];
        const double ct = std::cos(x.theta), st = std::sin(x.theta);
        const double td = std::tan(u.delta);
        Mat4 A = Mat4::Identity();
        A(0, 2) = -cfg.dt * x.v * st;
        A(0, 3) = cfg.dt * ct;
        A(1, 2) = cfg.dt * x.v * ct;
        A(1, 3) = cfg.dt * st;
        A(2, 3) = cfg.dt * td / cfg.wheelbase;
        Mat42 B = Mat42::Zero();
        B(2, 1) = cfg.dt * x.v / (std::cos(u.delta) * std::cos(u.delta) * cfg.wheelbase);
        B(3, 0) = cfg.dt;

        Vec4 lx = Vec4::Zero();
        const Vec2 gf = field.gradient({x.x, x.y});
        lx(0) = gf.x;
        lx(1) = gf.y;
        Mat4 lxx = Mat4::Zero();
        for (int c = 0; c < 2; ++c) {
          const double g = prob.state_g(x, c);
          const double sig = prob.al_sigma(g, lambda.state[i][c]);
          const double dg = c == 0 ? 1.0 : -1.0;
          lx(3) += sig * dg;
          if (lambda.state[i][c] + prob.rho * g > 0.0) lxx(3, 3) += prob.rho;
        }
        Vec2d lu;
        lu << 2.0 * cfg.lambda_ctrl * cfg.dt * u.a, 2.0 * cfg.lambda_ctrl * cfg.dt * u.delta;
        Mat2 luu = 2.0 * cfg.lambda_ctrl * cfg.dt * Mat2::Identity();
        for (int c = 0; c < 4; ++c) {
          const double g = prob.control_g(u, c);
          const double sig = prob.al_sigma(g, lambda.control[i][c]);
          const double da = (c == 0) ? 1.0 : (c == 1 ? -1.0 : 0.0);
          const double dd = (c == 2) ? 1.0 : (c == 3 ? -1.0 : 0.0);
          lu(0) += sig * da;
          lu(1) += sig * dd;
          if (lambda.control[i][c] + prob.rho * g > 0.0) {
            luu(0, 0) += prob.rho * da * da;
            luu(1, 1) += prob.rho * dd * dd;
          }
        }

        const Vec4 Qx = lx + A.transpose() * Vx;
        const Vec2d Qu = lu + B.transpose() * Vx;
        const Mat4 Qxx = lxx + A.transpose() * Vxx * A;
        Mat2 Quu = luu + B.transpose() * Vxx * B;
        Quu += reg * Mat2::Identity();
        const Mat24 Qux = B.transpose() * Vxx * A;

        const Eigen::LLT<Mat2> llt(Quu);
        if (llt.info() != Eigen::Success) {
          backward_ok = false;
          break;
        }
        kff[i] = -llt.solve(Qu);
        Kfb[i] = -llt.solve(Qux);

        Vx = Qx + Kfb[i].transpose() * Quu * kff[i] + Kfb[i].transpose() * Qu +
             Qux.transpose() * kff[i];
        Vxx = Qxx + Kfb[i].transpose() * Quu * Kfb[i] + Kfb[i].transpose() * Qux +
              Qux.transpose() * Kfb[i];
        Vxx = 0.5 * (Vxx + Vxx.transpose()).eval();
      }

      if (!backward_ok) {
        reg *= 2.0;
        if (reg > 1e10) break;
        continue;
      }

      // Forward rollout with line search.
      bool accepted = false;
      for (double alpha = 1.0; alpha > 1e-3; alpha *= 0.5) {
        std::vector<BicycleControl> u_new(us.size());
        std::vector<BicycleState> x_new(xs.size());
        x_new[0] = xs[0];
        bool valid = true;
        for (std::size_t i = 0; i < us.size(); ++i) {
          Vec4 dx;
          dx << x_new[i].x - xs[i].x, x_new[i].y - xs[i].y,
              normalize_angle(x_new[i].theta - xs[i].theta), x_new[i].v - xs[i].v;
          const Vec2d du = alpha * kff[i] + Kfb[i] * dx;
          u_new[i].a = us[i].a + du(0);
          u_new[i].delta = std::clamp(us[i].delta + du(1), -1.55, 1.55);
          x_new[i + 1] = bicycle_step(x_new[i], u_new[i], cfg.dt, cfg.wheelbase);
          if (!std::isfinite(x_new[i + 1].x) || !std::isfinite(x_new[i + 1].v)) {
            valid = false;
            break;
          }
        }
        if (!valid) continue;
        const double new_cost = prob.total_cost(x_new, u_new);
        if (new_cost < cost) {
          us = std::move(u_new);
          xs = std::move(x_new);
          const double improvement = (cost - new_cost) / std::max(1.0, cost);
          cost = new_cost;
          accepted = true;
          reg = std::max(reg * 0.5, 1e-8);
          if (improvement < 1e-7) inner = inner_iters;  // converged
          break;
        }
      }
      if (!accepted) {
        reg *= 2.0;
        if (reg > 1e10) {
          result.warning = true;  // best iterate so far is kept
          break;
        }
      }
    }

    // Multiplier and penalty updates.
    double violation = 0.0;
    for (std::size_t i = 0; i < us.size(); ++i) {
      for (int c = 0; c < 4; ++c) {
        const double g = prob.control_g(us[i], c);
        violation = std::max(violation, g);
        lambda.control[i][c] = std::max(0.0, lambda.control[i][c] + prob.rho * g);
      }
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (int c = 0; c < 2; ++c) {
        const double g = prob.state_g(xs[i], c);
        violation = std::max(violation, g);
        lambda.state[i][c] = std::max(0.0, lambda.state[i][c] + prob.rho * g);
      }
    }
    result.violation_trace.push_back(std::max(0.0, violation));
    result.max_violation = std::max(0.0, violation);
    if (result.max_violation < 1e-4 && outer > 0) break;
    prob.rho = std::min(prob.rho * 10.0, 1e8);
  }

  result.trajectory.states = xs;
  result.trajectory.controls = us;
  result.trajectory.dt = cfg.dt;
  result.cost = prob.total_cost(xs, us);
  return result;
}

Maneuver classify_maneuver(const Polyline2D& line) {
  const auto& pts = line.vertices;
  double total = 0.0;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i)
    total += turn_angle(pts[i - 1], pts[i], pts[i + 1]);
  const double deg = total * 180.0 / M_PI;
  if (std::abs(deg) >= 135.0) return Maneuver::uturn;
  if (deg >= 45.0) return Maneuver::left;
  if (deg <= -45.0) return Maneuver::right;
  return Maneuver::straight;
}

CenterlineReport centerline_metrics(const std::vector<Polyline2D>& predicted,
                                    const std::vector<Polyline2D>& ground_truth,
                                    const std::vector<double>& thresholds,
                                    const TopoConfig& cfg) {
  for (double t : thresholds)
    if (t <= 0.0) throw std::invalid_argument("centerline_metrics: thresholds must be > 0");

  struct Pair {
    double d;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  pairs.reserve(predicted.size() * ground_truth.size());
  for (std::size_t p = 0; p < predicted.size(); ++p)
    for (std::size_t g = 0; g < ground_truth.size(); ++g)
      pairs.push_back({trajectory_distance(predicted[p], ground_truth[g], cfg), p, g});
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.d != b.d) return a.d < b.d;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });

  std::vector<int> pred_match(predicted.size(), -1);
  std::vector<double> match_d(predicted.size(), kInf);
  std::vector<char> gt_used(ground_truth.size(), 0);
  for (const auto& pr : pairs) {
    if (pred_match[pr.p] >= 0 || gt_used[pr.g]) continue;
    pred_match[pr.p] = static_cast<int>(pr.g);
    match_d[pr.p] = pr.d;
    gt_used[pr.g] = 1;
  }

  std::vector<Maneuver> pred_class(predicted.size());
  std::vector<Maneuver> gt_class(ground_truth.size());
  for (std::size_t p = 0; p < predicted.size(); ++p) pred_class[p] = classify_maneuver(predicted[p]);
  for (std::size_t g = 0; g < ground_truth.size(); ++g)
    gt_class[g] = classify_maneuver(ground_truth[g]);

  CenterlineReport report;
  report.per_maneuver.resize(4);
  auto make_row = [](double thr, int tp, int fp, int fn) {
    PrfRow row;
    row.threshold = thr;
    row.tp = tp;
    row.fp = fp;
    row.fn = fn;
    row.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    row.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    row.f1 = row.precision + row.recall > 0
                 ? 2.0 * row.precision * row.recall / (row.precision + row.recall)
                 : 0.0;
    return row;
  };

  for (double thr : thresholds) {
    int tp = 0;
    for (std::size_t p = 0; p < predicted.size(); ++p)
      if (pred_match[p] >= 0 && match_d[p] < thr) ++tp;
    report.overall.push_back(make_row(thr, tp, static_cast<int>(predicted.size()) - tp,
                                      static_cast<int>(ground_truth.size()) - tp));
    for (int m = 0; m < 4; ++m) {
      int tpc = 0, predc = 0, gtc = 0;
      for (std::size_t p = 0; p < predicted.size(); ++p) {
        if (pred_class[p] != static_cast<Maneuver>(m)) continue;
        ++predc;
        if (pred_match[p] >= 0 && match_d[p] < thr) ++tpc;
      }
      int tpg = 0;
      for (std::size_t g = 0; g < ground_truth.size(); ++g) {
        if (gt_class[g] != static_cast<Maneuver>(m)) continue;
        ++gtc;
      }
      for (std::size_t p = 0; p < predicted.size(); ++p)
        if (pred_match[p] >= 0 && match_d[p] < thr &&
            gt_class[pred_match[p]] == static_cast<Maneuver>(m))
          ++tpg;
      PrfRow row;
      row.threshold = thr;
      row.tp = tpc;
      row.fp = predc - tpc;
      row.fn = gtc - tpg;
      row.precision = predc > 0 ? static_cast<double>(tpc) / predc : 0.0;
      row.recall = gtc > 0 ? static_cast<double>(tpg) / gtc : 0.0;
      row.f1 = row.precision + row.recall > 0
                   ? 2.0 * row.precision * row.recall / (row.precision + row.recall)
                   : 0.0;
      report.per_maneuver[m].push_back(row);
    }
  }
  return report;
}

}  // namespace csmap
