#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "csmapping/rng.hpp"
#include "csmapping/topology.hpp"
#include "doctest.h"

using namespace csmap;

namespace {

Trajectory straight_traj(double y = 0.0, double length = 20.0, int n = 41) {
  Trajectory t;
  for (int i = 0; i < n; ++i)
    t.waypoints.vertices.push_back({length * i / (n - 1), y});
  return t;
}

Trajectory arc_traj(Vec2 center, double radius, double a0, double a1, int n = 41) {
  Trajectory t;
  for (int i = 0; i < n; ++i) {
    const double a = a0 + (a1 - a0) * i / (n - 1);
    t.waypoints.vertices.push_back(
        {center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  return t;
}

// Exhaustive weighted k-medoids oracle.
double exhaustive_best(const std::vector<std::vector<double>>& D,
                       const std::vector<std::vector<double>>& W, int k) {
  const int n = static_cast<int>(D.size());
  std::vector<int> pick(k);
  double best = 1e300;
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == k) {
      double cost = 0.0;
      for (int j = 0; j < n; ++j) {
        double d1 = 1e300;
        for (int m : pick) d1 = std::min(d1, W[j][m] * D[j][m]);
        cost += d1;
      }
      best = std::min(best, cost);
      return;
    }
    for (int c = start; c < n; ++c) {
      pick[depth] = c;
      rec(c + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

}  // namespace

TEST_CASE("trajectory confidence components") {
  TopoConfig cfg;

  SUBCASE("straight fully observed approaches 1") {
    Trajectory t = straight_traj();
    const double w = trajectory_confidence(t, cfg);
    CHECK(w == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("no observable waypoints caps the score at 0.8") {
    Trajectory t = straight_traj();
    t.observable.assign(t.waypoints.size(), 0);
    const double w = trajectory_confidence(t, cfg);
    CHECK(w <= cfg.lambda_head + cfg.lambda_smooth + 1e-12);
    CHECK(w == doctest::Approx(0.8).epsilon(1e-6));
  }

  SUBCASE("mean residual of sigma_r gives e^-1 smoothness") {
    // Alternating +-sigma_r offsets around a straight line: the robust fit is
    // the line itself, so the mean residual equals sigma_r.
    Trajectory t;
    for (int i = 0; i < 40; ++i)
      t.waypoints.vertices.push_back({0.5 * i, (i % 2 ? 1.0 : -1.0) * cfg.sigma_r});
    const double w = trajectory_confidence(t, cfg);
    // s_obs = 1, s_head = 0 (zigzag), s_smooth = e^-1.
    const double expect = cfg.lambda_obs + cfg.lambda_smooth * std::exp(-1.0);
    CHECK(w == doctest::Approx(expect).epsilon(0.02));
  }
}

TEST_CASE("pairwise confidence harmonic mean") {
  CHECK(pairwise_confidence(0.6, 0.6) == doctest::Approx(0.6));
  CHECK(pairwise_confidence(1.0, 0.0) == doctest::Approx(0.0));
  CHECK(pairwise_confidence(0.2, 0.3) == doctest::Approx(0.24));
  CHECK(pairwise_confidence(0.0, 0.0) == 0.0);
}

TEST_CASE("matrices build and incremental append") {
  TopoConfig cfg;
  std::vector<Trajectory> ts{straight_traj(0.0), straight_traj(0.5), straight_traj(1.2),
                             arc_traj({10, -6}, 8.0, M_PI / 3, 2 * M_PI / 3)};
  const auto full = build_matrices(ts, cfg);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CHECK(full.distance[i][i] == 0.0);
    for (std::size_t j = 0; j < ts.size(); ++j)
      CHECK(std::abs(full.distance[i][j] - full.distance[j][i]) < 1e-9);
  }
  // Parallel offset 0.5 m: normalized distance equals the offset.
  CHECK(full.distance[0][1] == doctest::Approx(0.5).epsilon(0.01));

  std::vector<Trajectory> head(ts.begin(), ts.begin() + 3);
  auto incremental = build_matrices(head, cfg);
  append_trajectory(incremental, ts, 3, cfg);
  CHECK(incremental.distance == full.distance);
  CHECK(incremental.weight == full.weight);
}

TEST_CASE("weighted kmedoids") {
  TopoConfig cfg;

  SUBCASE("k equals N gives zero cost") {
    std::vector<Trajectory> ts{straight_traj(0), straight_traj(2), straight_traj(4)};
    const auto m = build_matrices(ts, cfg);
    const auto res = weighted_kmedoids(m.distance, m.weight, 3);
    CHECK(res.cost == doctest::Approx(0.0));
    CHECK(res.medoids.size() == 3);
  }

  SUBCASE("two separated lanes split correctly") {
    std::vector<Trajectory> ts;
    for (int i = 0; i < 5; ++i) ts.push_back(straight_traj(0.2 * i));
    for (int i = 0; i < 5; ++i) ts.push_back(straight_traj(30.0 + 0.2 * i));
    const auto m = build_matrices(ts, cfg);
    const auto res = weighted_kmedoids(m.distance, m.weight, 2);
    CHECK(res.cost == doctest::Approx(exhaustive_best(m.distance, m.weight, 2)));
    std::set<int> groups;
    for (int mi : res.medoids) groups.insert(mi < 5 ? 0 : 1);
    CHECK(groups.size() == 2);
  }

  SUBCASE("matches exhaustive enumeration on random instances") {
    auto rng = make_rng(5);
    std::uniform_real_distribution<double> ud(0.1, 10.0), uw(0.05, 1.0);
    for (int trial = 0; trial < 12; ++trial) {
      const int n = 6 + static_cast<int>(trial % 7);
      const int k = 1 + static_cast<int>(trial % 3);
      std::vector<std::vector<double>> D(n, std::vector<double>(n, 0.0));
      std::vector<double> conf(n);
      for (auto& c : conf) c = uw(rng);
      std::vector<std::vector<double>> W(n, std::vector<double>(n, 0.0));
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) D[i][j] = D[j][i] = ud(rng);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) W[i][j] = pairwise_confidence(conf[i], conf[j]);
      const auto res = weighted_kmedoids(D, W, k);
      CHECK(res.cost == doctest::Approx(exhaustive_best(D, W, k)).epsilon(1e-12));
    }
  }

  SUBCASE("uniform weights reduce to unweighted PAM") {
    auto rng = make_rng(6);
    std::uniform_real_distribution<double> ud(0.1, 10.0);
    const int n = 10;
    std::vector<std::vector<double>> D(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) D[i][j] = D[j][i] = ud(rng);
    std::vector<std::vector<double>> ones(n, std::vector<double>(n, 1.0));
    std::vector<std::vector<double>> halves(n, std::vector<double>(n, 0.5));
    const auto a = weighted_kmedoids(D, ones, 3);
    const auto b = weighted_kmedoids(D, halves, 3);
    CHECK(a.medoids == b.medoids);
  }

  SUBCASE("k larger than N is rejected") {
    std::vector<std::vector<double>> D(2, std::vector<double>(2, 0.0));
    CHECK_THROWS_AS(weighted_kmedoids(D, D, 3), std::invalid_argument);
  }
}

TEST_CASE("nms medoids") {
  // Distances in meters between medoid trajectories.
  std::vector<std::vector<double>> D = {
      {0.0, 2.0, 9.0},
      {2.0, 0.0, 9.0},
      {9.0, 9.0, 0.0},
  };
  ClusterResult clusters;
  clusters.medoids = {0, 1, 2};
  clusters.assignment.assign(50, 0);
  for (int i = 0; i < 10; ++i) clusters.assignment.push_back(1);
  for (int i = 0; i < 20; ++i) clusters.assignment.push_back(2);

  SUBCASE("smaller cluster within tau is suppressed") {
    const auto kept = nms_medoids(clusters, D, 3.0);
    CHECK(kept == std::vector<int>{0, 2});
  }
  SUBCASE("no removals above tau") {
    const auto kept = nms_medoids(clusters, D, 1.5);
    CHECK(kept.size() == 3);
  }
  SUBCASE("duplicate medoids collapse to one") {
    std::vector<std::vector<double>> Dz(3, std::vector<double>(3, 0.0));
    const auto kept = nms_medoids(clusters, Dz, 3.0);
    CHECK(kept.size() == 1);
  }
  SUBCASE("order independence: result sorted by cluster size") {
    ClusterResult shuffled;
    shuffled.medoids = {2, 0, 1};
    shuffled.assignment.assign(20, 0);  // medoid 2 has 20
    for (int i = 0; i < 50; ++i) shuffled.assignment.push_back(1);  // medoid 0 has 50
    for (int i = 0; i < 10; ++i) shuffled.assignment.push_back(2);  // medoid 1 has 10
    const auto kept = nms_medoids(shuffled, D, 3.0);
    CHECK(kept == std::vector<int>{0, 2});
  }
}

TEST_CASE("distance field accuracy and gradient") {
  GridSpec g;
  g.resolution = 0.25;
  g.origin = {0, 0};
  g.width = 80;
  g.height = 40;
  const Polyline2D line{{2.0, 5.125}, {18.0, 5.125}};  // through cell centers
  const auto field = distance_field(line, g);

  // Straight trajectory: the field matches point-to-segment distance.
  for (int cy = 0; cy < g.height; cy += 3) {
    for (int cx = 0; cx < g.width; cx += 5) {
      const Vec2 p = g.cell_center(cx, cy);
      const double expect = point_segment_distance(p, line.vertices[0], line.vertices[1]);
      const double got = field.values[static_cast<std::size_t>(cy) * g.width + cx];
      CHECK(std::abs(got - expect) <= 1e-12);
    }
  }

  // Cell centers on the trajectory read near zero.
  for (double x = 2.125; x <= 18.0; x += 1.0) {
    int cx, cy;
    g.locate({x, 5.125}, cx, cy);
    CHECK(field.values[static_cast<std::size_t>(cy) * g.width + cx] <= g.resolution / 2);
  }

  // Gradient of the interpolated surface vs finite differences, away from
  // the medial axis and the curve itself.
  const double h = 1e-5;
  for (const Vec2 probe : {Vec2{6.3, 7.9}, Vec2{11.7, 2.2}, Vec2{16.2, 8.4}}) {
    const Vec2 grad = field.gradient(probe);
    const double fdx = (field.sample({probe.x + h, probe.y}) -
                        field.sample({probe.x - h, probe.y})) / (2 * h);
    const double fdy = (field.sample({probe.x, probe.y + h}) -
                        field.sample({probe.x, probe.y - h})) / (2 * h);
    CHECK(std::abs(grad.x - fdx) / std::max(1.0, std::abs(fdx)) < 1e-3);
    CHECK(std::abs(grad.y - fdy) / std::max(1.0, std::abs(fdy)) < 1e-3);
  }
}

TEST_CASE("bicycle step") {
  const double L = 2.7;
  BicycleState rest{1.0, 2.0, 0.5, 0.0};
  const auto same = bicycle_step(rest, {0.0, 0.0}, 0.1, L);
  CHECK(same.x == rest.x);
  CHECK(same.y == rest.y);

  BicycleState rolling{0.0, 0.0, 0.0, 1.0};
  const auto fwd = bicycle_step(rolling, {0.0, 0.0}, 0.1, L);
  CHECK(fwd.x == doctest::Approx(0.1));
  CHECK(fwd.y == doctest::Approx(0.0));

  CHECK_THROWS_AS(bicycle_step(rolling, {0.0, 1.6}, 0.1, L), std::invalid_argument);

  // Unit-radius circle: tan(delta)/L = 1, v = 1; after a full period the
  // left Riemann sums of cos/sin close exactly.
  const int n = 100;
  const double dt = 2.0 * M_PI / n;
  const double delta = std::atan(L);
  BicycleState s{0.0, 0.0, 0.0, 1.0};
  for (int i = 0; i < n; ++i) s = bicycle_step(s, {0.0, delta}, dt, L);
  CHECK(std::hypot(s.x, s.y) < dt);
}

TEST_CASE("refine medoid") {
  TopoConfig cfg;

  SUBCASE("straight cluster keeps near-zero controls") {
    // The member extends past the medoid so the medoid's span sits in the
    // flat valley of the field (no endpoint edge effects); the analytic
    // optimum is then the line itself with zero control.
    Trajectory member;
    for (int i = 0; i < 81; ++i) member.waypoints.vertices.push_back({-5.0 + 0.5 * i, 0.0});
    Trajectory medoid = straight_traj(0.0, 30.0, 61);
    std::vector<const Trajectory*> members{&member};
    const auto res = refine_medoid(medoid, members, cfg);
    double umax = 0.0;
    for (const auto& u : res.trajectory.controls)
      umax = std::max({umax, std::abs(u.a), std::abs(u.delta)});
    CHECK(umax < 1e-3);
    for (const auto& s : res.trajectory.states)
      CHECK(std::abs(s.y) < cfg.field_resolution);
    CHECK(res.max_violation <= 1e-3);
  }

  SUBCASE("zigzag medoid straightens against a straight cluster") {
    Trajectory clean;
    for (int i = 0; i < 81; ++i) clean.waypoints.vertices.push_back({-5.0 + 0.5 * i, 0.0});
    Trajectory zigzag;
    for (int i = 0; i < 61; ++i)
      zigzag.waypoints.vertices.push_back({30.0 * i / 60.0, (i % 2 ? 0.6 : -0.6)});
    std::vector<const Trajectory*> members{&clean};

    const auto refined = refine_medoid(zigzag, members, cfg);
    TopoConfig frozen = cfg;
    frozen.max_inner = 0;  // initial rollout without refinement
    const auto initial = refine_medoid(zigzag, members, frozen);

    GridSpec g;
    g.resolution = cfg.field_resolution;
    g.origin = {-5.0, -6.0};
    g.width = static_cast<int>(40.0 / g.resolution);
    g.height = static_cast<int>(12.0 / g.resolution);
    const auto field = distance_field(clean.waypoints, g);
    double refined_field = 0.0, initial_field = 0.0;
    for (const auto& s : refined.trajectory.states) refined_field += field.sample({s.x, s.y});
    refined_field /= refined.trajectory.states.size();
    for (const auto& s : initial.trajectory.states) initial_field += field.sample({s.x, s.y});
    initial_field /= initial.trajectory.states.size();
    CHECK(refined_field <= initial_field);

    double e_refined = 0.0, e_initial = 0.0;
    for (const auto& u : refined.trajectory.controls)
      e_refined += u.a * u.a + u.delta * u.delta;
    for (const auto& u : initial.trajectory.controls)
      e_initial += u.a * u.a + u.delta * u.delta;
    CHECK(e_refined < e_initial);
  }

  SUBCASE("strong control regularization shrinks control energy") {
    Trajectory medoid = arc_traj({0, 0}, 12.0, -M_PI / 4, M_PI / 4, 41);
    Trajectory member = arc_traj({0, 0}, 12.2, -M_PI / 4, M_PI / 4, 37);
    std::vector<const Trajectory*> members{&member};
    const auto mild = refine_medoid(medoid, members, cfg);
    TopoConfig heavy = cfg;
    heavy.lambda_ctrl = 1e6;
    const auto regular = refine_medoid(medoid, members, heavy);
    double e_mild = 0.0, e_heavy = 0.0;
    for (const auto& u : mild.trajectory.controls) e_mild += u.a * u.a + u.delta * u.delta;
    for (const auto& u : regular.trajectory.controls)
      e_heavy += u.a * u.a + u.delta * u.delta;
    CHECK(e_heavy <= e_mild + 1e-9);
  }

  SUBCASE("dynamics reconstruction is bit-identical and constraints hold") {
    Trajectory medoid = arc_traj({0, 0}, 12.0, -M_PI / 3, M_PI / 3, 61);
    Trajectory m1 = arc_traj({0, 0}, 12.3, -M_PI / 3, M_PI / 3, 55);
    Trajectory m2 = arc_traj({0, 0}, 11.7, -M_PI / 3, M_PI / 3, 49);
    std::vector<const Trajectory*> members{&m1, &m2};
    const auto res = refine_medoid(medoid, members, cfg);

    BicycleState s = res.trajectory.states.front();
    for (std::size_t i = 0; i < res.trajectory.controls.size(); ++i) {
      s = bicycle_step(s, res.trajectory.controls[i], cfg.dt, cfg.wheelbase);
      CHECK(s.x == res.trajectory.states[i + 1].x);
      CHECK(s.y == res.trajectory.states[i + 1].y);
      CHECK(s.theta == res.trajectory.states[i + 1].theta);
      CHECK(s.v == res.trajectory.states[i + 1].v);
    }
    CHECK(res.max_violation <= 1e-3);
    for (std::size_t i = 1; i < res.violation_trace.size(); ++i)
      CHECK(res.violation_trace[i] <= res.violation_trace[i - 1] + 1e-9);
  }
}

TEST_CASE("maneuver classification") {
  CHECK(classify_maneuver(straight_traj().waypoints) == Maneuver::straight);
  CHECK(classify_maneuver(arc_traj({0, 0}, 10, -M_PI / 2, 0.0).waypoints) == Maneuver::left);
  CHECK(classify_maneuver(arc_traj({0, 0}, 10, M_PI / 2, 0.0).waypoints) == Maneuver::right);
  CHECK(classify_maneuver(arc_traj({0, 0}, 8, -M_PI / 2, M_PI / 2 + 0.4).waypoints) ==
        Maneuver::uturn);
}

TEST_CASE("centerline metrics") {
  TopoConfig cfg;
  std::vector<Polyline2D> gt{straight_traj(0.0).waypoints, straight_traj(8.0).waypoints};

  SUBCASE("exact predictions score 1 at every threshold") {
    const auto rep = centerline_metrics(gt, gt, {1.0, 2.0, 3.0}, cfg);
    for (const auto& row : rep.overall) {
      CHECK(row.precision == doctest::Approx(1.0));
      CHECK(row.recall == doctest::Approx(1.0));
      CHECK(row.f1 == doctest::Approx(1.0));
    }
  }

  SUBCASE("spurious prediction costs precision only") {
    auto pred = gt;
    pred.push_back(straight_traj(40.0).waypoints);
    const auto rep = centerline_metrics(pred, gt, {2.0}, cfg);
    CHECK(rep.overall[0].recall == doctest::Approx(1.0));
    CHECK(rep.overall[0].precision == doctest::Approx(2.0 / 3.0));
  }

  SUBCASE("uniform offset flips with the threshold") {
    std::vector<Polyline2D> pred{straight_traj(1.5).waypoints, straight_traj(9.5).waypoints};
    const auto rep = centerline_metrics(pred, gt, {1.0, 2.0, 3.0}, cfg);
    CHECK(rep.overall[0].tp == 0);
    CHECK(rep.overall[1].tp == 2);
    CHECK(rep.overall[2].tp == 2);
  }

  CHECK_THROWS_AS(centerline_metrics(gt, gt, {0.0}, cfg), std::invalid_argument);
}
