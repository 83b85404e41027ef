#include <cmath>
#include <map>

#include "csmapping/param_propagation.hpp"
#include "doctest.h"

using namespace csmap;

namespace {

Polyline2D u_arc(double radius, double offset, int verts = 30) {
  Polyline2D p;
  const double r = radius + offset;
  p.vertices.push_back({-r, -4.0});
  for (int i = 0; i <= verts; ++i) {
    const double ang = M_PI - M_PI * i / verts;
    p.vertices.push_back({r * std::cos(ang), r * std::sin(ang)});
  }
  p.vertices.push_back({r, -4.0});
  return p;
}

Polyline2D sub_arc(const Polyline2D& full, double from_frac, double to_frac) {
  const double L = arc_length(full);
  Polyline2D out;
  const int steps = 40;
  for (int i = 0; i <= steps; ++i) {
    const double s = L * (from_frac + (to_frac - from_frac) * i / steps);
    const Vec2 p = point_at_arclength(full, s);
    if (!out.vertices.empty() && (p - out.vertices.back()).squared_norm() < 1e-16) continue;
    out.vertices.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("single segment spans [-1,1] on its own arc length") {
  const Polyline2D seg{{0, 0}, {4, 0}};
  const auto res = propagate_parameters({seg});
  CHECK(res.reference == 0);
  CHECK(res.orphans.empty());
  CHECK(res.s_min == doctest::Approx(0.0));
  CHECK(res.s_max == doctest::Approx(4.0));
  CHECK(res.points.front().t == doctest::Approx(-1.0));
  CHECK(res.points.back().t == doctest::Approx(1.0));
  // t proportional to arc position
  for (const auto& q : res.points)
    CHECK(q.t == doctest::Approx(-1.0 + 2.0 * q.p.x / 4.0).epsilon(1e-9));
}

TEST_CASE("half-overlapping collinear segments get consistent parameters") {
  const Polyline2D a{{0, 0}, {2, 0}};
  const Polyline2D b{{1, 0}, {3, 0}};
  PropagationConfig cfg;
  cfg.point_spacing = 0.1;
  const auto res = propagate_parameters({a, b}, cfg);
  CHECK(res.orphans.empty());
  // Common points (x in [1,2]) must receive nearly equal t from both curves.
  std::map<int, std::map<int, double>> t_at;  // obs -> rounded mm x -> t
  for (const auto& q : res.points)
    t_at[q.observation][static_cast<int>(std::lround(q.p.x * 1000))] = q.t;
  int common = 0;
  for (const auto& [x, t0] : t_at[0]) {
    auto it = t_at[1].find(x);
    if (it == t_at[1].end()) continue;
    ++common;
    CHECK(std::abs(t0 - it->second) < 0.05);
  }
  CHECK(common >= 5);
  // Union spans 3 m.
  CHECK(res.s_max - res.s_min == doctest::Approx(3.0).epsilon(0.02));
}

TEST_CASE("U-shaped reference with offset partial copies keeps t monotone") {
  const Polyline2D ref = u_arc(3.0, 0.0);
  const Polyline2D c1 = sub_arc(u_arc(3.0, 0.15), 0.0, 0.6);
  const Polyline2D c2 = sub_arc(u_arc(3.0, -0.12), 0.3, 0.9);
  const Polyline2D c3 = sub_arc(u_arc(3.0, 0.1), 0.45, 1.0);
  PropagationConfig cfg;
  cfg.point_spacing = 0.25;
  const auto res = propagate_parameters({ref, c1, c2, c3}, cfg);
  CHECK(res.orphans.empty());
  CHECK(res.reference == 0);
  // Strictly increasing t along every observation (order preservation).
  std::map<int, std::vector<double>> per_obs;
  for (const auto& q : res.points) per_obs[q.observation].push_back(q.t);
  for (const auto& [obs, ts] : per_obs) {
    for (std::size_t k = 1; k < ts.size(); ++k) CHECK(ts[k] > ts[k - 1]);
  }
  // All t within [-1, 1].
  for (const auto& q : res.points) {
    CHECK(q.t >= -1.0 - 1e-12);
    CHECK(q.t <= 1.0 + 1e-12);
  }
}

TEST_CASE("disconnected segment reported as orphan") {
  const Polyline2D a{{0, 0}, {2, 0}};
  const Polyline2D b{{1, 0.2}, {3, 0.2}};
  const Polyline2D far{{100, 100}, {102, 100}};
  const auto res = propagate_parameters({a, b, far});
  REQUIRE(res.orphans.size() == 1);
  CHECK(res.orphans[0] == 2);
  for (const auto& q : res.points) CHECK(q.observation != 2);
}
