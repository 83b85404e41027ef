#include <cmath>
#include <set>

#include "csmapping/curve_fit.hpp"
#include "csmapping/synthetic.hpp"
#include "csmapping/topology.hpp"
#include "doctest.h"

using namespace csmap;

TEST_CASE("scene generation is deterministic in the seed") {
  SceneSpec spec;
  spec.layout = SceneLayout::intersection;
  const Scene a = generate_scene(spec, 99);
  const Scene b = generate_scene(spec, 99);
  REQUIRE(a.landmarks.size() == b.landmarks.size());
  for (std::size_t i = 0; i < a.landmarks.size(); ++i) {
    REQUIRE(a.landmarks[i].polyline.size() == b.landmarks[i].polyline.size());
    for (std::size_t j = 0; j < a.landmarks[i].polyline.size(); ++j) {
      CHECK(a.landmarks[i].polyline.vertices[j].x == b.landmarks[i].polyline.vertices[j].x);
      CHECK(a.landmarks[i].polyline.vertices[j].y == b.landmarks[i].polyline.vertices[j].y);
    }
  }
  CHECK(a.gt_raster.data == b.gt_raster.data);

  const Scene c = generate_scene(spec, 100);
  bool any_diff = c.landmarks[0].polyline.vertices[0].x != a.landmarks[0].polyline.vertices[0].x ||
                  c.landmarks[0].polyline.vertices[0].y != a.landmarks[0].polyline.vertices[0].y;
  CHECK(any_diff);
}

TEST_CASE("straight scene landmarks recover an order-1 fit exactly") {
  SceneSpec spec;
  spec.layout = SceneLayout::straight;
  const Scene scene = generate_scene(spec, 7);
  // Boundary landmarks are straight lines: a linear Chebyshev fit has zero
  // residual.
  for (const auto& det : scene.landmarks) {
    if (det.class_id != kClassBoundary) continue;
    const auto cum = cumulative_lengths(det.polyline);
    ParamPointSet pts;
    for (std::size_t i = 0; i < det.polyline.size(); ++i)
      pts.push_back({det.polyline.vertices[i], -1.0 + 2.0 * cum[i] / cum.back(), 0});
    const auto fit = fit_weighted_ls(pts, 1, {});
    for (const auto& q : pts)
      CHECK((q.p - chebyshev_eval(fit, q.t)).norm() < 1e-9);
  }
}

TEST_CASE("intersection scene has rich centerline structure") {
  SceneSpec spec;
  spec.layout = SceneLayout::intersection;
  const Scene scene = generate_scene(spec, 3);
  CHECK(scene.centerlines.size() >= 4);
  std::set<int> kinds;
  for (const auto& cl : scene.centerlines)
    kinds.insert(static_cast<int>(classify_maneuver(cl)));
  CHECK(kinds.size() >= 2);
}

TEST_CASE("zero-noise observations reproduce clipped ground truth") {
  SceneSpec spec;
  spec.layout = SceneLayout::straight;
  const Scene scene = generate_scene(spec, 5);
  NoiseModel clean;
  clean.vertex_sigma = 0.0;
  const auto sessions = simulate_observations(scene, clean, 1, 11);
  REQUIRE(sessions.size() == 1);
  REQUIRE(!sessions[0].frames.empty());
  int checked = 0;
  for (const auto& frame : sessions[0].frames) {
    for (const auto& det : frame.detections) {
      // Every detection vertex lies on some ground-truth landmark.
      for (const auto& v : det.polyline.vertices) {
        double best = 1e18;
        for (const auto& gt : scene.landmarks) {
          if (gt.class_id != det.class_id) continue;
          best = std::min(best, point_polyline_distance(v, gt.polyline));
        }
        CHECK(best < 1e-6);
        ++checked;
      }
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("full dropout leaves only background observations") {
  SceneSpec spec;
  const Scene scene = generate_scene(spec, 6);
  NoiseModel dropped;
  dropped.dropout = 1.0;
  const auto sessions = simulate_observations(scene, dropped, 2, 12);
  for (const auto& s : sessions) {
    for (const auto& f : s.frames) {
      CHECK(f.detections.empty());
      CHECK(!f.observed.empty());
    }
  }
}

TEST_CASE("vertex noise matches the configured sigma") {
  SceneSpec spec;
  spec.layout = SceneLayout::straight;
  spec.with_crossing = false;
  const Scene scene = generate_scene(spec, 8);
  NoiseModel noisy;
  noisy.vertex_sigma = 0.3;
  const auto sessions = simulate_observations(scene, noisy, 20, 13);
  // Per-point error against the nearest landmark of the same class.
  double acc = 0.0, acc2 = 0.0;
  int n = 0;
  for (const auto& s : sessions) {
    for (const auto& f : s.frames) {
      for (const auto& det : f.detections) {
        for (const auto& v : det.polyline.vertices) {
          double best = 1e18;
          for (const auto& gt : scene.landmarks) {
            if (gt.class_id != det.class_id) continue;
            best = std::min(best, point_polyline_distance(v, gt.polyline));
          }
          acc += best;
          acc2 += best * best;
          ++n;
        }
      }
    }
  }
  REQUIRE(n > 1000);
  // Distance to the line from a 2-D Gaussian offset is half-normal in the
  // normal component: E|d| = sigma sqrt(2/pi).
  const double mean = acc / n;
  CHECK(std::abs(mean - 0.3 * std::sqrt(2.0 / M_PI)) < 0.03);
}

TEST_CASE("generated trajectories admit a bounded-control bicycle fit") {
  SceneSpec spec;
  spec.layout = SceneLayout::intersection;
  const Scene scene = generate_scene(spec, 9);
  NoiseModel noise;
  noise.lateral_drift_sigma = 0.3;
  const auto sessions = simulate_observations(scene, noise, 6, 14);
  for (const auto& s : sessions) {
    const auto& wp = s.trajectory.waypoints.vertices;
    REQUIRE(wp.size() >= 5);
    // Finite-difference control fit along the driven path stays within
    // generous physical bounds.
    const double dt = 0.2, L = 2.7;
    for (std::size_t i = 0; i + 2 < wp.size(); ++i) {
      const double v0 = (wp[i + 1] - wp[i]).norm() / dt;
      const double v1 = (wp[i + 2] - wp[i + 1]).norm() / dt;
      const double a = (v1 - v0) / dt;
      const double h0 = std::atan2(wp[i + 1].y - wp[i].y, wp[i + 1].x - wp[i].x);
      const double h1 = std::atan2(wp[i + 2].y - wp[i + 1].y, wp[i + 2].x - wp[i + 1].x);
      const double delta = std::atan(L * normalize_angle(h1 - h0) / (dt * std::max(v0, 1.0)));
      CHECK(std::abs(a) <= 3.0 + 1e-6);
      CHECK(std::abs(delta) <= 0.6 + 1e-6);
    }
  }
}

TEST_CASE("coverage fraction limits the driven span") {
  SceneSpec spec;
  spec.layout = SceneLayout::straight;
  spec.extent = 80.0;
  const Scene scene = generate_scene(spec, 10);
  NoiseModel partial;
  partial.coverage = 0.3;
  const auto sessions = simulate_observations(scene, partial, 8, 15);
  for (const auto& s : sessions) {
    const double len = arc_length(s.trajectory.waypoints);
    CHECK(len < 0.6 * 80.0);
  }
}
