#include "csmapping/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csmapping/rng.hpp"

namespace csmap {

namespace {

constexpr double kLaneWidth = 3.5;

Polyline2D line_between(const Vec2& a, const Vec2& b, double spacing = 1.0) {
  Polyline2D raw{a, b};
  return resample(raw, spacing);
}

Polyline2D arc_polyline(const Vec2& center, double radius, double a0, double a1,
                        double spacing = 0.5) {
  const double span = std::abs(a1 - a0) * radius;
  const int n = std::max(4, static_cast<int>(std::ceil(span / spacing)));
  Polyline2D p;
  for (int i = 0; i <= n; ++i) {
    const double a = a0 + (a1 - a0) * i / n;
    p.vertices.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  return p;
}

Polyline2D bezier(const Vec2& p0, const Vec2& c, const Vec2& p1, int n = 20) {
  Polyline2D out;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const double u = 1.0 - t;
    const Vec2 q = u * u * p0 + 2.0 * u * t * c + t * t * p1;
    if (!out.vertices.empty() && (q - out.vertices.back()).squared_norm() < 1e-16) continue;
    out.vertices.push_back(q);
  }
  return out;
}

Polyline2D concat(std::initializer_list<Polyline2D> parts) {
  Polyline2D out;
  for (const auto& p : parts) {
    for (const auto& v : p.vertices) {
      if (!out.vertices.empty() && (v - out.vertices.back()).squared_norm() < 1e-16) continue;
      out.vertices.push_back(v);
    }
  }
  return out;
}

void add_crossing_band(std::vector<Detection>& landmarks, const Vec2& center, double across,
                       double along, double angle) {
  // A crossing is a short thick band: three parallel strokes.
  const Vec2 dir{std::cos(angle), std::sin(angle)};
  const Vec2 nrm{-std::sin(angle), std::cos(angle)};
  for (int k = -1; k <= 1; ++k) {
    const Vec2 offset = center + (along * 0.33 * k) * nrm;
    Detection det;
    det.class_id = kClassCrossing;
    det.polyline = Polyline2D{offset - 0.5 * across * dir, offset + 0.5 * across * dir};
    landmarks.push_back(det);
  }
}

struct RouteBuilder {
  double extent;
  Vec2 center;

  Pose2D arm_pose(int arm) const {
    // arm 0 = west entry heading east; arms rotate counterclockwise.
    const double ang = arm * M_PI / 2.0;
    const double c = std::cos(ang), s = std::sin(ang);
    const Vec2 t{center.x - (c * center.x - s * center.y),
                 center.y - (s * center.x + c * center.y)};
    return Pose2D(ang, t);  // rotation about the scene center
  }
};

}  // namespace

RasterStack render_landmarks(const std::vector<Detection>& landmarks, const GridSpec& grid,
                             int num_classes) {
  GridSpec g = grid;
  g.channels = num_classes;
  RasterStack out = RasterStack::zeros(RasterStack::Role::target, g, num_classes);
  for (const auto& det : landmarks) {
    if (det.class_id < 1 || det.class_id > num_classes)
      throw std::invalid_argument("render_landmarks: class out of range");
    for (const CellIndex& c : rasterize_polyline(det.polyline, grid))
      out.at(det.class_id - 1, c.y, c.x) = 1.0;
  }
  return out;
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  if (spec.extent <= 0.0) throw std::invalid_argument("scene extent must be > 0");
  Scene scene;
  scene.spec = spec;
  scene.grid.origin = {0.0, 0.0};
  scene.grid.resolution = spec.resolution;
  scene.grid.width = static_cast<int>(std::lround(spec.extent / spec.resolution));
  scene.grid.height = scene.grid.width;
  scene.grid.channels = kNumClasses;

  auto rng = make_rng(seed, 0x5ce4e);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double E = spec.extent;
  const double margin = 2.0;
  const int lanes = std::max(1, spec.lanes);
  const double half_road = lanes * kLaneWidth / 2.0;

  auto add_landmark = [&](int class_id, const Polyline2D& p) {
    Detection det;
    det.class_id = class_id;
    det.polyline = p;
    scene.landmarks.push_back(det);
  };

  switch (spec.layout) {
    case SceneLayout::straight: {
      const double yc = E / 2.0 + 2.0 * jitter(rng);
      add_landmark(kClassBoundary, line_between({margin, yc - half_road}, {E - margin, yc - half_road}));
      add_landmark(kClassBoundary, line_between({margin, yc + half_road}, {E - margin, yc + half_road}));
      for (int k = 1; k < lanes; ++k) {
        const double y = yc - half_road + k * kLaneWidth;
        add_landmark(kClassDivider, line_between({margin, y}, {E - margin, y}));
      }
      if (spec.with_crossing) {
        const double xc = E / 2.0 + 4.0 * jitter(rng);
        add_crossing_band(scene.landmarks, {xc, yc}, 2.0 * half_road + 1.0, 2.4, M_PI / 2);
      }
      for (int k = 0; k < lanes; ++k) {
        const double y = yc - half_road + (k + 0.5) * kLaneWidth;
        Polyline2D cl = line_between({margin, y}, {E - margin, y});
        if (k >= (lanes + 1) / 2) std::reverse(cl.vertices.begin(), cl.vertices.end());
        scene.centerlines.push_back(cl);
        scene.lane_paths.push_back(cl);
      }
      break;
    }
    case SceneLayout::curved: {
      const double radius = 0.9 * E + 10.0 * jitter(rng);
      const Vec2 c{E / 2.0, E / 2.0 - radius + E * 0.3};
      const double a0 = M_PI / 2 + 0.45, a1 = M_PI / 2 - 0.45;
      add_landmark(kClassBoundary, arc_polyline(c, radius + half_road, a0, a1));
      add_landmark(kClassBoundary, arc_polyline(c, radius - half_road, a0, a1));
      for (int k = 1; k < lanes; ++k)
        add_landmark(kClassDivider,
                     arc_polyline(c, radius - half_road + k * kLaneWidth, a0, a1));
      for (int k = 0; k < lanes; ++k) {
        Polyline2D cl = arc_polyline(c, radius - half_road + (k + 0.5) * kLaneWidth, a0, a1);
        if (k >= (lanes + 1) / 2) std::reverse(cl.vertices.begin(), cl.vertices.end());
        scene.centerlines.push_back(cl);
        scene.lane_paths.push_back(cl);
      }
      break;
    }
    case SceneLayout::uturn: {
      // Two legs joined by a half circle around the scene middle.
      const double r_mid = E / 4.0 + 2.0 * jitter(rng);
      const Vec2 c{E / 2.0, E / 2.0};
      auto u_curve = [&](double r) {
        const Polyline2D up =
            line_between({c.x - r, margin}, {c.x - r, c.y}, 0.8);
        const Polyline2D cap = arc_polyline(c, r, M_PI, 0.0);
        const Polyline2D down = line_between({c.x + r, c.y}, {c.x + r, margin}, 0.8);
        return concat({up, cap, down});
      };
      add_landmark(kClassBoundary, u_curve(r_mid + half_road));
      add_landmark(kClassBoundary, u_curve(r_mid - half_road));
      for (int k = 1; k < lanes; ++k)
        add_landmark(kClassDivider, u_curve(r_mid - half_road + k * kLaneWidth));
      for (int k = 0; k < lanes; ++k) {
        Polyline2D cl = u_curve(r_mid - half_road + (k + 0.5) * kLaneWidth);
        if (k >= (lanes + 1) / 2) std::reverse(cl.vertices.begin(), cl.vertices.end());
        scene.centerlines.push_back(cl);
        scene.lane_paths.push_back(cl);
      }
      break;
    }
    case SceneLayout::intersection: {
      const Vec2 c{E / 2.0 + 1.5 * jitter(rng), E / 2.0 + 1.5 * jitter(rng)};
      const double w = kLaneWidth;         // one lane per direction per road
      const double jr = 2.0 * w;           // junction box half size
      RouteBuilder rb{E, c};

      for (int arm = 0; arm < 4; ++arm) {
        const Pose2D pose = rb.arm_pose(arm);
        // Boundaries and center divider of the west arm, rotated into place.
        const Polyline2D outer =
            line_between({margin, c.y - w - 0.5}, {c.x - jr, c.y - w - 0.5});
        const Polyline2D inner =
            line_between({margin, c.y + w + 0.5}, {c.x - jr, c.y + w + 0.5});
        const Polyline2D divider = line_between({margin, c.y}, {c.x - jr - 1.0, c.y});
        add_landmark(kClassBoundary, transformed(outer, pose));
        add_landmark(kClassBoundary, transformed(inner, pose));
        add_landmark(kClassDivider, transformed(divider, pose));
        if (spec.with_crossing) {
          Polyline2D stripe{{c.x - jr + 1.2, c.y - w - 0.5}, {c.x - jr + 1.2, c.y + w + 0.5}};
          for (int s = -1; s <= 1; ++s) {
            Polyline2D part = stripe;
            for (auto& v : part.vertices) v.x += 0.5 * s;
            Detection det;
            det.class_id = kClassCrossing;
            det.polyline = transformed(part, pose);
            scene.landmarks.push_back(det);
          }
        }

        // Routes entering on this arm (right-hand traffic, entry lane below
        // the divider): through, right turn, left turn, U-turn.
        const double y_in = c.y - w / 2.0;
        const double y_out = c.y + w / 2.0;
        const Vec2 entry{c.x - jr, y_in};
        const Polyline2D approach = line_between({margin, y_in}, entry);
        // Through.
        {
          const Polyline2D exit = line_between({c.x + jr, y_in}, {E - margin, y_in});
          scene.centerlines.push_back(
              transformed(concat({approach, line_between(entry, {c.x + jr, y_in})}), pose));
          scene.lane_paths.push_back(transformed(
              concat({approach, line_between(entry, {c.x + jr, y_in}), exit}), pose));
        }
        // Right turn: exits south.
        {
          const Vec2 exit_pt{c.x - w / 2.0, c.y - jr};
          const Polyline2D turn = bezier(entry, {exit_pt.x, y_in}, exit_pt);
          const Polyline2D exit = line_between(exit_pt, {exit_pt.x, margin});
          scene.centerlines.push_back(transformed(concat({approach, turn}), pose));
          scene.lane_paths.push_back(transformed(concat({approach, turn, exit}), pose));
        }
        // Left turn: exits north.
        {
          const Vec2 exit_pt{c.x + w / 2.0, c.y + jr};
          const Polyline2D turn = bezier(entry, {exit_pt.x, y_in}, exit_pt);
          const Polyline2D exit = line_between(exit_pt, {exit_pt.x, E - margin});
          scene.centerlines.push_back(transformed(concat({approach, turn}), pose));
          scene.lane_paths.push_back(transformed(concat({approach, turn, exit}), pose));
        }
        // U-turn back along the same road.
        {
          const Polyline2D cap = arc_polyline({c.x - jr, c.y}, w / 2.0, -M_PI / 2, M_PI / 2);
          Polyline2D cap_shifted = cap;
          for (auto& v : cap_shifted.vertices) v.x += jr - w / 2.0;
          const Polyline2D back = line_between({c.x - jr, y_out}, {margin, y_out});
          scene.centerlines.push_back(
              transformed(concat({approach, cap_shifted}), pose));
          scene.lane_paths.push_back(transformed(concat({approach, cap_shifted, back}), pose));
        }
      }
      break;
    }
  }

  scene.gt_raster = render_landmarks(scene.landmarks, scene.grid, kNumClasses);
  return scene;
}

namespace {

// Pure-pursuit bicycle rollout along a reference path.
Trajectory drive_path(const Polyline2D& path, double dt, std::uint64_t seed,
                      const NoiseModel& noise, double extent) {
  auto rng = make_rng(seed, 0xd21fe);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uphase(0.0, 2 * M_PI);

  // Smooth lateral wander: two low-frequency harmonics plus a constant bias.
  const double amp1 = noise.lateral_drift_sigma * 0.8 * std::abs(gauss(rng));
  const double amp2 = noise.lateral_drift_sigma * 0.4 * std::abs(gauss(rng));
  const double ph1 = uphase(rng), ph2 = uphase(rng);
  const double bias = noise.lateral_drift_sigma * gauss(rng);
  const double L = arc_length(path);
  const auto cum = cumulative_lengths(path);

  auto offset_point = [&](double s) {
    s = std::clamp(s, 0.0, L);
    const Vec2 p = point_at_arclength(path, s);
    const Vec2 q = point_at_arclength(path, std::min(s + 0.5, L));
    Vec2 dir = q - p;
    const double n = dir.norm();
    dir = n > 1e-9 ? dir * (1.0 / n) : Vec2{1, 0};
    const Vec2 nrm{-dir.y, dir.x};
    const double off = bias + amp1 * std::sin(2 * M_PI * s / L + ph1) +
                       amp2 * std::sin(4 * M_PI * s / L + ph2);
    return p + off * nrm;
  };

  // Coverage window.
  double s0 = 0.0, s1 = L;
  if (noise.coverage < 1.0) {
    const double span = std::max(10.0, noise.coverage * L);
    std::uniform_real_distribution<double> ustart(0.0, std::max(1e-9, L - span));
    s0 = ustart(rng);
    s1 = std::min(L, s0 + span);
  }

  const double wheelbase = 2.7;
  const double v_cruise = 7.0;
  BicycleState state;
  const Vec2 start = offset_point(s0);
  const Vec2 ahead = offset_point(s0 + 1.0);
  state.x = start.x;
  state.y = start.y;
  state.theta = std::atan2(ahead.y - start.y, ahead.x - start.x);
  state.v = v_cruise;

  Trajectory out;
  double s_ref = s0;
  const int max_steps = static_cast<int>(4.0 * (s1 - s0) / (v_cruise * dt)) + 200;
  for (int step = 0; step < max_steps && s_ref < s1 - 0.5; ++step) {
    out.waypoints.vertices.push_back({state.x, state.y});
    const bool inside = state.x > 1.0 && state.x < extent - 1.0 && state.y > 1.0 &&
                        state.y < extent - 1.0;
    out.observable.push_back(inside ? 1 : 0);

    // Pure pursuit toward a lookahead point on the offset reference.
    const double lookahead = 4.0;
    const Vec2 target = offset_point(std::min(s_ref + lookahead, s1));
    const double alpha =
        normalize_angle(std::atan2(target.y - state.y, target.x - state.x) - state.theta);
    BicycleControl u;
    u.delta = std::clamp(std::atan2(2.0 * wheelbase * std::sin(alpha), lookahead), -0.55, 0.55);
    u.a = std::clamp(1.2 * (v_cruise - state.v), -2.8, 2.8);
    state = bicycle_step(state, u, dt, wheelbase);
    s_ref += state.v * dt;
    (void)cum;
  }
  // Ensure the minimum waypoint count even for short coverage windows.
  while (out.waypoints.vertices.size() < 5) {
    const Vec2 & last = out.waypoints.vertices.empty() ? start : out.waypoints.vertices.back();
    out.waypoints.vertices.push_back(last + Vec2{0.5 * std::cos(state.theta),
                                                 0.5 * std::sin(state.theta)});
    out.observable.push_back(1);
  }
  return out;
}

std::vector<CellIndex> rasterize_quad(const std::vector<Vec2>& quad, const GridSpec& grid) {
  double xmin = 1e18, xmax = -1e18, ymin = 1e18, ymax = -1e18;
  for (const auto& v : quad) {
    xmin = std::min(xmin, v.x);
    xmax = std::max(xmax, v.x);
    ymin = std::min(ymin, v.y);
    ymax = std::max(ymax, v.y);
  }
  int cx0, cy0, cx1, cy1;
  grid.locate({xmin, ymin}, cx0, cy0);
  grid.locate({xmax, ymax}, cx1, cy1);
  cx0 = std::max(cx0, 0);
  cy0 = std::max(cy0, 0);
  cx1 = std::min(cx1, grid.width - 1);
  cy1 = std::min(cy1, grid.height - 1);
  auto inside = [&](const Vec2& p) {
    // Convex quad, counterclockwise.
    for (std::size_t i = 0; i < quad.size(); ++i) {
      const Vec2& a = quad[i];
      const Vec2& b = quad[(i + 1) % quad.size()];
      if ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < 0.0) return false;
    }
    return true;
  };
  std::vector<CellIndex> cells;
  for (int y = cy0; y <= cy1; ++y)
    for (int x = cx0; x <= cx1; ++x)
      if (inside(grid.cell_center(x, y))) cells.push_back({x, y});
  return cells;
}

}  // namespace

std::vector<CellIndex> rasterize_convex_polygon(const std::vector<Vec2>& polygon,
                                                const GridSpec& grid) {
  return rasterize_quad(polygon, grid);
}

std::vector<SessionData> simulate_observations(const Scene& scene, const NoiseModel& noise,
                                               int sessions, std::uint64_t seed) {
  if (sessions < 1) throw std::invalid_argument("need at least one session");
  std::vector<SessionData> out(sessions);
  const double E = scene.spec.extent;

  for (int s = 0; s < sessions; ++s) {
    SessionData& session = out[s];
    session.session = s;
    auto rng = make_rng(seed, 0x700 + s);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    const Vec2 session_bias = noise.session_bias_sigma > 0
                                  ? Vec2{noise.session_bias_sigma * gauss(rng),
                                         noise.session_bias_sigma * gauss(rng)}
                                  : Vec2{0, 0};
    const auto& path = scene.lane_paths[s % scene.lane_paths.size()];
    session.trajectory = drive_path(path, 0.2, mix_seed(seed, 0x3000 + s), noise, E);

    const auto& wps = session.trajectory.waypoints.vertices;
    const int frame_stride = 8;
    for (std::size_t i = 0; i + 1 < wps.size(); i += frame_stride) {
      Frame frame;
      const Vec2 dir = wps[i + 1] - wps[i];
      frame.pose = Pose2D(std::atan2(dir.y, dir.x), wps[i]);

      // Forward-facing field of view rectangle.
      const std::vector<Vec2> local{{-5.0, -11.0}, {16.0, -11.0}, {16.0, 11.0}, {-5.0, 11.0}};
      std::vector<Vec2> quad;
      for (const auto& v : local) quad.push_back(frame.pose.apply(v));
      frame.fov_polygon.vertices = quad;
      frame.fov_polygon.vertices.push_back(quad.front());
      frame.observed = rasterize_quad(quad, scene.grid);

      // Clip ground-truth landmarks to the view and perturb.
      for (const auto& gt : scene.landmarks) {
        for (auto& piece :
             clip_to_cells(gt.polyline, frame.observed, scene.grid, 2.0 * scene.grid.resolution)) {
          if (uni(rng) < noise.dropout) continue;
          Detection det;
          det.class_id = gt.class_id;
          det.session = s;
          det.polyline = resample(piece, 0.75);
          if (noise.vertex_sigma > 0 || noise.session_bias_sigma > 0) {
            for (auto& v : det.polyline.vertices) {
              v.x += session_bias.x + noise.vertex_sigma * gauss(rng);
              v.y += session_bias.y + noise.vertex_sigma * gauss(rng);
            }
          }
          frame.detections.push_back(std::move(det));
        }
      }
      // Spurious curves.
      if (noise.outlier_rate > 0 && uni(rng) < noise.outlier_rate) {
        std::uniform_real_distribution<double> ulen(3.0, 9.0);
        std::uniform_real_distribution<double> upos(-4.0, 12.0);
        std::uniform_int_distribution<int> uclass(1, kNumClasses);
        const Vec2 base = frame.pose.apply({upos(rng), upos(rng) * 0.8});
        Polyline2D junk;
        Vec2 p = base;
        Vec2 d{ulen(rng) / 4.0, 0.3 * gauss(rng)};
        for (int k = 0; k < 4; ++k) {
          junk.vertices.push_back(p);
          p = p + d;
          d.y += 0.4 * gauss(rng);
        }
        Detection det;
        det.class_id = uclass(rng);
        det.session = s;
        det.polyline = junk;
        frame.detections.push_back(det);
      }
      session.frames.push_back(std::move(frame));
    }
  }
  return out;
}

}  // namespace csmap
