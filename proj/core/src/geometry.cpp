#include "csmapping/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace csmap {

namespace {

constexpr double kEps = 1e-12;

struct CellHash {
  std::size_t operator()(const CellIndex& c) const {
    return std::hash<std::uint64_t>()(
        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.x)) << 32) |
        static_cast<std::uint32_t>(c.y));
  }
};

// Liang-Barsky clip of segment [a,b] against an axis-aligned rectangle.
bool clip_segment(Vec2& a, Vec2& b, double xmin, double ymin, double xmax, double ymax) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - xmin, xmax - a.x, a.y - ymin, ymax - a.y};
  for (int i = 0; i < 4; ++i) {
    if (std::abs(p[i]) < kEps) {
      if (q[i] < 0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0) {
      if (r > t1) return false;
      t0 = std::max(t0, r);
    } else {
      if (r < t0) return false;
      t1 = std::min(t1, r);
    }
  }
  const Vec2 na{a.x + t0 * dx, a.y + t0 * dy};
  const Vec2 nb{a.x + t1 * dx, a.y + t1 * dy};
  a = na;
  b = nb;
  return true;
}

}  // namespace

void Polyline2D::validate() const {
  if (vertices.size() < 2) throw std::invalid_argument("polyline needs >= 2 vertices");
  for (const auto& v : vertices) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y))
      throw std::invalid_argument("polyline has non-finite coordinate");
  }
  for (std::size_t i = 1; i < vertices.size(); ++i) {
    if ((vertices[i] - vertices[i - 1]).squared_norm() == 0.0)
      throw std::invalid_argument("polyline has consecutive duplicate vertices");
  }
  if (!confidence.empty() && confidence.size() != vertices.size())
    throw std::invalid_argument("confidence size mismatch");
}

double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

Pose2D::Pose2D(double angle_, Vec2 t) : angle(normalize_angle(angle_)), translation(t) {}

Pose2D Pose2D::inverse() const {
  const double c = std::cos(angle), s = std::sin(angle);
  return Pose2D(-angle, {-(c * translation.x + s * translation.y),
                         -(-s * translation.x + c * translation.y)});
}

Pose2D Pose2D::compose(const Pose2D& rhs) const {
  return Pose2D(angle + rhs.angle, apply(rhs.translation));
}

Polyline2D transformed(const Polyline2D& p, const Pose2D& pose) {
  Polyline2D out;
  out.vertices.reserve(p.vertices.size());
  for (const auto& v : p.vertices) out.vertices.push_back(pose.apply(v));
  out.confidence = p.confidence;
  return out;
}

void GridSpec::validate() const {
  if (resolution <= 0.0) throw std::invalid_argument("grid resolution must be > 0");
  if (width < 1 || height < 1) throw std::invalid_argument("grid must be >= 1x1");
  if (channels < 1) throw std::invalid_argument("grid channels must be >= 1");
}

double arc_length(const Polyline2D& p) {
  double len = 0.0;
  for (std::size_t i = 1; i < p.vertices.size(); ++i)
    len += (p.vertices[i] - p.vertices[i - 1]).norm();
  return len;
}

std::vector<double> cumulative_lengths(const Polyline2D& p) {
  std::vector<double> cum(p.vertices.size(), 0.0);
  for (std::size_t i = 1; i < p.vertices.size(); ++i)
    cum[i] = cum[i - 1] + (p.vertices[i] - p.vertices[i - 1]).norm();
  return cum;
}

Vec2 point_at_arclength(const Polyline2D& p, double s) {
  const auto cum = cumulative_lengths(p);
  const double L = cum.back();
  s = std::clamp(s, 0.0, L);
  auto it = std::upper_bound(cum.begin(), cum.end(), s);
  std::size_t i = std::min<std::size_t>(std::distance(cum.begin(), it), cum.size() - 1);
  if (i == 0) return p.vertices.front();
  const double seg = cum[i] - cum[i - 1];
  const double t = seg > 0 ? (s - cum[i - 1]) / seg : 0.0;
  return p.vertices[i - 1] + t * (p.vertices[i] - p.vertices[i - 1]);
}

Polyline2D resample(const Polyline2D& p, double spacing) {
  p.validate();
  if (spacing <= 0.0) throw std::invalid_argument("resample spacing must be > 0");
  const auto cum = cumulative_lengths(p);
  const double L = cum.back();
  Polyline2D out;
  out.vertices.push_back(p.vertices.front());
  for (double s = spacing; s < L - kEps; s += spacing)
    out.vertices.push_back(point_at_arclength(p, s));
  const Vec2 last = p.vertices.back();
  if ((out.vertices.back() - last).squared_norm() > 0.0) out.vertices.push_back(last);
  return out;
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squared_norm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

double point_polyline_distance(const Vec2& p, const Polyline2D& line) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < line.vertices.size(); ++i)
    best = std::min(best, point_segment_distance(p, line.vertices[i - 1], line.vertices[i]));
  return best;
}

double chamfer_truncated(const Polyline2D& a, const Polyline2D& b, double trunc,
                         double sample_spacing) {
  if (trunc <= 0.0) throw std::invalid_argument("chamfer truncation must be > 0");
  if (sample_spacing <= 0.0) throw std::invalid_argument("chamfer spacing must be > 0");
  const Polyline2D ra = resample(a, sample_spacing);
  const Polyline2D rb = resample(b, sample_spacing);
  auto one_sided = [&](const Polyline2D& from, const Polyline2D& to) {
    double acc = 0.0;
    for (const auto& p : from.vertices) {
      double best = trunc * trunc;
      for (const auto& q : to.vertices) best = std::min(best, (p - q).squared_norm());
      acc += std::min(std::sqrt(best), trunc);
    }
    return acc / static_cast<double>(from.vertices.size());
  };
  return 0.5 * (one_sided(ra, rb) + one_sided(rb, ra));
}

std::vector<CellIndex> rasterize_polyline(const Polyline2D& p, const GridSpec& g) {
  p.validate();
  g.validate();
  std::vector<CellIndex> out;
  std::unordered_set<CellIndex, CellHash> seen;
  auto emit = [&](int cx, int cy) {
    if (!g.contains(cx, cy)) return;
    CellIndex c{cx, cy};
    if (seen.insert(c).second) out.push_back(c);
  };

  const double xmin = g.origin.x, ymin = g.origin.y;
  const double xmax = g.origin.x + g.width * g.resolution;
  const double ymax = g.origin.y + g.height * g.resolution;

  for (std::size_t i = 1; i < p.vertices.size(); ++i) {
    Vec2 a = p.vertices[i - 1], b = p.vertices[i];
    if (!clip_segment(a, b, xmin, ymin, xmax, ymax)) continue;

    // Grid-space coordinates (cell units).
    double ax = (a.x - xmin) / g.resolution, ay = (a.y - ymin) / g.resolution;
    double bx = (b.x - xmin) / g.resolution, by = (b.y - ymin) / g.resolution;
    int cx = std::clamp(static_cast<int>(std::floor(ax)), 0, g.width - 1);
    int cy = std::clamp(static_cast<int>(std::floor(ay)), 0, g.height - 1);
    const int ex = std::clamp(static_cast<int>(std::floor(bx)), 0, g.width - 1);
    const int ey = std::clamp(static_cast<int>(std::floor(by)), 0, g.height - 1);
    const double dx = bx - ax, dy = by - ay;
    const int stepx = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
    const int stepy = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
    auto boundary_t = [&](double start, double cell, int step, double d) {
      if (step == 0) return std::numeric_limits<double>::infinity();
      const double edge = cell + (step > 0 ? 1.0 : 0.0);
      return (edge - start) / d;
    };
    double tmx = boundary_t(ax, cx, stepx, dx);
    double tmy = boundary_t(ay, cy, stepy, dy);
    const double tdx = stepx != 0 ? std::abs(1.0 / dx) : std::numeric_limits<double>::infinity();
    const double tdy = stepy != 0 ? std::abs(1.0 / dy) : std::numeric_limits<double>::infinity();

    emit(cx, cy);
    int guard = 4 * (g.width + g.height) + 8;
    while ((cx != ex || cy != ey) && guard-- > 0) {
      if (std::abs(tmx - tmy) < kEps && stepx != 0 && stepy != 0) {
        // Exact corner crossing: include both edge-adjacent cells.
        emit(cx + stepx, cy);
        emit(cx, cy + stepy);
        cx += stepx;
        cy += stepy;
        tmx += tdx;
        tmy += tdy;
      } else if (tmx < tmy) {
        cx += stepx;
        tmx += tdx;
      } else {
        cy += stepy;
        tmy += tdy;
      }
      emit(cx, cy);
    }
  }
  return out;
}

std::vector<double> warp_raster(const std::vector<double>& m, const Pose2D& pose,
                                const GridSpec& g) {
  g.validate();
  if (m.size() != g.cell_count()) throw std::invalid_argument("raster shape mismatch");
  const Pose2D inv = pose.inverse();
  std::vector<double> out(m.size(), 0.0);
  for (int cy = 0; cy < g.height; ++cy) {
    for (int cx = 0; cx < g.width; ++cx) {
      const Vec2 src = inv.apply(g.cell_center(cx, cy));
      const double u = (src.x - g.origin.x) / g.resolution - 0.5;
      const double v = (src.y - g.origin.y) / g.resolution - 0.5;
      const int x0 = static_cast<int>(std::floor(u));
      const int y0 = static_cast<int>(std::floor(v));
      const double fx = u - x0, fy = v - y0;
      double acc = 0.0;
      for (int oy = 0; oy <= 1; ++oy) {
        for (int ox = 0; ox <= 1; ++ox) {
          const int sx = x0 + ox, sy = y0 + oy;
          if (!g.contains(sx, sy)) continue;
          const double w = (ox ? fx : 1.0 - fx) * (oy ? fy : 1.0 - fy);
          acc += w * m[static_cast<std::size_t>(sy) * g.width + sx];
        }
      }
      out[static_cast<std::size_t>(cy) * g.width + cx] = acc;
    }
  }
  return out;
}

std::vector<double> warp_raster_adjoint(const std::vector<double>& grad,
                                        const Pose2D& pose, const GridSpec& g) {
  g.validate();
  if (grad.size() != g.cell_count()) throw std::invalid_argument("raster shape mismatch");
  const Pose2D inv = pose.inverse();
  std::vector<double> out(grad.size(), 0.0);
  for (int cy = 0; cy < g.height; ++cy) {
    for (int cx = 0; cx < g.width; ++cx) {
      const double gval = grad[static_cast<std::size_t>(cy) * g.width + cx];
      if (gval == 0.0) continue;
      const Vec2 src = inv.apply(g.cell_center(cx, cy));
      const double u = (src.x - g.origin.x) / g.resolution - 0.5;
      const double v = (src.y - g.origin.y) / g.resolution - 0.5;
      const int x0 = static_cast<int>(std::floor(u));
      const int y0 = static_cast<int>(std::floor(v));
      const double fx = u - x0, fy = v - y0;
      for (int oy = 0; oy <= 1; ++oy) {
        for (int ox = 0; ox <= 1; ++ox) {
          const int sx = x0 + ox, sy = y0 + oy;
          if (!g.contains(sx, sy)) continue;
          const double w = (ox ? fx : 1.0 - fx) * (oy ? fy : 1.0 - fy);
          out[static_cast<std::size_t>(sy) * g.width + sx] += w * gval;
        }
      }
    }
  }
  return out;
}

}  // namespace csmap
