#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace csmap {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  double squared_norm() const { return x * x + y * y; }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

/// Ordered 2-D vertex chain in meters. At least two vertices, finite
/// coordinates, no consecutive duplicates. Optional per-vertex confidence.
struct Polyline2D {
  std::vector<Vec2> vertices;
  std::vector<double> confidence;  // empty, or one value in [0,1] per vertex

  Polyline2D() = default;
  explicit Polyline2D(std::vector<Vec2> v) : vertices(std::move(v)) { validate(); }
  Polyline2D(std::initializer_list<Vec2> v) : vertices(v) { validate(); }

  void validate() const;
  std::size_t size() const { return vertices.size(); }
};

/// Planar rigid transform: rotation then translation. Angle kept in (-pi, pi].
struct Pose2D {
  double angle = 0.0;
  Vec2 translation;

  Pose2D() = default;
  Pose2D(double angle_, Vec2 t);

  Vec2 apply(const Vec2& p) const {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * p.x - s * p.y + translation.x, s * p.x + c * p.y + translation.y};
  }
  Pose2D inverse() const;
  Pose2D compose(const Pose2D& rhs) const;  // this ∘ rhs
};

Polyline2D transformed(const Polyline2D& p, const Pose2D& pose);

/// Raster frame: world origin of the (0,0) cell corner, square cells.
struct GridSpec {
  Vec2 origin;
  double resolution = 1.0;  // meters per cell
  int width = 1;            // cells in x
  int height = 1;           // cells in y
  int channels = 1;

  void validate() const;
  std::size_t cell_count() const { return static_cast<std::size_t>(width) * height; }
  Vec2 cell_center(int cx, int cy) const {
    return {origin.x + (cx + 0.5) * resolution, origin.y + (cy + 0.5) * resolution};
  }
  bool contains(int cx, int cy) const {
    return cx >= 0 && cx < width && cy >= 0 && cy < height;
  }
  // Cell containing a world point; may be out of range.
  void locate(const Vec2& p, int& cx, int& cy) const {
    cx = static_cast<int>(std::floor((p.x - origin.x) / resolution));
    cy = static_cast<int>(std::floor((p.y - origin.y) / resolution));
  }
};

struct CellIndex {
  int x = 0;
  int y = 0;
  bool operator==(const CellIndex&) const = default;
};

double arc_length(const Polyline2D& p);

/// Per-vertex cumulative arc length, front() == 0, back() == arc_length.
std::vector<double> cumulative_lengths(const Polyline2D& p);

/// Point at arc-length position s (clamped to [0, L]).
Vec2 point_at_arclength(const Polyline2D& p, double s);

/// Walks the polyline at the requested spacing; endpoints preserved and all
/// output vertices lie on the input. Consecutive arc spacing never exceeds
/// `spacing`.
Polyline2D resample(const Polyline2D& p, double spacing);

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b);
double point_polyline_distance(const Vec2& p, const Polyline2D& line);

/// Symmetric mean truncated nearest-neighbor distance over points resampled
/// from both curves. Discretization error is bounded by sample_spacing / 2.
double chamfer_truncated(const Polyline2D& a, const Polyline2D& b, double trunc,
                         double sample_spacing);

/// Supercover traversal: every cell the polyline passes through, in traversal
/// order, each exactly once. Conservative at corner crossings (both
/// edge-adjacent cells are included), so thin curves never skip cells.
std::vector<CellIndex> rasterize_polyline(const Polyline2D& p, const GridSpec& g);

/// Bilinear resampling of a single-channel raster under a rigid pose
/// (content transformed by `pose`); out-of-bounds source reads as 0.
std::vector<double> warp_raster(const std::vector<double>& m, const Pose2D& pose,
                                const GridSpec& g);

/// Adjoint of warp_raster as a linear operator on the raster values:
/// returns Wᵀ·g for gradient backpropagation through the warp.
std::vector<double> warp_raster_adjoint(const std::vector<double>& grad,
                                        const Pose2D& pose, const GridSpec& g);

double normalize_angle(double a);

}  // namespace csmap
