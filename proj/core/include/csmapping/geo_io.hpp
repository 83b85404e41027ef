#pragma once

#include <string>
#include <vector>

#include "csmapping/geometry.hpp"
#include "csmapping/raster.hpp"

namespace csmap {

/// CSMR1 raster container: magic "CSMR1", little-endian u32 height, width,
/// channels, f32 resolution, f64 origin x/y, then channel-major planes of
/// row-major f32 data. Preserves float probability maps exactly enough for
/// reproducible pipelines (values are stored as f32 by design).
void write_csmr(const std::string& path, const RasterStack& raster);
RasterStack read_csmr(const std::string& path);

/// One GeoJSON feature: LineString, or Polygon when is_polygon (the ring is
/// closed on write). Optional attributes serialize as properties.
struct GeoFeature {
  Polyline2D line;
  bool is_polygon = false;
  std::string kind;          // landmark | detection | fov | trajectory | centerline | curve
  int class_id = -1;
  int session = -1;
  int frame = -1;
  std::vector<double> confidence;  // per-vertex
  std::vector<char> observable;    // per-vertex (trajectories)
};

void write_geojson(const std::string& path, const std::vector<GeoFeature>& features);
std::vector<GeoFeature> read_geojson(const std::string& path);

/// Plain CSV with a header row.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

/// RGB PNG of a class raster; channels follow the crossing-red,
/// divider-green, boundary-blue convention.
void write_png(const std::string& path, const RasterStack& raster);

/// Vector overlay: polyline layers in scene coordinates.
struct SvgLayer {
  std::vector<Polyline2D> lines;
  std::string color = "black";
  double width = 0.15;
};
void write_svg_overlay(const std::string& path, double extent,
                       const std::vector<SvgLayer>& layers);

/// Line plot with one polyline per series; used by the benchmark sweeps.
struct PlotSeries {
  std::string label;
  std::string color = "steelblue";
  std::vector<double> x;
  std::vector<double> y;
};
void write_svg_plot(const std::string& path, const std::string& title,
                    const std::vector<PlotSeries>& series);

}  // namespace csmap
