#include <filesystem>
#include <fstream>

#include "csmapping/geo_io.hpp"
#include "csmapping/rng.hpp"
#include "doctest.h"

using namespace csmap;

namespace {

std::filesystem::path tmp(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("csmr raster round trip") {
  GridSpec g;
  g.origin = {-3.5, 12.25};
  g.resolution = 0.25;
  g.width = 10;
  g.height = 6;
  auto raster = RasterStack::zeros(RasterStack::Role::prob, g, 3);
  auto rng = make_rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : raster.data) v = u(rng);

  const auto path = tmp("csmap_test.csmr");
  write_csmr(path.string(), raster);
  const auto back = read_csmr(path.string());
  CHECK(back.grid.width == 10);
  CHECK(back.grid.height == 6);
  CHECK(back.channels == 3);
  CHECK(back.grid.origin.x == doctest::Approx(-3.5));
  CHECK(back.grid.resolution == doctest::Approx(0.25));
  REQUIRE(back.data.size() == raster.data.size());
  for (std::size_t i = 0; i < raster.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(raster.data[i]).epsilon(1e-7));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(read_csmr("/nonexistent.csmr"), std::runtime_error);

  // Corrupt magic.
  const auto bad = tmp("csmap_bad.csmr");
  std::ofstream(bad) << "NOTAMAGIC";
  CHECK_THROWS_AS(read_csmr(bad.string()), std::runtime_error);
  std::filesystem::remove(bad);
}

TEST_CASE("geojson round trip preserves structure and properties") {
  std::vector<GeoFeature> feats;
  GeoFeature line;
  line.line = Polyline2D{{0, 0}, {5.5, 1.25}, {9, -2}};
  line.kind = "detection";
  line.class_id = 2;
  line.session = 7;
  line.frame = 3;
  line.confidence = {0.9, 0.8, 0.7};
  feats.push_back(line);

  GeoFeature poly;
  poly.line = Polyline2D{{0, 0}, {4, 0}, {4, 4}, {0, 4}};
  poly.is_polygon = true;
  poly.kind = "fov";
  feats.push_back(poly);

  GeoFeature traj;
  traj.line = Polyline2D{{0, 0}, {1, 0}, {2, 0.2}, {3, 0.3}, {4, 0.2}};
  traj.kind = "trajectory";
  traj.observable = {1, 1, 0, 1, 1};
  feats.push_back(traj);

  const auto path = tmp("csmap_test.geojson");
  write_geojson(path.string(), feats);
  const auto back = read_geojson(path.string());
  REQUIRE(back.size() == 3);
  CHECK(back[0].kind == "detection");
  CHECK(back[0].class_id == 2);
  CHECK(back[0].session == 7);
  CHECK(back[0].frame == 3);
  REQUIRE(back[0].confidence.size() == 3);
  CHECK(back[0].confidence[1] == doctest::Approx(0.8));
  REQUIRE(back[0].line.size() == 3);
  CHECK(back[0].line.vertices[1].x == doctest::Approx(5.5));
  CHECK(back[1].is_polygon);
  CHECK(back[1].line.size() == 4);  // closing vertex deduplicated
  REQUIRE(back[2].observable.size() == 5);
  CHECK(back[2].observable[2] == 0);
  std::filesystem::remove(path);

  const auto bad = tmp("csmap_bad.geojson");
  std::ofstream(bad) << "{not json";
  CHECK_THROWS_AS(read_geojson(bad.string()), std::runtime_error);
  std::filesystem::remove(bad);
}

TEST_CASE("csv, png and svg writers produce parseable files") {
  const auto csv = tmp("csmap_test.csv");
  write_csv(csv.string(), {"a", "b"}, {{1.5, 2.5}, {3.0, 4.0}});
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "a,b");
  std::getline(in, line);
  CHECK(line == "1.5,2.5");
  std::filesystem::remove(csv);

  GridSpec g;
  g.resolution = 0.5;
  g.width = g.height = 16;
  auto raster = RasterStack::zeros(RasterStack::Role::target, g, 3);
  raster.at(0, 3, 3) = 1.0;
  raster.at(2, 8, 8) = 1.0;
  const auto png = tmp("csmap_test.png");
  write_png(png.string(), raster);
  std::ifstream pf(png, std::ios::binary);
  char sig[8];
  pf.read(sig, 8);
  CHECK(static_cast<unsigned char>(sig[1]) == 'P');
  CHECK(std::filesystem::file_size(png) > 60);
  std::filesystem::remove(png);

  const auto svg = tmp("csmap_test.svg");
  write_svg_overlay(svg.string(), 20.0,
                    {{{Polyline2D{{0, 0}, {10, 10}}}, "red", 0.2}});
  std::ifstream sf(svg);
  std::string all((std::istreambuf_iterator<char>(sf)), std::istreambuf_iterator<char>());
  CHECK(all.find("<svg") != std::string::npos);
  CHECK(all.find("polyline") != std::string::npos);
  std::filesystem::remove(svg);

  const auto plot = tmp("csmap_plot.svg");
  write_svg_plot(plot.string(), "sweep", {{"iou", "steelblue", {1, 2, 3}, {0.5, 0.7, 0.8}}});
  CHECK(std::filesystem::file_size(plot) > 200);
  std::filesystem::remove(plot);
}
