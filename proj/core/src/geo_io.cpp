#include "csmapping/geo_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace csmap {

using nlohmann::json;

void write_csmr(const std::string& path, const RasterStack& raster) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write("CSMR1", 5);
  const std::uint32_t h = raster.grid.height, w = raster.grid.width, c = raster.channels;
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(&c), 4);
  const float res = static_cast<float>(raster.grid.resolution);
  f.write(reinterpret_cast<const char*>(&res), 4);
  const double ox = raster.grid.origin.x, oy = raster.grid.origin.y;
  f.write(reinterpret_cast<const char*>(&ox), 8);
  f.write(reinterpret_cast<const char*>(&oy), 8);
  std::vector<float> plane(raster.data.size());
  for (std::size_t i = 0; i < raster.data.size(); ++i)
    plane[i] = static_cast<float>(raster.data[i]);
  f.write(reinterpret_cast<const char*>(plane.data()),
          static_cast<std::streamsize>(plane.size() * 4));
  if (!f) throw std::runtime_error("write failed: " + path);
}

RasterStack read_csmr(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[5];
  f.read(magic, 5);
  if (!f || std::string(magic, 5) != "CSMR1")
    throw std::runtime_error("bad raster magic in " + path);
  std::uint32_t h = 0, w = 0, c = 0;
  float res = 0;
  double ox = 0, oy = 0;
  f.read(reinterpret_cast<char*>(&h), 4);
  f.read(reinterpret_cast<char*>(&w), 4);
  f.read(reinterpret_cast<char*>(&c), 4);
  f.read(reinterpret_cast<char*>(&res), 4);
  f.read(reinterpret_cast<char*>(&ox), 8);
  f.read(reinterpret_cast<char*>(&oy), 8);
  if (!f || h == 0 || w == 0 || c == 0)
    throw std::runtime_error("corrupt raster header in " + path);
  RasterStack out;
  out.grid.origin = {ox, oy};
  out.grid.resolution = res;
  out.grid.width = static_cast<int>(w);
  out.grid.height = static_cast<int>(h);
  out.grid.channels = static_cast<int>(c);
  out.channels = static_cast<int>(c);
  std::vector<float> plane(static_cast<std::size_t>(h) * w * c);
  f.read(reinterpret_cast<char*>(plane.data()),
         static_cast<std::streamsize>(plane.size() * 4));
  if (!f) throw std::runtime_error("truncated raster file " + path);
  out.data.assign(plane.begin(), plane.end());
  return out;
}

void write_geojson(const std::string& path, const std::vector<GeoFeature>& features) {
  json root;
  root["type"] = "FeatureCollection";
  json list = json::array();
  for (const auto& feat : features) {
    json geom;
    json coords = json::array();
    for (const auto& v : feat.line.vertices) coords.push_back({v.x, v.y});
    if (feat.is_polygon) {
      if (!(feat.line.vertices.front() - feat.line.vertices.back()).squared_norm()) {
        // already closed
      } else {
        coords.push_back({feat.line.vertices.front().x, feat.line.vertices.front().y});
      }
      geom["type"] = "Polygon";
      geom["coordinates"] = json::array({coords});
    } else {
      geom["type"] = "LineString";
      geom["coordinates"] = coords;
    }
    json props;
    if (!feat.kind.empty()) props["kind"] = feat.kind;
    if (feat.class_id >= 0) props["class"] = feat.class_id;
    if (feat.session >= 0) props["session"] = feat.session;
    if (feat.frame >= 0) props["frame"] = feat.frame;
    if (!feat.confidence.empty()) props["confidence"] = feat.confidence;
    if (!feat.observable.empty()) {
      json obs = json::array();
      for (char o : feat.observable) obs.push_back(o ? 1 : 0);
      props["observable"] = obs;
    }
    json f;
    f["type"] = "Feature";
    f["geometry"] = geom;
    f["properties"] = props;
    list.push_back(f);
  }
  root["features"] = list;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << root.dump(1) << "\n";
}

std::vector<GeoFeature> read_geojson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json root;
  try {
    in >> root;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("invalid GeoJSON in " + path + ": " + e.what());
  }
  std::vector<GeoFeature> out;
  for (const auto& f : root.value("features", json::array())) {
    GeoFeature feat;
    const auto& geom = f.at("geometry");
    const std::string type = geom.at("type");
    json coords;
    if (type == "LineString") {
      coords = geom.at("coordinates");
    } else if (type == "Polygon") {
      feat.is_polygon = true;
      coords = geom.at("coordinates").at(0);
    } else {
      continue;  // points etc. are not used by this pipeline
    }
    for (const auto& c : coords)
      feat.line.vertices.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    // Drop consecutive duplicates, and the ring-closing vertex of polygons.
    auto& v = feat.line.vertices;
    v.erase(std::unique(v.begin(), v.end(),
                        [](const Vec2& a, const Vec2& b) {
                          return (a - b).squared_norm() < 1e-20;
                        }),
            v.end());
    if (feat.is_polygon && v.size() > 1 &&
        (v.front() - v.back()).squared_norm() < 1e-20)
      v.pop_back();
    if (f.contains("properties") && f["properties"].is_object()) {
      const auto& props = f["properties"];
      feat.kind = props.value("kind", std::string());
      feat.class_id = props.value("class", -1);
      feat.session = props.value("session", -1);
      feat.frame = props.value("frame", -1);
      if (props.contains("confidence"))
        feat.confidence = props["confidence"].get<std::vector<double>>();
      if (props.contains("observable")) {
        for (const auto& o : props["observable"])
          feat.observable.push_back(o.get<int>() ? 1 : 0);
      }
    }
    out.push_back(std::move(feat));
  }
  return out;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i)
    out << header[i] << (i + 1 < header.size() ? "," : "\n");
  out.precision(10);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << row[i] << (i + 1 < row.size() ? "," : "\n");
  }
}

void write_png(const std::string& path, const RasterStack& raster) {
  const int w = raster.grid.width, h = raster.grid.height;
  std::vector<png_byte> image(static_cast<std::size_t>(w) * h * 3, 0);
  // crossing -> red, divider -> green, boundary -> blue; extra channels cycle.
  for (int c = 0; c < raster.channels; ++c) {
    const int rgb = c % 3;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = std::clamp(raster.at(c, y, x), 0.0, 1.0);
        auto& px = image[((static_cast<std::size_t>(h - 1 - y)) * w + x) * 3 + rgb];
        px = static_cast<png_byte>(std::max<int>(px, static_cast<int>(v * 255.0)));
      }
    }
  }

  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, image.data() + static_cast<std::size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void write_svg_overlay(const std::string& path, double extent,
                       const std::vector<SvgLayer>& layers) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << extent << " "
      << extent << "\">\n";
  out << "<rect width=\"" << extent << "\" height=\"" << extent
      << "\" fill=\"white\"/>\n";
  out.precision(6);
  for (const auto& layer : layers) {
    for (const auto& line : layer.lines) {
      out << "<polyline fill=\"none\" stroke=\"" << layer.color << "\" stroke-width=\""
          << layer.width << "\" points=\"";
      for (const auto& v : line.vertices) out << v.x << "," << (extent - v.y) << " ";
      out << "\"/>\n";
    }
  }
  out << "</svg>\n";
}

void write_svg_plot(const std::string& path, const std::string& title,
                    const std::vector<PlotSeries>& series) {
  const double W = 640, H = 420, ml = 60, mb = 40, mt = 30, mr = 20;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) ymax = ymin + 1;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mb - mt); };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.precision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\">\n<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">"
      << title << "</text>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
      << H - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << ml << "\" y2=\"" << mt
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = xmin + (xmax - xmin) * i / 4;
    const double y = ymin + (ymax - ymin) * i / 4;
    out << "<text x=\"" << px(x) << "\" y=\"" << H - mb + 16
        << "\" text-anchor=\"middle\" font-size=\"10\">" << x << "</text>\n";
    out << "<text x=\"" << ml - 6 << "\" y=\"" << py(y) + 3
        << "\" text-anchor=\"end\" font-size=\"10\">" << y << "</text>\n";
  }
  int li = 0;
  for (const auto& s : series) {
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) out << px(s.x[i]) << "," << py(s.y[i]) << " ";
    out << "\"/>\n";
    out << "<text x=\"" << W - mr - 5 << "\" y=\"" << mt + 14 * (li + 1)
        << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << s.color << "\">" << s.label
        << "</text>\n";
    ++li;
  }
  out << "</svg>\n";
}

}  // namespace csmap
