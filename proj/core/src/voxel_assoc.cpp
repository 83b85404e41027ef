#include "csmapping/voxel_assoc.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>
#include <unordered_set>

namespace csmap {

VoxelObservationMap::VoxelObservationMap(GridSpec grid, int num_classes)
    : grid_(grid), num_classes_(num_classes) {
  grid_.validate();
  if (num_classes < 1) throw std::invalid_argument("need at least one class");
}

std::uint64_t VoxelObservationMap::key(const CellIndex& c) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.y)) << 32) |
         static_cast<std::uint32_t>(c.x);
}

CellIndex VoxelObservationMap::unkey(std::uint64_t k) {
  return {static_cast<int>(k & 0xffffffffu), static_cast<int>(k >> 32)};
}

void VoxelObservationMap::accumulate_frame(const std::vector<Detection>& detections,
                                           const std::vector<CellIndex>& observed_region) {
  std::unordered_set<std::uint64_t> foreground;
  for (const auto& det : detections) {
    if (det.class_id < 1 || det.class_id > num_classes_)
      throw std::invalid_argument("detection class out of range");
    for (const CellIndex& c : rasterize_polyline(det.polyline, grid_)) {
      auto& counts = cells_[key(c)];
      if (counts.empty()) counts.assign(num_classes_ + 1, 0);
      ++counts[det.class_id];
      foreground.insert(key(c));
    }
  }
  for (const CellIndex& c : observed_region) {
    if (!grid_.contains(c.x, c.y)) continue;
    const std::uint64_t k = key(c);
    if (foreground.count(k)) continue;
    auto& counts = cells_[k];
    if (counts.empty()) counts.assign(num_classes_ + 1, 0);
    ++counts[0];
  }
}

std::uint32_t VoxelObservationMap::count(const CellIndex& c, int channel) const {
  auto it = cells_.find(key(c));
  if (it == cells_.end()) return 0;
  return it->second[channel];
}

std::uint64_t VoxelObservationMap::total_foreground() const {
  std::uint64_t acc = 0;
  for (const auto& [k, counts] : cells_)
    for (int c = 1; c <= num_classes_; ++c) acc += counts[c];
  return acc;
}

std::uint64_t VoxelObservationMap::total_background() const {
  std::uint64_t acc = 0;
  for (const auto& [k, counts] : cells_) acc += counts[0];
  return acc;
}

std::vector<std::vector<CellIndex>> VoxelObservationMap::binarize(double alpha) const {
  if (alpha <= 0.0 || alpha >= 1.0)
    throw std::invalid_argument("binarize: alpha must be in (0,1)");
  std::vector<std::vector<CellIndex>> out(num_classes_);
  for (const auto& [k, counts] : cells_) {
    const double bg = counts[0];
    for (int c = 1; c <= num_classes_; ++c) {
      if (counts[c] > alpha * bg) out[c - 1].push_back(unkey(k));
    }
  }
  return out;
}

std::vector<LandmarkInstance> extract_instances(
    const std::vector<std::vector<CellIndex>>& per_class_cells, const GridSpec& grid,
    int min_cells) {
  std::vector<LandmarkInstance> out;
  for (std::size_t ci = 0; ci < per_class_cells.size(); ++ci) {
    std::unordered_set<std::uint64_t> remaining;
    for (const auto& c : per_class_cells[ci]) remaining.insert(VoxelObservationMap::key(c));
    // Deterministic seed order.
    std::vector<std::uint64_t> seeds(remaining.begin(), remaining.end());
    std::sort(seeds.begin(), seeds.end());
    for (std::uint64_t seed : seeds) {
      if (!remaining.count(seed)) continue;
      LandmarkInstance inst;
      inst.class_id = static_cast<int>(ci) + 1;
      std::queue<std::uint64_t> frontier;
      frontier.push(seed);
      remaining.erase(seed);
      while (!frontier.empty()) {
        const CellIndex c = VoxelObservationMap::unkey(frontier.front());
        frontier.pop();
        inst.cells.push_back(c);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const CellIndex n{c.x + dx, c.y + dy};
            if (!grid.contains(n.x, n.y)) continue;
            const std::uint64_t nk = VoxelObservationMap::key(n);
            if (remaining.erase(nk)) frontier.push(nk);
          }
        }
      }
      if (static_cast<int>(inst.cells.size()) < min_cells) continue;
      std::sort(inst.cells.begin(), inst.cells.end(), [](const CellIndex& a, const CellIndex& b) {
        return VoxelObservationMap::key(a) < VoxelObservationMap::key(b);
      });
      out.push_back(std::move(inst));
    }
  }
  return out;
}

std::vector<Polyline2D> clip_to_cells(const Polyline2D& line,
                                      const std::vector<CellIndex>& cell_set,
                                      const GridSpec& grid, double min_length) {
  line.validate();
  if (min_length < 0.0) min_length = 2.0 * grid.resolution;
  std::unordered_set<std::uint64_t> cells;
  for (const auto& c : cell_set) cells.insert(VoxelObservationMap::key(c));
  auto inside = [&](const Vec2& p) {
    int cx, cy;
    grid.locate(p, cx, cy);
    if (!grid.contains(cx, cy)) return false;
    return cells.count(VoxelObservationMap::key({cx, cy})) > 0;
  };

  std::vector<Polyline2D> pieces;
  Polyline2D current;
  auto push_vertex = [&](const Vec2& p) {
    if (!current.vertices.empty() && (p - current.vertices.back()).squared_norm() < 1e-18)
      return;
    current.vertices.push_back(p);
  };
  auto flush = [&]() {
    if (current.vertices.size() >= 2 && arc_length(current) >= min_length)
      pieces.push_back(current);
    current.vertices.clear();
  };

  for (std::size_t i = 1; i < line.vertices.size(); ++i) {
    const Vec2 a = line.vertices[i - 1], b = line.vertices[i];
    // Candidate transition parameters: every grid-line crossing.
    std::vector<double> ts{0.0, 1.0};
    const double dx = b.x - a.x, dy = b.y - a.y;
    if (std::abs(dx) > 1e-15) {
      const double k0 = (a.x - grid.origin.x) / grid.resolution;
      const double k1 = (b.x - grid.origin.x) / grid.resolution;
      for (int k = static_cast<int>(std::ceil(std::min(k0, k1)));
           k <= static_cast<int>(std::floor(std::max(k0, k1))); ++k) {
        const double t = (grid.origin.x + k * grid.resolution - a.x) / dx;
        if (t > 0.0 && t < 1.0) ts.push_back(t);
      }
    }
    if (std::abs(dy) > 1e-15) {
      const double k0 = (a.y - grid.origin.y) / grid.resolution;
      const double k1 = (b.y - grid.origin.y) / grid.resolution;
      for (int k = static_cast<int>(std::ceil(std::min(k0, k1)));
           k <= static_cast<int>(std::floor(std::max(k0, k1))); ++k) {
        const double t = (grid.origin.y + k * grid.resolution - a.y) / dy;
        if (t > 0.0 && t < 1.0) ts.push_back(t);
      }
    }
    std::sort(ts.begin(), ts.end());
    for (std::size_t s = 0; s + 1 < ts.size(); ++s) {
      if (ts[s + 1] - ts[s] < 1e-12) continue;
      const double tm = 0.5 * (ts[s] + ts[s + 1]);
      const Vec2 pm{a.x + tm * dx, a.y + tm * dy};
      const Vec2 p0{a.x + ts[s] * dx, a.y + ts[s] * dy};
      const Vec2 p1{a.x + ts[s + 1] * dx, a.y + ts[s + 1] * dy};
      if (inside(pm)) {
        push_vertex(p0);
        push_vertex(p1);
      } else {
        flush();
      }
    }
  }
  flush();
  return pieces;
}

void clip_observations(LandmarkInstance& instance, const std::vector<Detection>& obs,
                       const GridSpec& grid) {
  for (const auto& det : obs) {
    if (det.class_id != instance.class_id) continue;
    for (auto& piece : clip_to_cells(det.polyline, instance.cells, grid)) {
      Detection clipped;
      clipped.polyline = std::move(piece);
      clipped.class_id = det.class_id;
      clipped.session = det.session;
      instance.observations.push_back(std::move(clipped));
    }
  }
}

}  // namespace csmap
