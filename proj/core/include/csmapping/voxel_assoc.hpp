#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "csmapping/geometry.hpp"

namespace csmap {

/// One vectorized detection with its semantic class (1..C).
struct Detection {
  Polyline2D polyline;
  int class_id = 1;
  int session = 0;
};

/// Hashed voxel observation map with C foreground channels plus background.
/// Background counts every observed-but-empty cell visit.
class VoxelObservationMap {
 public:
  VoxelObservationMap(GridSpec grid, int num_classes);

  const GridSpec& grid() const { return grid_; }
  int num_classes() const { return num_classes_; }

  /// Rasterizes each detection into its class channel and increments the
  /// background channel for observed cells without a foreground hit this
  /// frame. Classes outside 1..C throw.
  void accumulate_frame(const std::vector<Detection>& detections,
                        const std::vector<CellIndex>& observed_region);

  std::uint32_t count(const CellIndex& c, int channel) const;  // channel 0 = background
  std::uint64_t total_foreground() const;
  std::uint64_t total_background() const;

  /// Cells whose class count strictly exceeds alpha times the background
  /// count; channels are independent. alpha must lie in (0, 1).
  std::vector<std::vector<CellIndex>> binarize(double alpha) const;

  /// Deterministic iteration (row-major cell order).
  const std::map<std::uint64_t, std::vector<std::uint32_t>>& cells() const { return cells_; }

  static std::uint64_t key(const CellIndex& c);
  static CellIndex unkey(std::uint64_t k);

 private:
  GridSpec grid_;
  int num_classes_;
  std::map<std::uint64_t, std::vector<std::uint32_t>> cells_;
};

struct LandmarkInstance {
  int class_id = 1;
  std::vector<CellIndex> cells;          // one 8-connected component
  std::vector<Detection> observations;   // clipped in-region segments
};

/// 8-connected components per class; components below min_cells are dropped.
std::vector<LandmarkInstance> extract_instances(
    const std::vector<std::vector<CellIndex>>& per_class_cells, const GridSpec& grid,
    int min_cells = 4);

/// Splits a polyline wherever it leaves the instance cell set; keeps maximal
/// in-region pieces of arc length >= min_length (default 2 x resolution).
/// Output vertices are input vertices plus boundary crossings.
std::vector<Polyline2D> clip_to_cells(const Polyline2D& line,
                                      const std::vector<CellIndex>& cell_set,
                                      const GridSpec& grid, double min_length = -1.0);

/// Clips every matching-class observation to the instance's cells and stores
/// the pieces on the instance.
void clip_observations(LandmarkInstance& instance, const std::vector<Detection>& obs,
                       const GridSpec& grid);

}  // namespace csmap
