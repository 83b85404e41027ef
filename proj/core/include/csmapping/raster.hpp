#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "csmapping/geometry.hpp"

namespace csmap {

/// Dense H x W x (C+1) counts; channels 0..C-1 are class hits, channel C is
/// the total observation count N_p. Class counts never exceed N_p.
struct CountTensor {
  GridSpec grid;
  int num_classes = 1;
  std::vector<std::uint32_t> data;  // channel-major planes

  std::size_t plane() const { return grid.cell_count(); }
  std::uint32_t& at(int channel, int y, int x) {
    return data[channel * plane() + static_cast<std::size_t>(y) * grid.width + x];
  }
  std::uint32_t at(int channel, int y, int x) const {
    return data[channel * plane() + static_cast<std::size_t>(y) * grid.width + x];
  }
  std::uint32_t n_p(int y, int x) const { return at(num_classes, y, x); }
};

/// Dense H x W x C stack with a role tag. prob/generated carry values in
/// [0,1]; target/mask are binary.
struct RasterStack {
  enum class Role { prob, target, mask, generated };
  Role role = Role::generated;
  GridSpec grid;
  int channels = 1;
  std::vector<double> data;  // channel-major planes

  static RasterStack zeros(Role role, const GridSpec& grid, int channels);
  std::size_t plane() const { return grid.cell_count(); }
  double& at(int channel, int y, int x) {
    return data[channel * plane() + static_cast<std::size_t>(y) * grid.width + x];
  }
  double at(int channel, int y, int x) const {
    return data[channel * plane() + static_cast<std::size_t>(y) * grid.width + x];
  }
};

/// One session's rasterized contribution: binary per-class cell lists plus
/// the observed region.
struct SessionRaster {
  std::vector<std::vector<CellIndex>> class_cells;  // size = num classes
  std::vector<CellIndex> observed;
};

/// Class channels sum per-session binary hits; N_p counts every pixel visit
/// (foreground or background). Deterministic in input order.
CountTensor build_count_tensor(const std::vector<SessionRaster>& sessions,
                               const GridSpec& grid, int num_classes);

/// count_c / N_p where N_p > 0, else 0.
RasterStack probability_map(const CountTensor& counts);

/// target = prob >= tau_fg. mask keeps target pixels plus observed
/// all-background pixels whose N_p reaches the bg_percentile-th percentile
/// of positive N_p values.
std::pair<RasterStack, RasterStack> build_target_and_mask(const RasterStack& prob,
                                                          const CountTensor& counts,
                                                          double tau_fg,
                                                          double bg_percentile = 75.0);

double masked_l2(const RasterStack& generated, const RasterStack& target,
                 const RasterStack& mask);

/// d(masked_l2)/d(generated) = 2 * mask * (generated - target).
std::vector<double> masked_l2_grad(const RasterStack& generated, const RasterStack& target,
                                   const RasterStack& mask);

struct ClassMetrics {
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool defined = true;  // false when the union is empty
};

struct IouReport {
  std::vector<ClassMetrics> per_class;
  double miou = 0.0;  // mean over defined classes
};

/// Confusion-count ratios restricted to eval_mask; empty-union classes are
/// excluded from the mean.
IouReport iou_metrics(const RasterStack& pred_binary, const RasterStack& gt_binary,
                      const RasterStack& eval_mask);

}  // namespace csmap
