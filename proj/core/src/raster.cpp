#include "csmapping/raster.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csmap {

RasterStack RasterStack::zeros(Role role, const GridSpec& grid, int channels) {
  RasterStack s;
  s.role = role;
  s.grid = grid;
  s.channels = channels;
  s.data.assign(grid.cell_count() * channels, 0.0);
  return s;
}

CountTensor build_count_tensor(const std::vector<SessionRaster>& sessions,
                               const GridSpec& grid, int num_classes) {
  grid.validate();
  CountTensor counts;
  counts.grid = grid;
  counts.num_classes = num_classes;
  counts.data.assign(grid.cell_count() * (num_classes + 1), 0);

  std::vector<char> visited(grid.cell_count());
  for (const auto& session : sessions) {
    if (static_cast<int>(session.class_cells.size()) != num_classes)
      throw std::invalid_argument("session class channel count mismatch");
    std::fill(visited.begin(), visited.end(), 0);
    auto visit = [&](const CellIndex& c) {
      if (!grid.contains(c.x, c.y)) throw std::invalid_argument("cell outside grid");
      visited[static_cast<std::size_t>(c.y) * grid.width + c.x] = 1;
    };
    for (int c = 0; c < num_classes; ++c) {
      for (const CellIndex& cell : session.class_cells[c]) {
        visit(cell);
        ++counts.at(c, cell.y, cell.x);
      }
    }
    for (const CellIndex& cell : session.observed) visit(cell);
    for (int y = 0; y < grid.height; ++y)
      for (int x = 0; x < grid.width; ++x)
        if (visited[static_cast<std::size_t>(y) * grid.width + x])
          ++counts.at(num_classes, y, x);
  }
  return counts;
}

RasterStack probability_map(const CountTensor& counts) {
  RasterStack prob = RasterStack::zeros(RasterStack::Role::prob, counts.grid,
                                        counts.num_classes);
  for (int y = 0; y < counts.grid.height; ++y) {
    for (int x = 0; x < counts.grid.width; ++x) {
      const std::uint32_t n = counts.n_p(y, x);
      if (n == 0) continue;
      for (int c = 0; c < counts.num_classes; ++c)
        prob.at(c, y, x) = static_cast<double>(counts.at(c, y, x)) / n;
    }
  }
  return prob;
}

std::pair<RasterStack, RasterStack> build_target_and_mask(const RasterStack& prob,
                                                          const CountTensor& counts,
                                                          double tau_fg,
                                                          double bg_percentile) {
  if (tau_fg <= 0.0 || tau_fg >= 1.0)
    throw std::invalid_argument("tau_fg must lie in (0,1)");
  const GridSpec& g = prob.grid;
  RasterStack target = RasterStack::zeros(RasterStack::Role::target, g, prob.channels);
  RasterStack mask = RasterStack::zeros(RasterStack::Role::mask, g, prob.channels);

  // Nearest-rank percentile of the positive N_p values.
  std::vector<std::uint32_t> positive;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      if (counts.n_p(y, x) > 0) positive.push_back(counts.n_p(y, x));
  std::uint32_t np_threshold = 0;
  if (!positive.empty()) {
    std::sort(positive.begin(), positive.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(bg_percentile / 100.0 * positive.size()));
    np_threshold = positive[std::min(positive.size() - 1, std::max<std::size_t>(rank, 1) - 1)];
  }

  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      bool any_fg = false;
      for (int c = 0; c < prob.channels; ++c) {
        if (prob.at(c, y, x) >= tau_fg) {
          target.at(c, y, x) = 1.0;
          any_fg = true;
        }
      }
      const bool observed = counts.n_p(y, x) > 0;
      const bool trusted_bg = observed && !any_fg && counts.n_p(y, x) >= np_threshold;
      for (int c = 0; c < prob.channels; ++c) {
        if (target.at(c, y, x) > 0.0 || trusted_bg) mask.at(c, y, x) = 1.0;
      }
    }
  }
  return {std::move(target), std::move(mask)};
}

double masked_l2(const RasterStack& generated, const RasterStack& target,
                 const RasterStack& mask) {
  if (generated.data.size() != target.data.size() ||
      generated.data.size() != mask.data.size())
    throw std::invalid_argument("masked_l2: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < generated.data.size(); ++i) {
    const double d = generated.data[i] - target.data[i];
    acc += mask.data[i] * d * d;
  }
  return acc;
}

std::vector<double> masked_l2_grad(const RasterStack& generated, const RasterStack& target,
                                   const RasterStack& mask) {
  if (generated.data.size() != target.data.size() ||
      generated.data.size() != mask.data.size())
    throw std::invalid_argument("masked_l2_grad: shape mismatch");
  std::vector<double> grad(generated.data.size());
  for (std::size_t i = 0; i < generated.data.size(); ++i)
    grad[i] = 2.0 * mask.data[i] * (generated.data[i] - target.data[i]);
  return grad;
}

IouReport iou_metrics(const RasterStack& pred_binary, const RasterStack& gt_binary,
                      const RasterStack& eval_mask) {
  if (pred_binary.data.size() != gt_binary.data.size() ||
      pred_binary.data.size() != eval_mask.data.size())
    throw std::invalid_argument("iou_metrics: shape mismatch");
  IouReport report;
  double miou_sum = 0.0;
  int defined = 0;
  const std::size_t plane = pred_binary.plane();
  for (int c = 0; c < pred_binary.channels; ++c) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = c * plane + i;
      if (eval_mask.data[k] == 0.0) continue;
      const bool p = pred_binary.data[k] > 0.5;
      const bool t = gt_binary.data[k] > 0.5;
      if (p && t) ++tp;
      else if (p) ++fp;
      else if (t) ++fn;
    }
    ClassMetrics m;
    if (tp + fp + fn == 0) {
      m.defined = false;
    } else {
      m.iou = static_cast<double>(tp) / (tp + fp + fn);
      m.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
      m.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
      miou_sum += m.iou;
      ++defined;
    }
    report.per_class.push_back(m);
  }
  report.miou = defined > 0 ? miou_sum / defined : 0.0;
  return report;
}

}  // namespace csmap
