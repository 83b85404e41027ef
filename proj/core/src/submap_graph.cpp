#include "csmapping/submap_graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace csmap {

namespace {

OptimizeConfig node_opt(const GraphConfig& cfg) {
  OptimizeConfig opt = cfg.opt;
  opt.schedule = cfg.schedule;
  return opt;
}

// Channel-broadcast of a single-channel mask.
RasterStack broadcast_mask(const std::vector<double>& mask, const GridSpec& grid,
                           int channels) {
  RasterStack out = RasterStack::zeros(RasterStack::Role::mask, grid, channels);
  for (int c = 0; c < channels; ++c)
    std::copy(mask.begin(), mask.end(), out.data.begin() + c * grid.cell_count());
  return out;
}

RasterStack warp_stack(const RasterStack& m, const Pose2D& pose, const GridSpec& grid) {
  RasterStack out = m;
  const std::size_t plane = grid.cell_count();
  for (int c = 0; c < m.channels; ++c) {
    std::vector<double> channel(m.data.begin() + c * plane, m.data.begin() + (c + 1) * plane);
    const std::vector<double> warped = warp_raster(channel, pose, grid);
    std::copy(warped.begin(), warped.end(), out.data.begin() + c * plane);
  }
  return out;
}

std::vector<double> warp_mask(const std::vector<double>& mask, const Pose2D& pose,
                              const GridSpec& grid) {
  std::vector<double> warped = warp_raster(mask, pose, grid);
  for (auto& v : warped) v = v >= 0.5 ? 1.0 : 0.0;  // binary masks re-thresholded
  return warped;
}

// One directional consistency term: || M_to - warp(M_from) ||^2 on the mask.
double directional_residual(const RasterStack& map_from, const RasterStack& map_to,
                            const Pose2D& pose, const std::vector<double>& mask,
                            const GridSpec& grid) {
  const RasterStack warped = warp_stack(map_from, pose, grid);
  const RasterStack m = broadcast_mask(mask, grid, map_to.channels);
  return masked_l2(map_to, warped, m);
}

}  // namespace

ConsistencyEdge make_edge(const SubmapNode& a, const SubmapNode& b, const GridSpec& grid,
                          double min_overlap_frac) {
  ConsistencyEdge edge;
  edge.i = a.id;
  edge.j = b.id;
  edge.relative = b.pose.inverse().compose(a.pose);
  edge.overlap.assign(grid.cell_count(), 0.0);
  const Pose2D to_a = edge.relative.inverse();
  std::size_t count = 0;
  const double xmax = grid.origin.x + grid.width * grid.resolution;
  const double ymax = grid.origin.y + grid.height * grid.resolution;
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      const Vec2 q = to_a.apply(grid.cell_center(x, y));
      if (q.x >= grid.origin.x && q.x < xmax && q.y >= grid.origin.y && q.y < ymax) {
        edge.overlap[static_cast<std::size_t>(y) * grid.width + x] = 1.0;
        ++count;
      }
    }
  }
  if (count < min_overlap_frac * grid.cell_count())
    throw std::invalid_argument("make_edge: overlap below the minimum fraction");
  return edge;
}

RasterStack node_map(const SubmapNode& node, const GraphConfig& cfg) {
  return eval_map(node.basis, *cfg.pred, cfg.codec, node_opt(cfg), node.w, false).map;
}

double consistency_residual(const RasterStack& map_i, const RasterStack& map_j,
                            const ConsistencyEdge& edge, const GridSpec& grid,
                            bool symmetric) {
  double count = 0.0;
  for (double v : edge.overlap) count += v;
  if (count == 0.0) throw std::invalid_argument("consistency_residual: empty overlap");
  const double fwd = directional_residual(map_i, map_j, edge.relative, edge.overlap, grid);
  if (!symmetric) return fwd;
  const Pose2D inv = edge.relative.inverse();
  const std::vector<double> overlap_i = warp_mask(edge.overlap, inv, grid);
  const double bwd = directional_residual(map_j, map_i, inv, overlap_i, grid);
  return 0.5 * (fwd + bwd);
}

double observation_residual(const SubmapNode& node, const RasterStack& map) {
  if (!node.has_observations) return 0.0;
  return masked_l2(map, node.target, node.mask);
}

double total_objective(const std::vector<SubmapNode>& nodes,
                       const std::vector<ConsistencyEdge>& edges, const GraphConfig& cfg,
                       const std::vector<RasterStack>& maps) {
  std::map<int, std::size_t> index;
  for (std::size_t k = 0; k < nodes.size(); ++k) index[nodes[k].id] = k;
  double acc = 0.0;
  for (const auto& e : edges)
    acc += cfg.consistency_weight * consistency_residual(maps[index.at(e.i)],
                                                         maps[index.at(e.j)], e,
                                                         cfg.codec.full,
                                                         cfg.symmetric_consistency);
  for (std::size_t k = 0; k < nodes.size(); ++k)
    acc += cfg.observation_weight * observation_residual(nodes[k], maps[k]);
  return acc;
}

namespace {

// Loss and weight gradient of one node's incident factors, with every other
// node's map held fixed.
double node_incident(const SubmapNode& node, const std::vector<double>& w,
                     const std::vector<ConsistencyEdge>& edges,
                     const std::vector<RasterStack>& maps,
                     const std::map<int, std::size_t>& index, const GraphConfig& cfg,
                     std::vector<double>* grad) {
  const OptimizeConfig opt = node_opt(cfg);
  const GridSpec& grid = cfg.codec.full;
  const MapEval eval = eval_map(node.basis, *cfg.pred, cfg.codec, opt, w, grad != nullptr);
  const std::size_t plane = grid.cell_count();
  const int C = eval.map.channels;

  double loss = 0.0;
  std::vector<double> gmap;
  if (grad) gmap.assign(eval.map.data.size(), 0.0);

  if (node.has_observations) {
    const double r = masked_l2(eval.map, node.target, node.mask);
    loss += cfg.observation_weight * r;
    if (grad) {
      for (std::size_t i = 0; i < gmap.size(); ++i)
        gmap[i] += cfg.observation_weight * 2.0 * node.mask.data[i] *
                   (eval.map.data[i] - node.target.data[i]);
    }
  }

  const double half = cfg.symmetric_consistency ? 0.5 : 1.0;
  for (const auto& e : edges) {
    if (e.i != node.id && e.j != node.id) continue;
    const bool is_source = e.i == node.id;
    const std::size_t other = index.at(is_source ? e.j : e.i);
    const RasterStack& other_map = maps[other];

    // Directional terms touching this node. With the symmetric variant both
    // directions apply at half weight; otherwise only i -> j.
    struct Term {
      Pose2D pose;                   // from-frame -> to-frame
      const std::vector<double>* mask;
      bool node_is_target;
    };
    std::vector<Term> terms;
    std::vector<double> overlap_i;  // kept alive for the backward term
    if (cfg.symmetric_consistency) {
      overlap_i = warp_mask(e.overlap, e.relative.inverse(), grid);
      terms.push_back({e.relative, &e.overlap, !is_source});
      terms.push_back({e.relative.inverse(), &overlap_i, is_source});
    } else {
      terms.push_back({e.relative, &e.overlap, !is_source});
    }

    for (const auto& term : terms) {
      const double wgt = cfg.consistency_weight * half;
      if (term.node_is_target) {
        const RasterStack warped = warp_stack(other_map, term.pose, grid);
        for (int c = 0; c < C; ++c) {
          for (std::size_t p = 0; p < plane; ++p) {
            const double m = (*term.mask)[p];
            if (m == 0.0) continue;
            const std::size_t k = c * plane + p;
            const double diff = eval.map.data[k] - warped.data[k];
            loss += wgt * m * diff * diff;
            if (grad) gmap[k] += wgt * 2.0 * m * diff;
          }
        }
      } else {
        const RasterStack warped = warp_stack(eval.map, term.pose, grid);
        std::vector<double> gch(plane);
        for (int c = 0; c < C; ++c) {
          std::fill(gch.begin(), gch.end(), 0.0);
          for (std::size_t p = 0; p < plane; ++p) {
            const double m = (*term.mask)[p];
            if (m == 0.0) continue;
            const std::size_t k = c * plane + p;
            const double diff = other_map.data[k] - warped.data[k];
            loss += wgt * m * diff * diff;
            if (grad) gch[p] = -wgt * 2.0 * m * diff;
          }
          if (grad) {
            const std::vector<double> back = warp_raster_adjoint(gch, term.pose, grid);
            for (std::size_t p = 0; p < plane; ++p) gmap[c * plane + p] += back[p];
          }
        }
      }
    }
  }

  if (grad) *grad = pullback_to_weights(node.basis, *cfg.pred, cfg.codec, opt, eval, gmap);
  return loss;
}

}  // namespace

void propagate_sequential(std::vector<SubmapNode>& chain,
                          const std::vector<ConsistencyEdge>& edges, const GraphConfig& cfg) {
  if (chain.empty()) return;
  if (!cfg.schedule || !cfg.pred) throw std::invalid_argument("graph config incomplete");
  const OptimizeConfig opt = node_opt(cfg);
  const GridSpec& grid = cfg.codec.full;

  std::map<int, std::size_t> index;
  for (std::size_t k = 0; k < chain.size(); ++k) index[chain[k].id] = k;
  std::map<std::pair<int, int>, const ConsistencyEdge*> by_pair;
  for (const auto& e : edges) by_pair[{e.i, e.j}] = &e;

  if (!chain[0].has_observations)
    throw std::invalid_argument("propagate_sequential: first node needs observations");
  const OptimizeResult first =
      optimize(chain[0].basis, *cfg.pred, cfg.codec, chain[0].target, chain[0].mask, opt);
  chain[0].w = first.w;
  RasterStack prev_map = first.map;

  std::vector<int> invert_steps = cfg.invert_steps;
  if (invert_steps.empty()) {
    for (int k = 1; k <= 5; ++k) invert_steps.push_back(cfg.schedule->T * k / 5);
  }

  for (std::size_t k = 1; k < chain.size(); ++k) {
    SubmapNode& node = chain[k];
    // Directed edge prev -> node (build the reversed view when needed).
    const ConsistencyEdge* e = nullptr;
    ConsistencyEdge reversed;
    auto it = by_pair.find({chain[k - 1].id, node.id});
    if (it != by_pair.end()) {
      e = it->second;
    } else {
      it = by_pair.find({node.id, chain[k - 1].id});
      if (it == by_pair.end())
        throw std::invalid_argument("propagate_sequential: missing chain edge");
      reversed = *it->second;
      std::swap(reversed.i, reversed.j);
      reversed.relative = it->second->relative.inverse();
      reversed.overlap = warp_mask(it->second->overlap, reversed.relative, grid);
      e = &reversed;
    }

    // Composite initialization: own observations where present, the warped
    // previous map on the overlap, maximum uncertainty elsewhere.
    const RasterStack warped_prev = warp_stack(prev_map, e->relative, grid);
    RasterStack init = RasterStack::zeros(RasterStack::Role::generated, grid,
                                          cfg.codec.channels);
    const std::size_t plane = grid.cell_count();
    for (int c = 0; c < cfg.codec.channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t kk = c * plane + p;
        if (node.has_observations && node.mask.data[kk] > 0.0)
          init.data[kk] = node.target.data[kk];
        else if (e->overlap[p] > 0.0)
          init.data[kk] = warped_prev.data[kk];
        else
          init.data[kk] = 0.5;
      }
    }
    node.basis.anchor = invert(cfg.codec.encode(init), invert_steps, *cfg.pred,
                               *cfg.schedule, opt.method, opt.conditioning);

    // Optimize under the consistency factor (previous node fixed) plus the
    // node's own observation factor.
    std::vector<ConsistencyEdge> pair_edges{*e};
    std::vector<RasterStack> pair_maps{prev_map, RasterStack{}};
    std::map<int, std::size_t> pair_index{{chain[k - 1].id, 0}, {node.id, 1}};

    SphericalState state;
    state.w.assign(node.basis.K() + 1, 0.0);
    state.w[0] = 1.0;
    auto eval = [&](const std::vector<double>& wv, std::vector<double>* g) {
      return node_incident(node, wv, pair_edges, pair_maps, pair_index, cfg, g);
    };
    state.loss = eval(state.w, nullptr);
    for (int itn = 0; itn < opt.iterations; ++itn) spherical_step(state, eval, opt, itn);
    node.w = state.w;
    prev_map = node_map(node, cfg);
  }
}

RefineResult joint_refine(std::vector<SubmapNode>& nodes,
                          const std::vector<ConsistencyEdge>& edges, const GraphConfig& cfg) {
  if (!cfg.schedule || !cfg.pred) throw std::invalid_argument("graph config incomplete");
  RefineResult out;
  std::map<int, std::size_t> index;
  for (std::size_t k = 0; k < nodes.size(); ++k) index[nodes[k].id] = k;

  std::vector<RasterStack> maps(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) maps[k] = node_map(nodes[k], cfg);

  std::vector<SphericalState> states(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    states[k].w = nodes[k].w;
    if (states[k].w.empty()) {
      states[k].w.assign(nodes[k].basis.K() + 1, 0.0);
      states[k].w[0] = 1.0;
    }
  }

  out.objective_trace.push_back(total_objective(nodes, edges, cfg, maps));
  const OptimizeConfig opt = node_opt(cfg);
  int failed_sweeps = 0;
  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    out.sweeps_run = sweep + 1;
    bool any_accepted = false;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      auto eval = [&](const std::vector<double>& wv, std::vector<double>* g) {
        return node_incident(nodes[k], wv, edges, maps, index, cfg, g);
      };
      const bool accepted = spherical_step(states[k], eval, opt, sweep);
      if (accepted) {
        nodes[k].w = states[k].w;
        maps[k] = node_map(nodes[k], cfg);
        any_accepted = true;
      }
    }
    out.objective_trace.push_back(total_objective(nodes, edges, cfg, maps));
    if (!any_accepted) {
      if (++failed_sweeps >= 8) {
        out.diverged = true;
        break;
      }
    } else {
      failed_sweeps = 0;
    }
    const double prev = out.objective_trace[out.objective_trace.size() - 2];
    const double cur = out.objective_trace.back();
    if (std::abs(prev - cur) < cfg.rel_tol * std::max(prev, 1e-12)) break;
  }
  for (std::size_t k = 0; k < nodes.size(); ++k) nodes[k].w = states[k].w;
  return out;
}

RasterStack stitch_maps(const std::vector<SubmapNode>& nodes, const GraphConfig& cfg,
                        const GridSpec& global_grid) {
  GridSpec g = global_grid;
  g.channels = cfg.codec.channels;
  RasterStack out = RasterStack::zeros(RasterStack::Role::generated, g,
                                       cfg.codec.channels);
  std::vector<double> weight(g.cell_count(), 0.0);
  const GridSpec& local = cfg.codec.full;
  const double xmax = local.origin.x + local.width * local.resolution;
  const double ymax = local.origin.y + local.height * local.resolution;

  for (const auto& node : nodes) {
    const RasterStack m = node_map(node, cfg);
    const Pose2D to_local = node.pose.inverse();
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        const Vec2 q = to_local.apply(g.cell_center(x, y));
        if (q.x < local.origin.x || q.x >= xmax || q.y < local.origin.y || q.y >= ymax)
          continue;
        // Bilinear sample each channel at q.
        const double u = (q.x - local.origin.x) / local.resolution - 0.5;
        const double v = (q.y - local.origin.y) / local.resolution - 0.5;
        const int x0 = static_cast<int>(std::floor(u));
        const int y0 = static_cast<int>(std::floor(v));
        const double fx = u - x0, fy = v - y0;
        weight[static_cast<std::size_t>(y) * g.width + x] += 1.0;
        for (int c = 0; c < m.channels; ++c) {
          double acc = 0.0;
          for (int oy = 0; oy <= 1; ++oy) {
            for (int ox = 0; ox <= 1; ++ox) {
              const int sx = x0 + ox, sy = y0 + oy;
              if (sx < 0 || sx >= local.width || sy < 0 || sy >= local.height) continue;
              acc += (ox ? fx : 1 - fx) * (oy ? fy : 1 - fy) * m.at(c, sy, sx);
            }
          }
          out.at(c, y, x) += acc;
        }
      }
    }
  }
  for (int c = 0; c < out.channels; ++c)
    for (std::size_t p = 0; p < g.cell_count(); ++p)
      if (weight[p] > 0.0) out.data[c * g.cell_count() + p] /= weight[p];
  return out;
}

}  // namespace csmap
