#include "csmapping/param_propagation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <stdexcept>

namespace csmap {

namespace {

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
};

// Strictly increasing piecewise-linear interpolation with unit-slope
// extension beyond the knot range.
double interp_ext(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front() - (xs.front() - x);
  if (x >= xs.back()) return ys.back() + (x - xs.back());
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t i = std::distance(xs.begin(), it);
  const double t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
  return ys[i - 1] + t * (ys[i] - ys[i - 1]);
}

}  // namespace

PropagationResult propagate_parameters(const std::vector<Polyline2D>& segments,
                                       const PropagationConfig& cfg) {
  if (segments.empty()) throw std::invalid_argument("propagate_parameters: no segments");
  const std::size_t n = segments.size();

  PropagationResult out;

  // Per-segment sample positions and (to be filled) raw parameters.
  std::vector<std::vector<double>> arcs(n), raws(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double L = arc_length(segments[i]);
    const int steps = std::max(1, static_cast<int>(std::ceil(L / cfg.point_spacing)));
    for (int k = 0; k <= steps; ++k) arcs[i].push_back(L * k / steps);
  }

  // Chamfer graph, MST (Kruskal; deterministic tie-break by weight then ids).
  struct Edge {
    double w;
    int a, b;
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w =
          chamfer_truncated(segments[i], segments[j], cfg.chamfer_trunc, cfg.chamfer_spacing);
      if (w < cfg.chamfer_trunc) edges.push_back({w, static_cast<int>(i), static_cast<int>(j)});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    if (x.w != y.w) return x.w < y.w;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  DisjointSet dsu(static_cast<int>(n));
  std::vector<std::vector<int>> tree(n);
  for (const Edge& e : edges) {
    if (dsu.unite(e.a, e.b)) {
      tree[e.a].push_back(e.b);
      tree[e.b].push_back(e.a);
    }
  }

  // Reference: highest MST degree, ties to the lowest index.
  std::size_t ref = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (tree[i].size() > tree[ref].size()) ref = i;
  out.reference = ref;

  const int ref_comp = dsu.find(static_cast<int>(ref));
  for (std::size_t i = 0; i < n; ++i)
    if (dsu.find(static_cast<int>(i)) != ref_comp) out.orphans.push_back(i);

  // BFS from the reference; the reference's own arc length is the axis.
  raws[ref] = arcs[ref];
  std::vector<char> visited(n, 0);
  visited[ref] = 1;
  std::queue<std::size_t> frontier;
  frontier.push(ref);
  while (!frontier.empty()) {
    const std::size_t p = frontier.front();
    frontier.pop();
    std::vector<int> kids = tree[p];
    std::sort(kids.begin(), kids.end());
    for (int ci : kids) {
      const auto c = static_cast<std::size_t>(ci);
      if (visited[c]) continue;
      visited[c] = 1;
      // Match child onto parent and compose the correspondence with the
      // parent's raw parameters.
      const CdtwResult match = cdtw(segments[p], segments[c], cfg.cdtw);
      const TrimResult trim = trim_nonoverlap(match.path, segments[p], segments[c]);
      const MonotoneMap to_parent_arc = path_to_monotone_map(match.path, trim);
      raws[c].resize(arcs[c].size());
      for (std::size_t k = 0; k < arcs[c].size(); ++k)
        raws[c][k] = interp_ext(arcs[p], raws[p], to_parent_arc(arcs[c][k]));
      frontier.push(c);
    }
  }

  double lo = raws[ref].front(), hi = raws[ref].back();
  for (std::size_t i = 0; i < n; ++i) {
    if (!visited[i]) continue;
    lo = std::min(lo, raws[i].front());
    hi = std::max(hi, raws[i].back());
  }
  out.s_min = lo;
  out.s_max = hi;
  const double span = std::max(hi - lo, 1e-9);

  for (std::size_t i = 0; i < n; ++i) {
    if (!visited[i]) continue;
    for (std::size_t k = 0; k < arcs[i].size(); ++k) {
      ParamPoint q;
      q.p = point_at_arclength(segments[i], arcs[i][k]);
      q.t = -1.0 + 2.0 * (raws[i][k] - lo) / span;
      q.observation = static_cast<int>(i);
      out.points.push_back(q);
    }
  }
  return out;
}

}  // namespace csmap
