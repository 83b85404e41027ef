#include "csmapping/cdtw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

namespace csmap {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTol = 1e-9;

int pow2_at_least(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<Vec2> sample_uniform(const Polyline2D& p, int n) {
  const auto cum = cumulative_lengths(p);
  const double L = cum.back();
  std::vector<Vec2> out(n + 1);
  std::size_t seg = 1;
  for (int i = 0; i <= n; ++i) {
    const double s = L * i / n;
    while (seg + 1 < cum.size() && cum[seg] < s) ++seg;
    const double span = cum[seg] - cum[seg - 1];
    const double t = span > 0 ? (s - cum[seg - 1]) / span : 0.0;
    out[i] = p.vertices[seg - 1] + std::clamp(t, 0.0, 1.0) * (p.vertices[seg] - p.vertices[seg - 1]);
  }
  return out;
}

// Index of the cell whose open interval contains x (clamped at the ends).
int cell_of(const std::vector<double>& cum, double x) {
  auto it = std::upper_bound(cum.begin(), cum.end(), x);
  int i = static_cast<int>(std::distance(cum.begin(), it)) - 1;
  return std::clamp(i, 0, static_cast<int>(cum.size()) - 2);
}

// Cell graph per the boundary-subdivision scheme: grid lines at curve
// vertices, each cell boundary subdivided (power-of-two counts so halving
// delta refines the node set).
struct CellGraph {
  const Polyline2D* a;
  const Polyline2D* b;
  std::vector<double> cs, co;
  int na = 0, nb = 0;
  std::vector<int> nA, nB;
  std::vector<int> vjoff, hioff;
  int VB = 0, HB = 0;
  int corner_count = 0, vbase = 0, hbase = 0, total = 0;

  CellGraph(const Polyline2D& pa, const Polyline2D& pb, double delta) : a(&pa), b(&pb) {
    cs = cumulative_lengths(pa);
    co = cumulative_lengths(pb);
    na = static_cast<int>(cs.size()) - 1;
    nb = static_cast<int>(co.size()) - 1;
    nA.resize(na);
    nB.resize(nb);
    for (int i = 0; i < na; ++i)
      nA[i] = pow2_at_least(static_cast<int>(std::ceil((cs[i + 1] - cs[i]) / delta)));
    for (int j = 0; j < nb; ++j)
      nB[j] = pow2_at_least(static_cast<int>(std::ceil((co[j + 1] - co[j]) / delta)));
    vjoff.resize(nb + 1, 0);
    for (int j = 0; j < nb; ++j) vjoff[j + 1] = vjoff[j] + (nB[j] - 1);
    VB = vjoff[nb];
    hioff.resize(na + 1, 0);
    for (int i = 0; i < na; ++i) hioff[i + 1] = hioff[i] + (nA[i] - 1);
    HB = hioff[na];
    corner_count = (na + 1) * (nb + 1);
    vbase = corner_count;
    hbase = vbase + (na + 1) * VB;
    total = hbase + (nb + 1) * HB;
  }

  int corner_id(int i, int j) const { return j * (na + 1) + i; }
  int vint_id(int i, int j, int k) const { return vbase + i * VB + vjoff[j] + (k - 1); }
  int hint_id(int j, int i, int k) const { return hbase + j * HB + hioff[i] + (k - 1); }

  ParamSpacePoint position(int id) const {
    if (id < corner_count) {
      return {cs[id % (na + 1)], co[id / (na + 1)]};
    }
    if (id < hbase) {
      int rel = id - vbase;
      const int i = rel / VB;
      rel %= VB;
      const int j = static_cast<int>(std::upper_bound(vjoff.begin(), vjoff.end(), rel) -
                                     vjoff.begin()) - 1;
      const int k = rel - vjoff[j] + 1;
      return {cs[i], co[j] + (co[j + 1] - co[j]) * k / nB[j]};
    }
    int rel = id - hbase;
    const int j = rel / HB;
    rel %= HB;
    const int i = static_cast<int>(std::upper_bound(hioff.begin(), hioff.end(), rel) -
                                   hioff.begin()) - 1;
    const int k = rel - hioff[i] + 1;
    return {cs[i] + (cs[i + 1] - cs[i]) * k / nA[i], co[j]};
  }

  double edge_cost(const ParamSpacePoint& u, const ParamSpacePoint& v) const {
    const int ci = cell_of(cs, 0.5 * (u.s + v.s));
    const int cj = cell_of(co, 0.5 * (u.o + v.o));
    const ParamSpacePoint from{u.s - cs[ci], u.o - co[cj]};
    const ParamSpacePoint to{v.s - cs[ci], v.o - co[cj]};
    return cell_edge_cost(a->vertices[ci], a->vertices[ci + 1], b->vertices[cj],
                          b->vertices[cj + 1], from, to);
  }

  // Node above u on its vertical line (u must lie on line i inside b-cell j;
  // corners pass j of the cell above).
  int up_neighbor(int i, int j, int k) const {
    if (k < nB[j] - 1) return vint_id(i, j, k + 1);
    return corner_id(i, j + 1);
  }
  int right_neighbor(int j, int i, int k) const {
    if (k < nA[i] - 1) return hint_id(j, i, k + 1);
    return corner_id(i + 1, j);
  }
  int down_neighbor(int i, int j, int k) const {
    if (k > 1) return vint_id(i, j, k - 1);
    return corner_id(i, j);
  }
  int left_neighbor(int j, int i, int k) const {
    if (k > 1) return hint_id(j, i, k - 1);
    return corner_id(i, j);
  }

  // Enumerates monotone graph edges out of (forward) or into (backward) u.
  template <typename Fn>
  void neighbors(int u, bool forward, Fn&& fn) const {
    const ParamSpacePoint pu = position(u);
    auto visit = [&](int v) {
      if (v == u) return;
      const ParamSpacePoint pv = position(v);
      const double w = forward ? edge_cost(pu, pv) : edge_cost(pv, pu);
      fn(v, w);
    };

    int vline = -1, hline = -1;          // grid lines through u
    int vcell_j = -1, vk = 0;            // b-cell and index when on a vertical line
    int hcell_i = -1, hk = 0;
    if (u < corner_count) {
      vline = u % (na + 1);
      hline = u / (na + 1);
    } else if (u < hbase) {
      int rel = u - vbase;
      vline = rel / VB;
      rel %= VB;
      vcell_j = static_cast<int>(std::upper_bound(vjoff.begin(), vjoff.end(), rel) -
                                 vjoff.begin()) - 1;
      vk = rel - vjoff[vcell_j] + 1;
    } else {
      int rel = u - hbase;
      hline = rel / HB;
      rel %= HB;
      hcell_i = static_cast<int>(std::upper_bound(hioff.begin(), hioff.end(), rel) -
                                 hioff.begin()) - 1;
      hk = rel - hioff[hcell_i] + 1;
    }

    if (forward) {
      // Step along grid lines.
      if (vline >= 0) {
        const int j = (vcell_j >= 0) ? vcell_j : hline;
        if (vcell_j >= 0)
          visit(up_neighbor(vline, vcell_j, vk));
        else if (j < nb)
          visit(nB[j] > 1 ? vint_id(vline, j, 1) : corner_id(vline, j + 1));
      }
      if (hline >= 0) {
        const int i = (hcell_i >= 0) ? hcell_i : vline;
        if (hcell_i >= 0)
          visit(right_neighbor(hline, hcell_i, hk));
        else if (i < na)
          visit(nA[i] > 1 ? hint_id(hline, i, 1) : corner_id(i + 1, hline));
      }
      // Chords across the forward cell.
      int ci, cj;
      if (u < corner_count) {
        ci = vline;
        cj = hline;
      } else if (u < hbase) {
        ci = vline;
        cj = vcell_j;
      } else {
        ci = hcell_i;
        cj = hline;
      }
      if (ci >= na || cj >= nb) return;
      // Right boundary: vertical line ci+1 over b-cell cj.
      for (int k = 1; k < nB[cj]; ++k) {
        const int v = vint_id(ci + 1, cj, k);
        if (position(v).o >= pu.o - kTol) visit(v);
      }
      if (co[cj] >= pu.o - kTol) visit(corner_id(ci + 1, cj));
      visit(corner_id(ci + 1, cj + 1));
      // Top boundary: horizontal line cj+1 over a-cell ci.
      for (int k = 1; k < nA[ci]; ++k) {
        const int v = hint_id(cj + 1, ci, k);
        if (position(v).s >= pu.s - kTol) visit(v);
      }
      if (cs[ci] >= pu.s - kTol) visit(corner_id(ci, cj + 1));
    } else {
      if (vline >= 0) {
        const int j = (vcell_j >= 0) ? vcell_j : hline;
        if (vcell_j >= 0)
          visit(down_neighbor(vline, vcell_j, vk));
        else if (j > 0)
          visit(nB[j - 1] > 1 ? vint_id(vline, j - 1, nB[j - 1] - 1)
                              : corner_id(vline, j - 1));
      }
      if (hline >= 0) {
        const int i = (hcell_i >= 0) ? hcell_i : vline;
        if (hcell_i >= 0)
          visit(left_neighbor(hline, hcell_i, hk));
        else if (i > 0)
          visit(nA[i - 1] > 1 ? hint_id(hline, i - 1, nA[i - 1] - 1)
                              : corner_id(i - 1, hline));
      }
      // Backward cell: u on its right or top boundary.
      int ci, cj;
      if (u < corner_count) {
        ci = vline - 1;
        cj = hline - 1;
      } else if (u < hbase) {
        ci = vline - 1;
        cj = vcell_j;
      } else {
        ci = hcell_i;
        cj = hline - 1;
      }
      if (ci < 0 || cj < 0) return;
      // Left boundary of cell (ci, cj).
      for (int k = 1; k < nB[cj]; ++k) {
        const int v = vint_id(ci, cj, k);
        if (position(v).o <= pu.o + kTol) visit(v);
      }
      if (co[cj + 1] <= pu.o + kTol) visit(corner_id(ci, cj + 1));
      visit(corner_id(ci, cj));
      // Bottom boundary.
      for (int k = 1; k < nA[ci]; ++k) {
        const int v = hint_id(cj, ci, k);
        if (position(v).s <= pu.s + kTol) visit(v);
      }
      if (cs[ci + 1] <= pu.s + kTol) visit(corner_id(ci + 1, cj));
    }
  }
};

struct Search {
  const CellGraph& g;
  std::vector<double> df, db;
  std::vector<int> pf, pb;
  std::vector<char> sf, sb;
  double best = kInf;
  int meet = -1;
  std::vector<ParamSpacePoint> explored;
  bool record = false;

  explicit Search(const CellGraph& graph)
      : g(graph),
        df(graph.total, kInf),
        db(graph.total, kInf),
        pf(graph.total, -1),
        pb(graph.total, -1),
        sf(graph.total, 0),
        sb(graph.total, 0) {}

  // Bidirectional Dijkstra; ties broken by lexicographic node index.
  void run(int src, int dst) {
    using Entry = std::pair<double, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> qf, qb;
    df[src] = 0.0;
    qf.emplace(0.0, src);
    db[dst] = 0.0;
    qb.emplace(0.0, dst);
    consider(src);
    consider(dst);
    while (!qf.empty() && !qb.empty()) {
      if (qf.top().first + qb.top().first >= best) break;
      const bool fwd = qf.top().first <= qb.top().first;
      auto& q = fwd ? qf : qb;
      auto& dist = fwd ? df : db;
      auto& settled = fwd ? sf : sb;
      auto& parent = fwd ? pf : pb;
      const auto [du, u] = q.top();
      q.pop();
      if (settled[u]) continue;
      settled[u] = 1;
      if (record) explored.push_back(g.position(u));
      g.neighbors(u, fwd, [&](int v, double w) {
        const double nd = du + w;
        if (nd < dist[v]) {
          dist[v] = nd;
          parent[v] = u;
          q.emplace(nd, v);
          consider(v);
        }
      });
    }
  }

  void consider(int v) {
    if (df[v] == kInf || db[v] == kInf) return;
    const double m = df[v] + db[v];
    if (m < best || (m == best && v < meet)) {
      best = m;
      meet = v;
    }
  }

  std::vector<ParamSpacePoint> extract_path(int src, int dst) const {
    std::vector<int> chain;
    for (int u = meet; u != -1; u = pf[u]) chain.push_back(u);
    std::reverse(chain.begin(), chain.end());
    for (int u = pb[meet]; u != -1; u = pb[u]) chain.push_back(u);
    if (chain.empty() || chain.front() != src || chain.back() != dst)
      throw std::runtime_error("cdtw: path reconstruction failed");
    std::vector<ParamSpacePoint> pts;
    pts.reserve(chain.size());
    for (int u : chain) {
      const ParamSpacePoint p = g.position(u);
      if (!pts.empty() && std::abs(pts.back().s - p.s) < kTol &&
          std::abs(pts.back().o - p.o) < kTol)
        continue;
      pts.push_back(p);
    }
    return pts;
  }
};

// Graph pitch governs the approximation error; 1/100 of the shorter curve,
// capped at 0.1 m, keeps smooth-pair error well under 2% of the fine-grid
// reference.
double auto_delta(double la, double lb) {
  return std::clamp(std::min(la, lb) / 100.0, 0.05, 0.1);
}

// Collinear vertex insertion so no cell spans more than max_len of either
// curve. Pure densification: the geometry and arc lengths are unchanged, but
// within-cell chords can bend at the added boundaries.
Polyline2D densify(const Polyline2D& p, double max_len) {
  Polyline2D out;
  out.vertices.push_back(p.vertices.front());
  for (std::size_t i = 1; i < p.vertices.size(); ++i) {
    const Vec2 a = p.vertices[i - 1], b = p.vertices[i];
    const double len = (b - a).norm();
    const int pieces = std::max(1, static_cast<int>(std::ceil(len / max_len)));
    for (int k = 1; k <= pieces; ++k)
      out.vertices.push_back(a + (static_cast<double>(k) / pieces) * (b - a));
  }
  return out;
}

// Dense-grid DP with parent tracking (fallback for degenerate inputs).
CdtwResult fine_grid_with_path(const Polyline2D& a, const Polyline2D& b, double res,
                               std::size_t max_nodes) {
  const double la = arc_length(a), lb = arc_length(b);
  const int n = std::max(1, static_cast<int>(std::ceil(la / res)));
  const int m = std::max(1, static_cast<int>(std::ceil(lb / res)));
  if (static_cast<std::size_t>(n + 1) * (m + 1) > max_nodes)
    throw std::length_error("fine-grid cdtw exceeds node budget");
  const auto pa = sample_uniform(a, n);
  const auto pb = sample_uniform(b, m);
  const double ds = la / n, doo = lb / m;
  auto c = [&](int i, int j) { return (pa[i] - pb[j]).squared_norm(); };
  std::vector<double> dist(static_cast<std::size_t>(n + 1) * (m + 1), kInf);
  std::vector<std::uint8_t> move(dist.size(), 0);
  auto idx = [&](int i, int j) { return static_cast<std::size_t>(j) * (n + 1) + i; };
  dist[0] = 0.0;
  for (int j = 0; j <= m; ++j) {
    for (int i = 0; i <= n; ++i) {
      if (i == 0 && j == 0) continue;
      double bestv = kInf;
      std::uint8_t bm = 0;
      if (i > 0) {
        const double v = dist[idx(i - 1, j)] + 0.5 * (c(i - 1, j) + c(i, j)) * ds;
        if (v < bestv) { bestv = v; bm = 1; }
      }
      if (j > 0) {
        const double v = dist[idx(i, j - 1)] + 0.5 * (c(i, j - 1) + c(i, j)) * doo;
        if (v < bestv) { bestv = v; bm = 2; }
      }
      if (i > 0 && j > 0) {
        const double v = dist[idx(i - 1, j - 1)] + 0.5 * (c(i - 1, j - 1) + c(i, j)) * (ds + doo);
        if (v < bestv) { bestv = v; bm = 3; }
      }
      dist[idx(i, j)] = bestv;
      move[idx(i, j)] = bm;
    }
  }
  CdtwResult out;
  out.cost = dist[idx(n, m)];
  int i = n, j = m;
  std::vector<ParamSpacePoint> rev;
  while (true) {
    rev.push_back({ds * i, doo * j});
    if (i == 0 && j == 0) break;
    const std::uint8_t bm = move[idx(i, j)];
    if (bm == 1) --i;
    else if (bm == 2) --j;
    else { --i; --j; }
  }
  std::reverse(rev.begin(), rev.end());
  out.path.points = std::move(rev);
  out.path.cost = out.cost;
  return out;
}

double nearest_on_range(const Polyline2D& c, const std::vector<double>& cum, double lo,
                        double hi, const Vec2& q, double* dist_out) {
  double best = kInf, best_s = lo;
  for (std::size_t i = 1; i < c.vertices.size(); ++i) {
    const double s0 = cum[i - 1], s1 = cum[i];
    const double clo = std::max(lo, s0), chi = std::min(hi, s1);
    if (clo > chi) continue;
    const Vec2 a = c.vertices[i - 1];
    const Vec2 dir = c.vertices[i] - a;
    const double len = s1 - s0;
    // Local parameterization by arc length within [clo, chi].
    const Vec2 u = dir * (1.0 / len);
    const double t = std::clamp((q - a).dot(u), clo - s0, chi - s0);
    const double d = (q - (a + t * u)).norm();
    if (d < best) {
      best = d;
      best_s = s0 + t;
    }
  }
  if (dist_out) *dist_out = best;
  return best_s;
}

}  // namespace

double cell_edge_cost(const Vec2& ra, const Vec2& rb, const Vec2& oa, const Vec2& ob,
                      const ParamSpacePoint& from, const ParamSpacePoint& to) {
  const double dss = to.s - from.s;
  const double doo = to.o - from.o;
  if (dss < -kTol || doo < -kTol)
    throw std::invalid_argument("cell_edge_cost: edge must be monotone");
  const double lr = (rb - ra).norm();
  const double lo = (ob - oa).norm();
  const Vec2 ur = (rb - ra) * (1.0 / lr);
  const Vec2 uo = (ob - oa) * (1.0 / lo);
  const Vec2 p = (ra + from.s * ur) - (oa + from.o * uo);
  const Vec2 q = dss * ur - doo * uo;
  const double integral = p.dot(p) + p.dot(q) + q.dot(q) / 3.0;
  return std::max(0.0, integral) * (std::max(0.0, dss) + std::max(0.0, doo));
}

CdtwResult cdtw(const Polyline2D& a, const Polyline2D& b, const CdtwConfig& cfg) {
  a.validate();
  b.validate();
  const double la = arc_length(a), lb = arc_length(b);
  const double delta = cfg.delta > 0 ? cfg.delta : auto_delta(la, lb);
  if (la < delta || lb < delta)
    return fine_grid_with_path(a, b, cfg.fine_resolution, 4'000'000);

  const Polyline2D da = densify(a, delta);
  const Polyline2D db = densify(b, delta);
  CellGraph g(da, db, delta);
  Search search(g);
  search.record = cfg.record_explored;
  const int src = g.corner_id(0, 0);
  const int dst = g.corner_id(g.na, g.nb);
  search.run(src, dst);
  if (search.meet < 0) throw std::runtime_error("cdtw: no path found");
  CdtwResult out;
  out.cost = search.best;
  out.path.points = search.extract_path(src, dst);
  out.path.cost = search.best;
  out.explored = std::move(search.explored);
  return out;
}

double cdtw_between(const Polyline2D& a, const Polyline2D& b, const CdtwConfig& cfg,
                    const ParamSpacePoint& from, const ParamSpacePoint& to) {
  const double la = arc_length(a), lb = arc_length(b);
  const double delta = cfg.delta > 0 ? cfg.delta : auto_delta(la, lb);
  const Polyline2D da = densify(a, delta);
  const Polyline2D db = densify(b, delta);
  CellGraph g(da, db, delta);
  int src = -1, dst = -1;
  for (int u = 0; u < g.total; ++u) {
    const ParamSpacePoint p = g.position(u);
    if (std::abs(p.s - from.s) < 1e-7 && std::abs(p.o - from.o) < 1e-7) src = u;
    if (std::abs(p.s - to.s) < 1e-7 && std::abs(p.o - to.o) < 1e-7) dst = u;
  }
  if (src < 0 || dst < 0)
    throw std::invalid_argument("cdtw_between: endpoints are not graph nodes");
  Search search(g);
  search.run(src, dst);
  if (search.meet < 0) throw std::runtime_error("cdtw_between: no path found");
  return search.best;
}

double fine_grid_cdtw_oracle(const Polyline2D& a, const Polyline2D& b, double res,
                             std::size_t max_nodes) {
  if (res <= 0) throw std::invalid_argument("fine grid resolution must be > 0");
  const double la = arc_length(a), lb = arc_length(b);
  const int n = std::max(1, static_cast<int>(std::ceil(la / res)));
  const int m = std::max(1, static_cast<int>(std::ceil(lb / res)));
  if (static_cast<std::size_t>(n + 1) * (m + 1) > max_nodes)
    throw std::length_error("fine-grid cdtw exceeds node budget");
  const auto pa = sample_uniform(a, n);
  const auto pb = sample_uniform(b, m);
  const double ds = la / n, doo = lb / m;
  std::vector<double> cost_prev(n + 1), cost_cur(n + 1);
  std::vector<double> prev(n + 1, kInf), cur(n + 1, kInf);
  for (int i = 0; i <= n; ++i) cost_prev[i] = (pa[i] - pb[0]).squared_norm();
  prev[0] = 0.0;
  for (int i = 1; i <= n; ++i)
    prev[i] = prev[i - 1] + 0.5 * (cost_prev[i - 1] + cost_prev[i]) * ds;
  for (int j = 1; j <= m; ++j) {
    for (int i = 0; i <= n; ++i) cost_cur[i] = (pa[i] - pb[j]).squared_norm();
    cur[0] = prev[0] + 0.5 * (cost_prev[0] + cost_cur[0]) * doo;
    for (int i = 1; i <= n; ++i) {
      const double right = cur[i - 1] + 0.5 * (cost_cur[i - 1] + cost_cur[i]) * ds;
      const double up = prev[i] + 0.5 * (cost_prev[i] + cost_cur[i]) * doo;
      const double diag = prev[i - 1] + 0.5 * (cost_prev[i - 1] + cost_cur[i]) * (ds + doo);
      cur[i] = std::min({right, up, diag});
    }
    std::swap(prev, cur);
    std::swap(cost_prev, cost_cur);
  }
  return prev[n];
}

TrimResult trim_nonoverlap(const WarpingPath& path, const Polyline2D& a,
                           const Polyline2D& b) {
  if (path.points.size() < 2) throw std::invalid_argument("trim: path too short");
  const auto cum_a = cumulative_lengths(a);
  const auto cum_b = cumulative_lengths(b);
  const double la = cum_a.back(), lb = cum_b.back();
  TrimResult out;
  out.on_a = {0.0, la};
  out.on_b = {0.0, lb};
  const auto& pts = path.points;

  // Leading run pinned to one axis: the other curve's prefix is matched to a
  // single endpoint; cut at the minimum-distance point.
  std::size_t r = 0;
  while (r + 1 < pts.size() && pts[r + 1].s < kTol) ++r;
  if (r > 0) out.on_b.lo = nearest_on_range(b, cum_b, 0.0, pts[r].o, a.vertices.front(), nullptr);
  r = 0;
  while (r + 1 < pts.size() && pts[r + 1].o < kTol) ++r;
  if (r > 0) out.on_a.lo = nearest_on_range(a, cum_a, 0.0, pts[r].s, b.vertices.front(), nullptr);

  std::size_t q = pts.size() - 1;
  while (q > 0 && pts[q - 1].s > la - kTol) --q;
  if (q < pts.size() - 1)
    out.on_b.hi = nearest_on_range(b, cum_b, pts[q].o, lb, a.vertices.back(), nullptr);
  q = pts.size() - 1;
  while (q > 0 && pts[q - 1].o > lb - kTol) --q;
  if (q < pts.size() - 1)
    out.on_a.hi = nearest_on_range(a, cum_a, pts[q].s, la, b.vertices.back(), nullptr);

  out.on_a.hi = std::max(out.on_a.hi, out.on_a.lo);
  out.on_b.hi = std::max(out.on_b.hi, out.on_b.lo);
  return out;
}

double MonotoneMap::operator()(double o) const {
  if (o_knots.empty()) return o;
  if (o <= o_knots.front()) return s_knots.front() - (o_knots.front() - o);
  if (o >= o_knots.back()) return s_knots.back() + (o - o_knots.back());
  auto it = std::upper_bound(o_knots.begin(), o_knots.end(), o);
  const std::size_t i = std::distance(o_knots.begin(), it);
  const double t = (o - o_knots[i - 1]) / (o_knots[i] - o_knots[i - 1]);
  return s_knots[i - 1] + t * (s_knots[i] - s_knots[i - 1]);
}

MonotoneMap path_to_monotone_map(const WarpingPath& path, const TrimResult& trim) {
  std::vector<ParamSpacePoint> pts;
  for (const auto& p : path.points) {
    if (p.s < trim.on_a.lo - kTol || p.s > trim.on_a.hi + kTol) continue;
    if (p.o < trim.on_b.lo - kTol || p.o > trim.on_b.hi + kTol) continue;
    pts.push_back(p);
  }
  MonotoneMap map;
  if (pts.empty()) {
    map.o_knots = {trim.on_b.lo};
    map.s_knots = {trim.on_a.lo};
    return map;
  }
  // Collapse stalls in o, then in s, to midpoint anchors.
  std::vector<ParamSpacePoint> stage;
  for (std::size_t i = 0; i < pts.size();) {
    std::size_t j = i;
    while (j + 1 < pts.size() && pts[j + 1].o - pts[i].o < kTol) ++j;
    stage.push_back({0.5 * (pts[i].s + pts[j].s), pts[i].o});
    i = j + 1;
  }
  std::vector<ParamSpacePoint> anchors;
  for (std::size_t i = 0; i < stage.size();) {
    std::size_t j = i;
    while (j + 1 < stage.size() && stage[j + 1].s - stage[i].s < kTol) ++j;
    anchors.push_back({stage[i].s, 0.5 * (stage[i].o + stage[j].o)});
    i = j + 1;
  }
  for (const auto& p : anchors) {
    if (!map.o_knots.empty() &&
        (p.o - map.o_knots.back() < 1e-12 || p.s - map.s_knots.back() < 1e-12))
      continue;
    map.o_knots.push_back(p.o);
    map.s_knots.push_back(p.s);
  }
  if (map.o_knots.empty()) {
    map.o_knots = {trim.on_b.lo};
    map.s_knots = {trim.on_a.lo};
  }
  return map;
}

}  // namespace csmap
