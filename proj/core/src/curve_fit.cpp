#include "csmapping/curve_fit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csmap {

namespace {

// Row of Chebyshev basis values T_0(t) .. T_n(t).
void cheb_row(double t, int order, double* out) {
  out[0] = 1.0;
  if (order >= 1) out[1] = t;
  for (int i = 2; i <= order; ++i) out[i] = 2.0 * t * out[i - 1] - out[i - 2];
}

Eigen::MatrixXd design_matrix(const ParamPointSet& pts, int order) {
  Eigen::MatrixXd A(pts.size(), order + 1);
  std::vector<double> row(order + 1);
  for (std::size_t j = 0; j < pts.size(); ++j) {
    cheb_row(pts[j].t, order, row.data());
    for (int i = 0; i <= order; ++i) A(j, i) = row[i];
  }
  return A;
}

std::size_t effective_distinct_t(const ParamPointSet& pts, const std::vector<double>& w) {
  std::vector<double> ts;
  for (std::size_t j = 0; j < pts.size(); ++j)
    if (w.empty() || w[j] > 0.0) ts.push_back(pts[j].t);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end(),
                       [](double a, double b) { return std::abs(a - b) < 1e-12; }),
           ts.end());
  return ts.size();
}

}  // namespace

Vec2 chebyshev_eval(const ChebyshevCurve& c, double t) {
  if (std::abs(t) > 1.0 + 1e-12)
    throw std::invalid_argument("chebyshev_eval: |t| must be <= 1");
  t = std::clamp(t, -1.0, 1.0);
  // Clenshaw recurrence, applied per component.
  Vec2 b1{0, 0}, b2{0, 0};
  for (int i = c.order(); i >= 1; --i) {
    const Vec2 b0 = c.coeffs[i] + 2.0 * t * b1 - b2;
    b2 = b1;
    b1 = b0;
  }
  return c.coeffs[0] + t * b1 - b2;
}

Polyline2D chebyshev_to_polyline(const ChebyshevCurve& c, double spacing) {
  const double span = std::max(c.s_max - c.s_min, 1e-9);
  const int n = std::max(2, static_cast<int>(std::ceil(span / spacing)) + 1);
  Polyline2D out;
  for (int i = 0; i < n; ++i) {
    const double t = -1.0 + 2.0 * i / (n - 1);
    const Vec2 p = chebyshev_eval(c, t);
    if (!out.vertices.empty() && (p - out.vertices.back()).squared_norm() < 1e-20) continue;
    out.vertices.push_back(p);
  }
  if (out.vertices.size() < 2) out.vertices.push_back(out.vertices.back() + Vec2{1e-9, 0});
  return out;
}

ChebyshevCurve fit_weighted_ls(const ParamPointSet& pts, int order,
                               const std::vector<double>& weights) {
  if (!weights.empty() && weights.size() != pts.size())
    throw std::invalid_argument("fit_weighted_ls: weight count mismatch");
  for (int n = order; n >= 1; --n) {
    if (effective_distinct_t(pts, weights) < static_cast<std::size_t>(n + 1)) continue;
    const Eigen::MatrixXd A = design_matrix(pts, n);
    Eigen::VectorXd w;
    if (weights.empty())
      w = Eigen::VectorXd::Ones(pts.size());
    else
      w = Eigen::Map<const Eigen::VectorXd>(weights.data(), pts.size());
    Eigen::MatrixXd P(pts.size(), 2);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      P(j, 0) = pts[j].p.x;
      P(j, 1) = pts[j].p.y;
    }
    const Eigen::MatrixXd Aw = w.asDiagonal() * A;
    Eigen::MatrixXd N = A.transpose() * Aw;
    N.diagonal().array() += 1e-10;  // Tikhonov damping for near-singular designs
    const Eigen::LDLT<Eigen::MatrixXd> solver(N);
    const Eigen::MatrixXd X = solver.solve(A.transpose() * (w.asDiagonal() * P));
    // Rank check via reconstruction: a genuinely deficient design yields an
    // unreliable solve; detect with the column-pivoted QR rank.
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Aw);
    if (qr.rank() < n + 1) continue;  // degrade order and retry
    ChebyshevCurve c;
    c.coeffs.resize(n + 1);
    for (int i = 0; i <= n; ++i) c.coeffs[i] = {X(i, 0), X(i, 1)};
    return c;
  }
  throw std::runtime_error("fit_weighted_ls: degenerate fit (rank deficient down to order 0)");
}

double tls_objective(const ParamPointSet& pts, const ChebyshevCurve& curve, double c) {
  double acc = 0.0;
  for (const auto& q : pts) {
    const double r2 = (q.p - chebyshev_eval(curve, q.t)).squared_norm();
    acc += std::min(r2, c * c);
  }
  return acc;
}

double gnc_weight_update(double r2, double mu, double c) {
  const double c2 = c * c;
  if (r2 >= (mu + 1.0) / mu * c2) return 0.0;
  if (r2 <= mu / (mu + 1.0) * c2) return 1.0;
  return std::clamp(c * std::sqrt(mu * (mu + 1.0) / r2) - mu, 0.0, 1.0);
}

GncResult gnc_tls_fit(const ParamPointSet& pts, int order, const GncConfig& cfg) {
  if (cfg.c <= 0.0) throw std::invalid_argument("gnc: c must be > 0");
  if (cfg.kappa <= 1.0) throw std::invalid_argument("gnc: kappa must be > 1");
  const double c2 = cfg.c * cfg.c;
  GncResult out;
  out.weights.assign(pts.size(), 1.0);
  out.curve = fit_weighted_ls(pts, order, out.weights);

  std::vector<double> r2(pts.size());
  auto residuals = [&](const ChebyshevCurve& curve) {
    double rmax = 0.0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      r2[j] = (pts[j].p - chebyshev_eval(curve, pts[j].t)).squared_norm();
      rmax = std::max(rmax, r2[j]);
    }
    return rmax;
  };
  const double rmax0 = residuals(out.curve);
  double mu = c2 / (2.0 * rmax0 + c2);

  auto weighted_gradient_norm = [&](const ChebyshevCurve& curve,
                                    const std::vector<double>& w) {
    const int n = curve.order();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n + 1, 2);
    std::vector<double> row(n + 1);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (w[j] == 0.0) continue;
      cheb_row(pts[j].t, n, row.data());
      const Vec2 r = pts[j].p - chebyshev_eval(curve, pts[j].t);
      for (int i = 0; i <= n; ++i) {
        g(i, 0) -= 2.0 * w[j] * row[i] * r.x;
        g(i, 1) -= 2.0 * w[j] * row[i] * r.y;
      }
    }
    return g.norm();
  };

  for (int it = 0; it < cfg.max_iter; ++it) {
    out.iterations = it + 1;
    // Step 2: closed-form weight update at fixed parameters.
    for (std::size_t j = 0; j < pts.size(); ++j)
      out.weights[j] = gnc_weight_update(r2[j], mu, cfg.c);
    // Fixed point: the current curve already minimizes the re-weighted
    // objective, so further sweeps cannot move it.
    if (weighted_gradient_norm(out.curve, out.weights) < cfg.grad_tol) break;
    // Step 1: weighted least squares at fixed weights.
    out.curve = fit_weighted_ls(pts, order, out.weights);
    residuals(out.curve);
    mu *= cfg.kappa;
  }
  return out;
}

int select_order(double instance_arc_length, std::size_t point_count) {
  if (instance_arc_length <= 0.0) throw std::invalid_argument("select_order: length must be > 0");
  const int base = std::clamp(static_cast<int>(std::ceil(instance_arc_length / 10.0)) + 1, 2, 8);
  const int cap = static_cast<int>(point_count / 3) - 1;
  return std::max(1, std::min(base, cap));
}

}  // namespace csmap
