#include "csmapping/diffusion.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <stdexcept>

#include "csmapping/rng.hpp"

namespace csmap {

namespace {

void check_steps_decreasing(const std::vector<int>& steps, int T) {
  if (steps.empty()) throw std::invalid_argument("empty timestep list");
  if (steps.front() > T || steps.back() < 1)
    throw std::invalid_argument("timesteps must satisfy first <= T, last >= 1");
  for (std::size_t i = 1; i < steps.size(); ++i)
    if (steps[i] >= steps[i - 1])
      throw std::invalid_argument("timesteps must be strictly decreasing");
}

double log_snr(const DiffusionSchedule& s, int t) {
  return std::log(s.alpha(t) / s.sigma(t));
}

}  // namespace

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("schedule needs 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  s.T = T;
  s.beta.resize(T);
  const double rs = std::sqrt(beta_start), re = std::sqrt(beta_end);
  for (int t = 1; t <= T; ++t) {
    const double r = T == 1 ? rs : rs + (t - 1) * (re - rs) / (T - 1);
    s.beta[t - 1] = r * r;
  }
  s.alpha_bar.resize(T + 1);
  s.alpha_bar[0] = 1.0;
  double log_acc = 0.0;
  for (int t = 1; t <= T; ++t) {
    log_acc += std::log1p(-s.beta[t - 1]);
    s.alpha_bar[t] = std::exp(log_acc);
  }
  return s;
}

Latent forward_sample(const Latent& x0, int t, const Latent& eps,
                      const DiffusionSchedule& s) {
  if (t < 0 || t > s.T) throw std::invalid_argument("forward_sample: t out of range");
  if (x0.dim() != eps.dim()) throw std::invalid_argument("forward_sample: size mismatch");
  Latent out = x0;
  const double a = s.alpha(t), sig = s.sigma(t);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = a * x0.values[i] + sig * eps.values[i];
  return out;
}

Latent denoise(const Latent& xT, const std::vector<int>& steps, const NoisePredictor& pred,
               const DiffusionSchedule& s, SolverMethod method,
               const std::vector<double>* conditioning, DenoiseTape* tape) {
  check_steps_decreasing(steps, s.T);
  if (xT.dim() != pred.dim()) throw std::invalid_argument("denoise: latent size mismatch");

  std::vector<int> ts = steps;
  ts.push_back(0);
  std::vector<double> x = xT.values;
  std::vector<double> x_prev;        // x_{k-1}
  std::vector<double> eps_prev;      // eps_{k-1}
  double lambda_prev = 0.0;
  bool have_prev = false;
  if (tape) {
    tape->steps.clear();
  }

  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const int t = ts[k], tn = ts[k + 1];
    const double at = s.alpha(t), st = s.sigma(t);
    const double an = s.alpha(tn), sn = s.sigma(tn);
    const std::vector<double> eps = pred.eval(x, t, conditioning);
    const double lambda_t = log_snr(s, t);

    double A, B, C = 0.0, D = 0.0;
    const bool second_order = method == SolverMethod::multistep2 && have_prev && tn > 0;
    if (!second_order) {
      if (tn == 0) {
        A = 1.0 / at;
        B = -st / at;
      } else {
        A = an / at;
        B = sn - an * st / at;
      }
    } else {
      const double lambda_n = log_snr(s, tn);
      const double h = lambda_n - lambda_t;
      const double h_prev = lambda_t - lambda_prev;
      // D = (1 + 1/(2r)) x0_k - (1/(2r)) x0_{k-1} with r = h_prev / h.
      const double g = 1.0 / (2.0 * (h_prev / h));
      const double phi = an * (std::exp(-h) - 1.0);
      A = sn / st + (-phi) * (1.0 + g) / at;
      B = phi * (1.0 + g) * st / at;
      const double ap = s.alpha(ts[k - 1]), sp = s.sigma(ts[k - 1]);
      C = phi * g / ap;
      D = -phi * g * sp / ap;
    }

    std::vector<double> x_next(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = A * x[i] + B * eps[i];
      if (second_order) v += C * x_prev[i] + D * eps_prev[i];
      x_next[i] = v;
    }
    if (tape) {
      DenoiseTape::Step rec;
      rec.t = t;
      rec.a = A;
      rec.b = B;
      rec.c = C;
      rec.d = D;
      rec.x = x;
      tape->steps.push_back(std::move(rec));
    }
    x_prev = std::move(x);
    eps_prev = eps;
    lambda_prev = lambda_t;
    have_prev = true;
    x = std::move(x_next);
  }
  if (tape) tape->out = x;
  return Latent(std::move(x), xT.h, xT.w, xT.c);
}

std::vector<double> denoise_vjp(const DenoiseTape& tape, const NoisePredictor& pred,
                                const std::vector<double>& grad_out,
                                const std::vector<double>* conditioning) {
  const std::size_t n = tape.steps.size();
  // gx[k] = d(loss)/d(x_k); start from the output, walk the chain backwards.
  std::vector<std::vector<double>> gx(n + 1);
  gx[n] = grad_out;
  for (std::size_t k = n; k-- > 0;) {
    const auto& st = tape.steps[k];
    const std::size_t d = st.x.size();
    std::vector<double> g(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) g[i] = st.a * gx[k + 1][i];
    if (k + 1 < n && tape.steps[k + 1].c != 0.0) {
      const double c = tape.steps[k + 1].c;
      for (std::size_t i = 0; i < d; ++i) g[i] += c * gx[k + 2][i];
    }
    // Adjoint with respect to eps_k: B_k from this step plus D_{k+1} from
    // the next step's history term; one predictor VJP serves both.
    std::vector<double> geps(d, 0.0);
    bool any = false;
    if (st.b != 0.0) {
      any = true;
      for (std::size_t i = 0; i < d; ++i) geps[i] += st.b * gx[k + 1][i];
    }
    if (k + 1 < n && tape.steps[k + 1].d != 0.0) {
      any = true;
      const double dd = tape.steps[k + 1].d;
      for (std::size_t i = 0; i < d; ++i) geps[i] += dd * gx[k + 2][i];
    }
    if (any) {
      const std::vector<double> back = pred.vjp(st.x, st.t, geps, conditioning);
      for (std::size_t i = 0; i < d; ++i) g[i] += back[i];
    }
    gx[k] = std::move(g);
  }
  return gx[0];
}

Latent invert(const Latent& x0, const std::vector<int>& steps, const NoisePredictor& pred,
              const DiffusionSchedule& s, SolverMethod method,
              const std::vector<double>* conditioning, const InvertOptions& opts) {
  (void)method;  // reverse-time updates are first-order for both solvers
  if (steps.empty()) throw std::invalid_argument("invert: empty timestep list");
  for (std::size_t i = 1; i < steps.size(); ++i)
    if (steps[i] <= steps[i - 1])
      throw std::invalid_argument("invert: timesteps must be strictly increasing");
  if (steps.back() > s.T || steps.front() < 1)
    throw std::invalid_argument("invert: timesteps out of range");
  if (x0.dim() != pred.dim()) throw std::invalid_argument("invert: latent size mismatch");

  std::vector<double> x = x0.values;
  int t_cur = 0;
  for (int t_next : steps) {
    const double at = s.alpha(t_cur), st = s.sigma(t_cur);
    const double an = s.alpha(t_next), sn = s.sigma(t_next);
    // First-order guess: the reverse-time update with eps at the current point.
    std::vector<double> eps(x.size(), 0.0);
    if (t_cur > 0) eps = pred.eval(x, t_cur, conditioning);
    std::vector<double> xn(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x0_hat = (x[i] - st * eps[i]) / at;
      xn[i] = an * x0_hat + sn * eps[i];
    }
    // Fixed-point refinement: solve the denoise step t_next -> t_cur for its
    // preimage, so the round trip composes to identity.
    const double coef = st - at * sn / an;
    for (int it = 0; it < opts.fixed_point_iters; ++it) {
      const std::vector<double> e = pred.eval(xn, t_next, conditioning);
      double delta = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double updated = (an / at) * (x[i] - coef * e[i]);
        delta = std::max(delta, std::abs(updated - xn[i]));
        xn[i] = updated;
      }
      if (delta < opts.tol) break;
    }
    x = std::move(xn);
    t_cur = t_next;
  }
  return Latent(std::move(x), x0.h, x0.w, x0.c);
}

namespace {

class GaussianPredictorImpl : public NoisePredictor {
 public:
  GaussianPredictorImpl(std::vector<double> mu, std::vector<double> diag,
                        const DiffusionSchedule& s)
      : mu_(std::move(mu)), diag_(std::move(diag)), schedule_(s) {
    for (double v : diag_)
      if (v <= 0.0) throw std::invalid_argument("gaussian predictor: Sigma must be PD");
  }

  GaussianPredictorImpl(std::vector<double> mu, Eigen::MatrixXd sigma,
                        const DiffusionSchedule& s)
      : mu_(std::move(mu)), full_(std::move(sigma)), schedule_(s) {
    if (full_.rows() != full_.cols() ||
        static_cast<std::size_t>(full_.rows()) != mu_.size())
      throw std::invalid_argument("gaussian predictor: Sigma shape mismatch");
    if (!full_.isApprox(full_.transpose(), 1e-10))
      throw std::invalid_argument("gaussian predictor: Sigma must be symmetric");
    const Eigen::LLT<Eigen::MatrixXd> llt(full_);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("gaussian predictor: Sigma must be PD");
  }

  std::size_t dim() const override { return mu_.size(); }

  std::vector<double> eval(const std::vector<double>& x, int t,
                           const std::vector<double>*) const override {
    return apply(x, t, true);
  }

  std::vector<double> vjp(const std::vector<double>& x, int t,
                          const std::vector<double>& v,
                          const std::vector<double>*) const override {
    (void)x;
    return apply(v, t, false);  // the kernel matrix is symmetric
  }

 private:
  // shifted: (x - sqrt(abar) mu) before the solve; plain linear map otherwise.
  std::vector<double> apply(const std::vector<double>& x, int t, bool shifted) const {
    if (t < 0 || t > schedule_.T) throw std::invalid_argument("predictor: t out of range");
    const double ab = schedule_.abar(t);
    const double scale = std::sqrt(1.0 - ab);
    std::vector<double> out(x.size());
    if (!diag_.empty()) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double rhs = shifted ? x[i] - std::sqrt(ab) * mu_[i] : x[i];
        out[i] = scale * rhs / (ab * diag_[i] + (1.0 - ab));
      }
      return out;
    }
    Eigen::VectorXd rhs(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      rhs[i] = shifted ? x[i] - std::sqrt(ab) * mu_[i] : x[i];
    const Eigen::VectorXd sol = solver_for(t).solve(rhs);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = scale * sol[i];
    return out;
  }

  const Eigen::LLT<Eigen::MatrixXd>& solver_for(int t) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(t);
    if (it == cache_.end()) {
      const double ab = schedule_.abar(t);
      Eigen::MatrixXd m = ab * full_;
      m.diagonal().array() += 1.0 - ab;
      it = cache_.emplace(t, Eigen::LLT<Eigen::MatrixXd>(m)).first;
    }
    return it->second;
  }

  std::vector<double> mu_;
  std::vector<double> diag_;
  Eigen::MatrixXd full_;
  DiffusionSchedule schedule_;
  mutable std::mutex mutex_;
  mutable std::map<int, Eigen::LLT<Eigen::MatrixXd>> cache_;
};

}  // namespace

std::shared_ptr<NoisePredictor> gaussian_predictor(const std::vector<double>& mu,
                                                   const std::vector<double>& sigma_diag,
                                                   const DiffusionSchedule& s) {
  if (mu.size() != sigma_diag.size())
    throw std::invalid_argument("gaussian predictor: size mismatch");
  return std::make_shared<GaussianPredictorImpl>(mu, sigma_diag, s);
}

std::shared_ptr<NoisePredictor> gaussian_predictor(const std::vector<double>& mu,
                                                   const Eigen::MatrixXd& sigma,
                                                   const DiffusionSchedule& s) {
  return std::make_shared<GaussianPredictorImpl>(mu, sigma, s);
}

int LinearPredictor::bucket_of(int t) const {
  if (t < 1) t = 1;
  auto it = std::upper_bound(boundaries_.begin(), boundaries_.end(),
                             static_cast<std::uint32_t>(t));
  int b = static_cast<int>(std::distance(boundaries_.begin(), it)) - 1;
  return std::clamp(b, 0, bucket_count() - 1);
}

std::vector<double> LinearPredictor::eval(const std::vector<double>& x, int t,
                                          const std::vector<double>*) const {
  const int b = bucket_of(t);
  const auto& W = weights_[b];
  const auto& c = offsets_[b];
  std::vector<double> out(d_);
  if (diagonal_) {
    for (std::size_t i = 0; i < d_; ++i) out[i] = W[i] * x[i] + c[i];
  } else {
    for (std::size_t i = 0; i < d_; ++i) {
      double acc = c[i];
      const double* row = &W[i * d_];
      for (std::size_t j = 0; j < d_; ++j) acc += row[j] * x[j];
      out[i] = acc;
    }
  }
  return out;
}

std::vector<double> LinearPredictor::vjp(const std::vector<double>& x, int t,
                                         const std::vector<double>& v,
                                         const std::vector<double>*) const {
  (void)x;
  const int b = bucket_of(t);
  const auto& W = weights_[b];
  std::vector<double> out(d_, 0.0);
  if (diagonal_) {
    for (std::size_t i = 0; i < d_; ++i) out[i] = W[i] * v[i];
  } else {
    for (std::size_t i = 0; i < d_; ++i) {
      const double* row = &W[i * d_];
      for (std::size_t j = 0; j < d_; ++j) out[j] += row[j] * v[i];
    }
  }
  return out;
}

void LinearPredictor::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write("CSMLP1", 6);
  const std::uint32_t d32 = static_cast<std::uint32_t>(d_);
  const std::uint32_t nb = static_cast<std::uint32_t>(bucket_count());
  const std::uint32_t kind = diagonal_ ? 1u : 0u;
  f.write(reinterpret_cast<const char*>(&d32), 4);
  f.write(reinterpret_cast<const char*>(&nb), 4);
  f.write(reinterpret_cast<const char*>(&kind), 4);
  f.write(reinterpret_cast<const char*>(boundaries_.data()),
          static_cast<std::streamsize>(boundaries_.size() * 4));
  for (int b = 0; b < bucket_count(); ++b) {
    f.write(reinterpret_cast<const char*>(weights_[b].data()),
            static_cast<std::streamsize>(weights_[b].size() * 8));
    f.write(reinterpret_cast<const char*>(offsets_[b].data()),
            static_cast<std::streamsize>(offsets_[b].size() * 8));
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

LinearPredictor LinearPredictor::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[6];
  f.read(magic, 6);
  if (!f || std::string(magic, 6) != "CSMLP1")
    throw std::runtime_error("bad predictor file magic in " + path);
  std::uint32_t d32 = 0, nb = 0, kind = 0;
  f.read(reinterpret_cast<char*>(&d32), 4);
  f.read(reinterpret_cast<char*>(&nb), 4);
  f.read(reinterpret_cast<char*>(&kind), 4);
  if (!f || nb == 0 || d32 == 0) throw std::runtime_error("corrupt predictor header");
  LinearPredictor p;
  p.d_ = d32;
  p.diagonal_ = kind == 1;
  p.boundaries_.resize(nb + 1);
  f.read(reinterpret_cast<char*>(p.boundaries_.data()), (nb + 1) * 4);
  const std::size_t wsize = p.diagonal_ ? p.d_ : p.d_ * p.d_;
  p.weights_.resize(nb);
  p.offsets_.resize(nb);
  for (std::uint32_t b = 0; b < nb; ++b) {
    p.weights_[b].resize(wsize);
    p.offsets_[b].resize(p.d_);
    f.read(reinterpret_cast<char*>(p.weights_[b].data()),
           static_cast<std::streamsize>(wsize * 8));
    f.read(reinterpret_cast<char*>(p.offsets_[b].data()),
           static_cast<std::streamsize>(p.d_ * 8));
  }
  if (!f) throw std::runtime_error("truncated predictor file " + path);
  return p;
}

LinearPredictor train_linear_predictor(const std::vector<Latent>& dataset,
                                       const DiffusionSchedule& s, int buckets,
                                       bool diagonal, std::uint64_t seed,
                                       int samples_per_item, double ridge) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const std::size_t d = dataset.front().dim();
  const std::size_t total = dataset.size() * static_cast<std::size_t>(samples_per_item);
  if (diagonal && total < 100)
    throw std::length_error("train: need >= 100 samples for diagonal mode");
  if (!diagonal && total < 10 * d)
    throw std::length_error(
        "train: need >= 10*d samples for dense mode; consider diagonal mode");

  LinearPredictor p;
  p.d_ = d;
  p.diagonal_ = diagonal;
  p.boundaries_.resize(buckets + 1);
  for (int b = 0; b <= buckets; ++b)
    p.boundaries_[b] = static_cast<std::uint32_t>(1 + (static_cast<std::int64_t>(s.T) * b) / buckets);
  p.boundaries_.back() = static_cast<std::uint32_t>(s.T + 1);

  if (diagonal)
    p.weights_.assign(buckets, std::vector<double>(d, 0.0));
  else
    p.weights_.assign(buckets, std::vector<double>(d * d, 0.0));
  p.offsets_.assign(buckets, std::vector<double>(d, 0.0));

  auto rng = make_rng(seed, 0xd1ff);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> tdist(1, s.T);

  if (diagonal) {
    // Per-bucket, per-coordinate 2x2 normal equations.
    struct Acc {
      double sxx = 0, sx = 0, sxy = 0, sy = 0;
      std::uint64_t n = 0;
    };
    std::vector<std::vector<Acc>> acc(buckets, std::vector<Acc>(d));
    for (const Latent& item : dataset) {
      for (int r = 0; r < samples_per_item; ++r) {
        const int t = tdist(rng);
        const int b = p.bucket_of(t);
        const double a = s.alpha(t), sg = s.sigma(t);
        for (std::size_t i = 0; i < d; ++i) {
          const double eps = gauss(rng);
          const double xt = a * item.values[i] + sg * eps;
          auto& e = acc[b][i];
          e.sxx += xt * xt;
          e.sx += xt;
          e.sxy += xt * eps;
          e.sy += eps;
          ++e.n;
        }
      }
    }
    for (int b = 0; b < buckets; ++b) {
      for (std::size_t i = 0; i < d; ++i) {
        const auto& e = acc[b][i];
        if (e.n == 0) continue;
        const double n = static_cast<double>(e.n);
        const double det = (e.sxx + ridge) * n - e.sx * e.sx;
        if (std::abs(det) < 1e-30) continue;
        p.weights_[b][i] = (e.sxy * n - e.sx * e.sy) / det;
        p.offsets_[b][i] = (e.sy - p.weights_[b][i] * e.sx) / n;
      }
    }
  } else {
    std::vector<Eigen::MatrixXd> xtx(buckets, Eigen::MatrixXd::Zero(d + 1, d + 1));
    std::vector<Eigen::MatrixXd> xty(buckets, Eigen::MatrixXd::Zero(d + 1, d));
    Eigen::VectorXd row(d + 1);
    Eigen::VectorXd eps(d);
    for (const Latent& item : dataset) {
      for (int r = 0; r < samples_per_item; ++r) {
        const int t = tdist(rng);
        const int b = p.bucket_of(t);
        const double a = s.alpha(t), sg = s.sigma(t);
        for (std::size_t i = 0; i < d; ++i) {
          eps[i] = gauss(rng);
          row[i] = a * item.values[i] + sg * eps[i];
        }
        row[d] = 1.0;
        xtx[b].noalias() += row * row.transpose();
        xty[b].noalias() += row * eps.transpose();
      }
    }
    for (int b = 0; b < buckets; ++b) {
      Eigen::MatrixXd m = xtx[b];
      m.diagonal().array() += ridge;
      const Eigen::MatrixXd sol = m.ldlt().solve(xty[b]);  // (d+1) x d
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) p.weights_[b][i * d + j] = sol(j, i);
        p.offsets_[b][i] = sol(d, i);
      }
    }
  }
  return p;
}

}  // namespace csmap
