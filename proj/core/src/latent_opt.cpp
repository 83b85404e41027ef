#include "csmapping/latent_opt.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csmapping/parallel.hpp"
#include "csmapping/rng.hpp"

namespace csmap {

GaussianBasisSet generate_basis(std::size_t d, int K, std::uint64_t seed,
                                const Latent& anchor, bool orthogonalize_anchor) {
  if (K < 1 || static_cast<std::size_t>(K) >= d)
    throw std::invalid_argument("generate_basis: need 1 <= K < d");
  if (anchor.dim() != d) throw std::invalid_argument("generate_basis: anchor size mismatch");

  auto rng = make_rng(seed, 0xba515);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd A(d, K);
  for (std::size_t i = 0; i < d; ++i)
    for (int j = 0; j < K; ++j) A(i, j) = gauss(rng);

  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(d, K);
  const double scale = std::sqrt(static_cast<double>(d));

  GaussianBasisSet out;
  out.anchor = anchor;
  out.seed = seed;
  out.directions.assign(K, std::vector<double>(d));
  for (int j = 0; j < K; ++j)
    for (std::size_t i = 0; i < d; ++i) out.directions[j][i] = scale * Q(i, j);

  if (orthogonalize_anchor) {
    // Remove the direction components, then restore the sqrt(d) norm.
    std::vector<double>& a = out.anchor.values;
    for (int j = 0; j < K; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += a[i] * out.directions[j][i];
      dot /= static_cast<double>(d);  // directions have squared norm d
      for (std::size_t i = 0; i < d; ++i) a[i] -= dot * out.directions[j][i];
    }
    double norm = 0.0;
    for (double v : a) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 1e-12)
      for (double& v : a) v *= scale / norm;
  }
  return out;
}

Latent compose_latent(const GaussianBasisSet& basis, const std::vector<double>& w) {
  if (w.size() != static_cast<std::size_t>(basis.K()) + 1)
    throw std::invalid_argument("compose_latent: weight count mismatch");
  Latent out = basis.anchor;
  for (auto& v : out.values) v *= w[0];
  for (int j = 0; j < basis.K(); ++j) {
    const double wj = w[j + 1];
    if (wj == 0.0) continue;
    const auto& b = basis.directions[j];
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += wj * b[i];
  }
  return out;
}

Latent LatentCodec::encode(const RasterStack& m) const {
  const int lh = latent_h(), lw = latent_w();
  Latent out;
  out.h = lh;
  out.w = lw;
  out.c = channels;
  out.values.assign(latent_dim(), 0.0);
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < lh; ++y) {
      for (int x = 0; x < lw; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += m.at(c, y * factor + dy, x * factor + dx);
        out.values[(static_cast<std::size_t>(c) * lh + y) * lw + x] = acc * inv;
      }
    }
  }
  return out;
}

namespace {

// Bilinear upsample weights for one output pixel: source coordinate in the
// pooled grid with edge clamping.
struct Bilinear {
  int x0, x1, y0, y1;
  double wx, wy;
};

Bilinear upsample_coeffs(int y, int x, int factor, int lh, int lw) {
  const double sx = (x + 0.5) / factor - 0.5;
  const double sy = (y + 0.5) / factor - 0.5;
  Bilinear b;
  const double fx = std::floor(sx), fy = std::floor(sy);
  b.x0 = std::clamp(static_cast<int>(fx), 0, lw - 1);
  b.x1 = std::clamp(b.x0 + 1, 0, lw - 1);
  b.y0 = std::clamp(static_cast<int>(fy), 0, lh - 1);
  b.y1 = std::clamp(b.y0 + 1, 0, lh - 1);
  b.wx = std::clamp(sx - fx, 0.0, 1.0);
  b.wy = std::clamp(sy - fy, 0.0, 1.0);
  return b;
}

}  // namespace

RasterStack LatentCodec::decode(const Latent& x) const {
  if (x.dim() != latent_dim()) throw std::invalid_argument("decode: latent size mismatch");
  GridSpec g = full;
  g.channels = channels;
  RasterStack out = RasterStack::zeros(RasterStack::Role::generated, g, channels);
  const int lh = latent_h(), lw = latent_w();
  for (int c = 0; c < channels; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * lh * lw;
    for (int y = 0; y < full.height; ++y) {
      for (int xp = 0; xp < full.width; ++xp) {
        const Bilinear b = upsample_coeffs(y, xp, factor, lh, lw);
        const double v00 = x.values[base + static_cast<std::size_t>(b.y0) * lw + b.x0];
        const double v01 = x.values[base + static_cast<std::size_t>(b.y0) * lw + b.x1];
        const double v10 = x.values[base + static_cast<std::size_t>(b.y1) * lw + b.x0];
        const double v11 = x.values[base + static_cast<std::size_t>(b.y1) * lw + b.x1];
        double v = (1 - b.wy) * ((1 - b.wx) * v00 + b.wx * v01) +
                   b.wy * ((1 - b.wx) * v10 + b.wx * v11);
        if (clamp_output) v = std::clamp(v, 0.0, 1.0);
        out.at(c, y, xp) = v;
      }
    }
  }
  return out;
}

std::vector<double> LatentCodec::decode_vjp(const Latent& x,
                                            const std::vector<double>& grad) const {
  if (grad.size() != full.cell_count() * channels)
    throw std::invalid_argument("decode_vjp: gradient size mismatch");
  std::vector<double> out(latent_dim(), 0.0);
  const int lh = latent_h(), lw = latent_w();
  for (int c = 0; c < channels; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * lh * lw;
    for (int y = 0; y < full.height; ++y) {
      for (int xp = 0; xp < full.width; ++xp) {
        const std::size_t gi =
            (static_cast<std::size_t>(c) * full.height + y) * full.width + xp;
        double gv = grad[gi];
        if (gv == 0.0) continue;
        const Bilinear b = upsample_coeffs(y, xp, factor, lh, lw);
        if (clamp_output) {
          const double v00 = x.values[base + static_cast<std::size_t>(b.y0) * lw + b.x0];
          const double v01 = x.values[base + static_cast<std::size_t>(b.y0) * lw + b.x1];
          const double v10 = x.values[base + static_cast<std::size_t>(b.y1) * lw + b.x0];
          const double v11 = x.values[base + static_cast<std::size_t>(b.y1) * lw + b.x1];
          const double v = (1 - b.wy) * ((1 - b.wx) * v00 + b.wx * v01) +
                           b.wy * ((1 - b.wx) * v10 + b.wx * v11);
          if (v <= 0.0 || v >= 1.0) continue;  // saturated: zero subgradient
        }
        out[base + static_cast<std::size_t>(b.y0) * lw + b.x0] += gv * (1 - b.wy) * (1 - b.wx);
        out[base + static_cast<std::size_t>(b.y0) * lw + b.x1] += gv * (1 - b.wy) * b.wx;
        out[base + static_cast<std::size_t>(b.y1) * lw + b.x0] += gv * b.wy * (1 - b.wx);
        out[base + static_cast<std::size_t>(b.y1) * lw + b.x1] += gv * b.wy * b.wx;
      }
    }
  }
  return out;
}

namespace {

void renormalize(std::vector<double>& w) {
  double norm = 0.0;
  for (double v : w) norm += v * v;
  norm = std::sqrt(norm);
  if (norm < 1e-300) throw std::runtime_error("weight vector collapsed to zero");
  for (double& v : w) v /= norm;
}

}  // namespace

MapEval eval_map(const GaussianBasisSet& basis, const NoisePredictor& pred,
                 const LatentCodec& codec, const OptimizeConfig& cfg,
                 const std::vector<double>& w, bool with_tape) {
  if (!cfg.schedule) throw std::invalid_argument("eval_map: schedule not set");
  const Latent xT = compose_latent(basis, w);
  MapEval out;
  out.x0 = denoise(xT, cfg.steps, pred, *cfg.schedule, cfg.method, cfg.conditioning,
                   with_tape ? &out.tape : nullptr);
  out.map = codec.decode(out.x0);
  return out;
}

std::vector<double> pullback_to_weights(const GaussianBasisSet& basis,
                                        const NoisePredictor& pred, const LatentCodec& codec,
                                        const OptimizeConfig& cfg, const MapEval& eval,
                                        const std::vector<double>& grad_map) {
  const std::vector<double> glatent = codec.decode_vjp(eval.x0, grad_map);
  const std::vector<double> gxT = denoise_vjp(eval.tape, pred, glatent, cfg.conditioning);
  std::vector<double> grad(basis.K() + 1, 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < gxT.size(); ++i) acc += gxT[i] * basis.anchor.values[i];
  grad[0] = acc;
  for (int j = 0; j < basis.K(); ++j) {
    acc = 0.0;
    const auto& b = basis.directions[j];
    for (std::size_t i = 0; i < gxT.size(); ++i) acc += gxT[i] * b[i];
    grad[j + 1] = acc;
  }
  return grad;
}

double loss_and_gradient(const GaussianBasisSet& basis, const NoisePredictor& pred,
                         const LatentCodec& codec, const RasterStack& target,
                         const RasterStack& mask, const OptimizeConfig& cfg,
                         const std::vector<double>& w, std::vector<double>* grad) {
  const MapEval eval = eval_map(basis, pred, codec, cfg, w, grad != nullptr);
  const double loss = masked_l2(eval.map, target, mask);
  if (grad) {
    const std::vector<double> graster = masked_l2_grad(eval.map, target, mask);
    *grad = pullback_to_weights(basis, pred, codec, cfg, eval, graster);
  }
  return loss;
}

bool spherical_step(SphericalState& state, const SphericalLossFn& eval,
                    const OptimizeConfig& cfg, int iteration) {
  std::vector<double> grad;
  state.loss = eval(state.w, &grad);
  if (!std::isfinite(state.loss))
    throw std::runtime_error("optimize: non-finite loss at iteration " +
                             std::to_string(iteration));
  // Tangent projection.
  double gw = 0.0;
  for (std::size_t i = 0; i < state.w.size(); ++i) gw += grad[i] * state.w[i];
  double gnorm = 0.0;
  for (std::size_t i = 0; i < state.w.size(); ++i) {
    grad[i] -= gw * state.w[i];
    gnorm += grad[i] * grad[i];
  }
  gnorm = std::sqrt(gnorm);
  if (!std::isfinite(gnorm))
    throw std::runtime_error("optimize: non-finite gradient at iteration " +
                             std::to_string(iteration));
  if (state.step_scale < 0.0)
    state.step_scale = gnorm > 1e-300 ? cfg.step_size / gnorm : 0.0;

  double eta = state.step_scale;
  std::vector<double> w_try(state.w.size());
  for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
    for (std::size_t i = 0; i < state.w.size(); ++i)
      w_try[i] = state.w[i] - eta * grad[i];
    renormalize(w_try);
    const double new_loss = eval(w_try, nullptr);
    if (new_loss < state.loss) {
      state.w = w_try;
      state.loss = new_loss;
      return true;
    }
    eta *= 0.5;
  }
  return false;
}

OptimizeResult optimize(const GaussianBasisSet& basis, const NoisePredictor& pred,
                        const LatentCodec& codec, const RasterStack& target,
                        const RasterStack& mask, const OptimizeConfig& cfg) {
  SphericalState state;
  state.w.assign(basis.K() + 1, 0.0);
  state.w[0] = 1.0;

  OptimizeResult out;
  auto evaluate = [&](const std::vector<double>& wv, std::vector<double>* g) {
    return loss_and_gradient(basis, pred, codec, target, mask, cfg, wv, g);
  };

  state.loss = evaluate(state.w, nullptr);
  out.w = state.w;
  out.best_loss = state.loss;

  for (int it = 0; it < cfg.iterations; ++it) {
    spherical_step(state, evaluate, cfg, it);
    out.loss_trace.push_back(state.loss);
    if (state.loss < out.best_loss) {
      out.best_loss = state.loss;
      out.w = state.w;
    }
  }

  const Latent xT = compose_latent(basis, out.w);
  out.x0 = denoise(xT, cfg.steps, pred, *cfg.schedule, cfg.method, cfg.conditioning);
  out.map = codec.decode(out.x0);
  return out;
}

double prior_score(const Latent& x0, const NoisePredictor& pred, const DiffusionSchedule& s,
                   int n_timesteps, int draws, std::uint64_t seed,
                   const std::vector<double>* conditioning) {
  if (n_timesteps < 1 || draws < 1)
    throw std::invalid_argument("prior_score: need n_timesteps >= 1, draws >= 1");
  auto rng = make_rng(seed, 0x5c04e);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double acc = 0.0;
  int used = 0;
  Latent eps = x0;
  for (int j = 1; j <= n_timesteps; ++j) {
    const int t = std::clamp(static_cast<int>(std::lround(
                                 static_cast<double>(j) * s.T / n_timesteps)),
                             1, s.T);
    for (int k = 0; k < draws; ++k) {
      for (auto& v : eps.values) v = gauss(rng);
      const Latent xt = forward_sample(x0, t, eps, s);
      const std::vector<double> predicted = pred.eval(xt.values, t, conditioning);
      double dot = 0.0, ne = 0.0, np = 0.0;
      for (std::size_t i = 0; i < predicted.size(); ++i) {
        dot += eps.values[i] * predicted[i];
        ne += eps.values[i] * eps.values[i];
        np += predicted[i] * predicted[i];
      }
      if (np < 1e-30 || ne < 1e-30) continue;  // zero-norm prediction: skip draw
      acc += dot / std::sqrt(ne * np);
      ++used;
    }
  }
  if (used == 0) throw std::runtime_error("prior_score: all draws degenerate");
  return acc / used;
}

double masked_iou(const RasterStack& map, const RasterStack& target,
                  const RasterStack& mask) {
  RasterStack binary = map;
  for (auto& v : binary.data) v = v >= 0.5 ? 1.0 : 0.0;
  const IouReport rep = iou_metrics(binary, target, mask);
  return rep.miou;
}

MultiStartResult multi_start(const GaussianBasisSet& basis, const NoisePredictor& pred,
                             const LatentCodec& codec, const RasterStack& target,
                             const RasterStack& mask, const DiffusionSchedule& schedule,
                             const OptimizeConfig& opt_cfg, const MultiStartConfig& cfg) {
  if (cfg.starts < 1) throw std::invalid_argument("multi_start: need starts >= 1");
  const std::size_t d = basis.dim();
  double anchor_norm = 0.0;
  for (double v : basis.anchor.values) anchor_norm += v * v;
  anchor_norm = std::sqrt(anchor_norm);
  const double sigma =
      cfg.sigma > 0.0 ? cfg.sigma : 0.1 * anchor_norm / std::sqrt(static_cast<double>(d));

  MultiStartResult out;
  out.candidates.resize(cfg.starts);
  parallel_for(cfg.starts, [&](std::size_t i) {
    GaussianBasisSet local = basis;  // shared directions, per-start anchor
    if (i > 0) {
      auto rng = make_rng(cfg.seed, 0x707 + i);
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (auto& v : local.anchor.values) v += sigma * gauss(rng);
    }
    StartCandidate cand;
    cand.opt = optimize(local, pred, codec, target, mask, opt_cfg);
    cand.likelihood = masked_iou(cand.opt.map, target, mask);
    cand.prior = prior_score(cand.opt.x0, pred, schedule, cfg.prior_timesteps,
                             cfg.prior_draws, mix_seed(cfg.seed, 0x9e + i),
                             opt_cfg.conditioning);
    out.candidates[i] = std::move(cand);
  });

  const double floor = cfg.likelihood_floor_frac * out.candidates[0].likelihood;
  int best = -1, best_lik = 0;
  for (int i = 0; i < cfg.starts; ++i) {
    auto& c = out.candidates[i];
    c.discarded = c.likelihood < floor;
    c.score = cfg.weight_likelihood * c.likelihood + cfg.weight_prior * c.prior;
    if (!c.discarded && (best < 0 || c.score > out.candidates[best].score)) best = i;
    if (c.likelihood > out.candidates[best_lik].likelihood) best_lik = i;
  }
  if (best < 0) {
    out.all_discarded = true;
    best = best_lik;
  }
  out.winner = best;
  return out;
}

}  // namespace csmap
