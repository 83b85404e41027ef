#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "csmapping/diffusion.hpp"
#include "csmapping/raster.hpp"

namespace csmap {

/// Anchor b_0 = x_T^init plus K orthogonal Gaussian directions of norm
/// sqrt(d), from the reduced QR of a d x K standard-normal matrix.
struct GaussianBasisSet {
  Latent anchor;
  std::vector<std::vector<double>> directions;  // b_1..b_K
  std::uint64_t seed = 0;

  std::size_t dim() const { return anchor.dim(); }
  int K() const { return static_cast<int>(directions.size()); }
};

GaussianBasisSet generate_basis(std::size_t d, int K, std::uint64_t seed,
                                const Latent& anchor, bool orthogonalize_anchor = false);

/// x_T = sum_i w_i b_i (w_0 scales the anchor).
Latent compose_latent(const GaussianBasisSet& basis, const std::vector<double>& w);

/// Raster <-> latent transcoding without a learned autoencoder: average
/// pooling down, bilinear upsampling (optionally clamped to [0,1]) back up.
struct LatentCodec {
  GridSpec full;      // raster geometry; channels taken from `channels`
  int channels = 1;
  int factor = 4;     // pooling factor
  bool clamp_output = true;

  int latent_h() const { return full.height / factor; }
  int latent_w() const { return full.width / factor; }
  std::size_t latent_dim() const {
    return static_cast<std::size_t>(latent_h()) * latent_w() * channels;
  }
  Latent encode(const RasterStack& m) const;
  RasterStack decode(const Latent& x) const;
  /// Adjoint of decode as a linear map, with clamp zeroing saturated pixels.
  std::vector<double> decode_vjp(const Latent& x, const std::vector<double>& grad) const;
};

struct OptimizeConfig {
  const DiffusionSchedule* schedule = nullptr;
  std::vector<int> steps;                 // denoising steps inside the loop
  SolverMethod method = SolverMethod::ddim;
  int iterations = 60;
  double step_size = 0.3;                 // in weight-space units at iteration 0
  int max_backtracks = 8;
  const std::vector<double>* conditioning = nullptr;
};

struct OptimizeResult {
  std::vector<double> w;
  RasterStack map;
  Latent x0;
  std::vector<double> loss_trace;  // one entry per iteration (accepted loss)
  double best_loss = 0.0;
};

/// Projected gradient descent on the weight sphere for the masked l2
/// objective; returns the best-loss iterate.
OptimizeResult optimize(const GaussianBasisSet& basis, const NoisePredictor& pred,
                        const LatentCodec& codec, const RasterStack& target,
                        const RasterStack& mask, const OptimizeConfig& cfg);

/// One tangent-projected, renormalized gradient step with backtracking;
/// shared by optimize and the factor-graph sweeps so decoupled problems
/// take bit-identical trajectories.
using SphericalLossFn =
    std::function<double(const std::vector<double>&, std::vector<double>*)>;

struct SphericalState {
  std::vector<double> w;
  double loss = 0.0;
  double step_scale = -1.0;  // fixed from the first gradient
};

bool spherical_step(SphericalState& state, const SphericalLossFn& eval,
                    const OptimizeConfig& cfg, int iteration);

/// Loss and analytic weight gradient at w (shared by optimize and the
/// factor-graph sweeps).
double loss_and_gradient(const GaussianBasisSet& basis, const NoisePredictor& pred,
                         const LatentCodec& codec, const RasterStack& target,
                         const RasterStack& mask, const OptimizeConfig& cfg,
                         const std::vector<double>& w, std::vector<double>* grad);

/// Forward map evaluation with the recorded tape, for callers that need to
/// pull arbitrary raster gradients back to the weights.
struct MapEval {
  Latent x0;
  RasterStack map;
  DenoiseTape tape;
};

MapEval eval_map(const GaussianBasisSet& basis, const NoisePredictor& pred,
                 const LatentCodec& codec, const OptimizeConfig& cfg,
                 const std::vector<double>& w, bool with_tape = true);

std::vector<double> pullback_to_weights(const GaussianBasisSet& basis,
                                        const NoisePredictor& pred, const LatentCodec& codec,
                                        const OptimizeConfig& cfg, const MapEval& eval,
                                        const std::vector<double>& grad_map);

/// Mean cosine similarity between injected and predicted noise over N_t
/// uniform timesteps; in [-1, 1].
double prior_score(const Latent& x0, const NoisePredictor& pred, const DiffusionSchedule& s,
                   int n_timesteps, int draws, std::uint64_t seed,
                   const std::vector<double>* conditioning = nullptr);

struct MultiStartConfig {
  int starts = 1;
  double sigma = 0.0;                  // <= 0 selects 0.1 * ||anchor|| / sqrt(d)
  double likelihood_floor_frac = 0.5;  // of the unperturbed candidate's likelihood
  double weight_likelihood = 0.7;
  double weight_prior = 0.3;
  int prior_timesteps = 5;
  int prior_draws = 2;
  std::uint64_t seed = 0;
};

struct StartCandidate {
  OptimizeResult opt;
  double likelihood = 0.0;  // masked IoU against the target
  double prior = 0.0;
  double score = 0.0;
  bool discarded = false;
};

struct MultiStartResult {
  int winner = 0;
  std::vector<StartCandidate> candidates;
  bool all_discarded = false;
};

/// Optimizes from `starts` perturbed anchors (start 0 unperturbed, shared
/// direction set) and selects by the weighted likelihood/prior posterior
/// score. Candidates under the likelihood floor are discarded; if none
/// survive, the max-likelihood candidate wins with a warning flag.
MultiStartResult multi_start(const GaussianBasisSet& basis, const NoisePredictor& pred,
                             const LatentCodec& codec, const RasterStack& target,
                             const RasterStack& mask, const DiffusionSchedule& schedule,
                             const OptimizeConfig& opt_cfg, const MultiStartConfig& cfg);

/// Masked IoU (mean over defined classes) of a continuous map thresholded at
/// 0.5 against a binary target.
double masked_iou(const RasterStack& map, const RasterStack& target, const RasterStack& mask);

}  // namespace csmap
