#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace csmap {

/// Scaled-linear beta schedule with cumulative products kept in log space.
struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta;       // beta[t-1], t = 1..T
  std::vector<double> alpha_bar;  // alpha_bar[t], t = 0..T; alpha_bar[0] = 1

  double abar(int t) const { return alpha_bar[t]; }
  double alpha(int t) const { return std::sqrt(alpha_bar[t]); }          // sqrt(abar)
  double sigma(int t) const { return std::sqrt(1.0 - alpha_bar[t]); }    // sqrt(1-abar)
};

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end);

/// Flat latent vector with raster shape metadata.
struct Latent {
  std::vector<double> values;
  int h = 0, w = 0, c = 0;

  Latent() = default;
  Latent(std::vector<double> v, int h_, int w_, int c_)
      : values(std::move(v)), h(h_), w(w_), c(c_) {}
  std::size_t dim() const { return values.size(); }
};

/// Noise predictor interface: evaluation plus a vector-Jacobian product with
/// respect to the latent. The optional conditioning raster is accepted by
/// the interface; the built-in linear predictors ignore it.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> eval(const std::vector<double>& x, int t,
                                   const std::vector<double>* conditioning = nullptr) const = 0;
  virtual std::vector<double> vjp(const std::vector<double>& x, int t,
                                  const std::vector<double>& v,
                                  const std::vector<double>* conditioning = nullptr) const = 0;
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t in [0, T].
Latent forward_sample(const Latent& x0, int t, const Latent& eps,
                      const DiffusionSchedule& s);

enum class SolverMethod { ddim, multistep2 };

/// Forward pass record: each update is x_{k+1} = a x_k + b eps_k
/// + c x_{k-1} + d eps_{k-1}, which makes the adjoint mechanical.
struct DenoiseTape {
  struct Step {
    int t = 0;
    double a = 0, b = 0, c = 0, d = 0;
    std::vector<double> x;  // evaluation point of eps_k
  };
  std::vector<Step> steps;
  std::vector<double> out;
};

/// Deterministic reverse solve from x_T to x_0 along strictly decreasing
/// timesteps (first <= T, last >= 1).
Latent denoise(const Latent& xT, const std::vector<int>& steps, const NoisePredictor& pred,
               const DiffusionSchedule& s, SolverMethod method = SolverMethod::ddim,
               const std::vector<double>* conditioning = nullptr,
               DenoiseTape* tape = nullptr);

/// Backpropagates grad_out through a recorded denoise chain; returns
/// d(loss)/d(x_T).
std::vector<double> denoise_vjp(const DenoiseTape& tape, const NoisePredictor& pred,
                                const std::vector<double>& grad_out,
                                const std::vector<double>* conditioning = nullptr);

struct InvertOptions {
  // Per-step fixed-point refinement of the reverse-time update; 0 keeps the
  // plain first-order inversion.
  int fixed_point_iters = 20;
  double tol = 1e-13;
};

/// Traces x_0 back along the denoising trajectory to x_T; steps strictly
/// increasing, mirroring the denoise schedule.
Latent invert(const Latent& x0, const std::vector<int>& steps, const NoisePredictor& pred,
              const DiffusionSchedule& s, SolverMethod method = SolverMethod::ddim,
              const std::vector<double>* conditioning = nullptr,
              const InvertOptions& opts = {});

/// Exact conditional-mean predictor for x0 ~ N(mu, Sigma):
/// eps(x,t) = sqrt(1-abar) (abar Sigma + (1-abar) I)^-1 (x - sqrt(abar) mu).
std::shared_ptr<NoisePredictor> gaussian_predictor(const std::vector<double>& mu,
                                                   const std::vector<double>& sigma_diag,
                                                   const DiffusionSchedule& s);
std::shared_ptr<NoisePredictor> gaussian_predictor(const std::vector<double>& mu,
                                                   const Eigen::MatrixXd& sigma,
                                                   const DiffusionSchedule& s);

/// Per-timestep-bucket affine predictor eps = W x + c, W dense or diagonal.
class LinearPredictor : public NoisePredictor {
 public:
  std::size_t dim() const override { return d_; }
  std::vector<double> eval(const std::vector<double>& x, int t,
                           const std::vector<double>* conditioning = nullptr) const override;
  std::vector<double> vjp(const std::vector<double>& x, int t,
                          const std::vector<double>& v,
                          const std::vector<double>* conditioning = nullptr) const override;

  int bucket_of(int t) const;
  int bucket_count() const { return static_cast<int>(weights_.size()); }
  bool diagonal() const { return diagonal_; }

  void save(const std::string& path) const;
  static LinearPredictor load(const std::string& path);

  friend LinearPredictor train_linear_predictor(const std::vector<Latent>&,
                                                const DiffusionSchedule&, int, bool,
                                                std::uint64_t, int, double);

 private:
  std::size_t d_ = 0;
  bool diagonal_ = true;
  std::vector<std::uint32_t> boundaries_;      // bucket b covers [boundaries_[b], boundaries_[b+1])
  std::vector<std::vector<double>> weights_;   // per bucket: d*d (dense) or d (diagonal)
  std::vector<std::vector<double>> offsets_;   // per bucket: d
};

/// Ridge regression of eps on x_t over sampled (x0, eps, t) triples, per
/// timestep bucket. Dense mode needs >= 10 d samples, diagonal >= 100.
LinearPredictor train_linear_predictor(const std::vector<Latent>& dataset,
                                       const DiffusionSchedule& s, int buckets = 10,
                                       bool diagonal = true, std::uint64_t seed = 0,
                                       int samples_per_item = 4, double ridge = 1e-6);

}  // namespace csmap
