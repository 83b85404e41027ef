#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <stdexcept>

#include "csmapping/diffusion.hpp"
#include "csmapping/rng.hpp"
#include "doctest.h"

using namespace csmap;

namespace {

const double kPaperBetaStart = 8.5e-4;
const double kPaperBetaEnd = 1.2e-2;

Latent random_latent(std::mt19937_64& rng, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Latent x;
  x.values.resize(d);
  for (auto& v : x.values) v = g(rng);
  x.h = 1;
  x.w = static_cast<int>(d);
  x.c = 1;
  return x;
}

std::vector<int> uniform_steps(int T, int n) {
  std::vector<int> steps;
  for (int i = 0; i < n; ++i) {
    const int t = static_cast<int>(std::lround(T - static_cast<double>(T - 1) * i / (n - 1)));
    if (steps.empty() || t < steps.back()) steps.push_back(t);
  }
  return steps;
}

double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

class ZeroPredictor : public NoisePredictor {
 public:
  explicit ZeroPredictor(std::size_t d) : d_(d) {}
  std::size_t dim() const override { return d_; }
  std::vector<double> eval(const std::vector<double>&, int,
                           const std::vector<double>*) const override {
    return std::vector<double>(d_, 0.0);
  }
  std::vector<double> vjp(const std::vector<double>&, int, const std::vector<double>&,
                          const std::vector<double>*) const override {
    return std::vector<double>(d_, 0.0);
  }

 private:
  std::size_t d_;
};

}  // namespace

TEST_CASE("make_schedule matches the scaled-linear endpoints") {
  const auto s = make_schedule(1000, kPaperBetaStart, kPaperBetaEnd);
  CHECK(s.beta.front() == doctest::Approx(kPaperBetaStart));
  CHECK(s.beta.back() == doctest::Approx(kPaperBetaEnd));
  CHECK(s.alpha_bar[0] == 1.0);
  for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
  CHECK(s.abar(1000) < 0.01);

  const auto single = make_schedule(1, 0.1, 0.2);
  CHECK(single.beta[0] == doctest::Approx(0.1));

  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.2, 0.1), std::invalid_argument);
}

TEST_CASE("forward_sample") {
  const auto s = make_schedule(100, 1e-3, 2e-2);
  auto rng = make_rng(1);
  const Latent x0 = random_latent(rng, 8);
  const Latent eps = random_latent(rng, 8);

  const Latent same = forward_sample(x0, 0, eps, s);
  for (std::size_t i = 0; i < 8; ++i) CHECK(same.values[i] == doctest::Approx(x0.values[i]));

  Latent zero = x0;
  for (auto& v : zero.values) v = 0.0;
  const Latent scaled = forward_sample(zero, 50, eps, s);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(scaled.values[i] == doctest::Approx(s.sigma(50) * eps.values[i]));

  CHECK_THROWS_AS(forward_sample(x0, 101, eps, s), std::invalid_argument);
}

TEST_CASE("forward_sample variance matches the closed form") {
  const auto s = make_schedule(200, 1e-3, 2e-2);
  auto rng = make_rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  const int t = 120;
  const double var_x0 = 2.25;
  double acc = 0.0, acc2 = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    Latent x0({std::sqrt(var_x0) * g(rng)}, 1, 1, 1);
    Latent eps({g(rng)}, 1, 1, 1);
    const double v = forward_sample(x0, t, eps, s).values[0];
    acc += v;
    acc2 += v * v;
  }
  const double mean = acc / n;
  const double var = acc2 / n - mean * mean;
  const double expect = s.abar(t) * var_x0 + (1.0 - s.abar(t));
  CHECK(std::abs(var - expect) / expect < 0.02);
}

TEST_CASE("denoise with zero predictor follows the closed-form chain") {
  const auto s = make_schedule(500, kPaperBetaStart, kPaperBetaEnd);
  auto rng = make_rng(3);
  const Latent xT = random_latent(rng, 6);
  const ZeroPredictor zero(6);
  const auto steps = uniform_steps(500, 8);
  const Latent x0 = denoise(xT, steps, zero, s);
  // eps == 0: the first step fixes x0 = x_T / alpha(t_first), later steps keep it.
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(x0.values[i] == doctest::Approx(xT.values[i] / s.alpha(500)));

  const Latent single = denoise(xT, {500}, zero, s);
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(single.values[i] == doctest::Approx(xT.values[i] / s.alpha(500)));

  CHECK_THROWS_AS(denoise(xT, {10, 10}, zero, s), std::invalid_argument);
  CHECK_THROWS_AS(denoise(xT, {}, zero, s), std::invalid_argument);
}

TEST_CASE("denoise deterministic") {
  const auto s = make_schedule(300, kPaperBetaStart, kPaperBetaEnd);
  auto rng = make_rng(4);
  const Latent xT = random_latent(rng, 12);
  const Latent mu = random_latent(rng, 12);
  std::vector<double> diag(12, 1.3);
  const auto pred = gaussian_predictor(mu.values, diag, s);
  const auto steps = uniform_steps(300, 10);
  const Latent a = denoise(xT, steps, *pred, s);
  const Latent b = denoise(xT, steps, *pred, s);
  CHECK(a.values == b.values);
}

TEST_CASE("gaussian predictor closed form and limits") {
  const auto s = make_schedule(400, kPaperBetaStart, kPaperBetaEnd);
  const std::size_t d = 10;
  std::vector<double> mu(d, 0.0), diag(d, 1.0);
  const auto pred = gaussian_predictor(mu, diag, s);
  auto rng = make_rng(5);
  const Latent x = random_latent(rng, d);
  // mu = 0, Sigma = I: eps = sqrt(1-abar) x.
  const auto e = pred->eval(x.values, 200);
  for (std::size_t i = 0; i < d; ++i)
    CHECK(e[i] == doctest::Approx(s.sigma(200) * x.values[i]));
  // t -> 0 limit: prediction vanishes.
  const auto e0 = pred->eval(x.values, 1);
  for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(e0[i]) < 0.1);

  std::vector<double> bad(d, -1.0);
  CHECK_THROWS_AS(gaussian_predictor(mu, bad, s), std::invalid_argument);
}

TEST_CASE("gaussian predictor is the MSE-optimal linear predictor") {
  const auto s = make_schedule(100, 1e-3, 2e-2);
  const std::size_t d = 4;
  auto rng = make_rng(6);
  std::vector<double> mu(d, 0.5), diag{0.5, 1.0, 1.7, 2.4};
  const auto pred = gaussian_predictor(mu, diag, s);
  const int t = 60;
  std::normal_distribution<double> g(0.0, 1.0);
  // Monte Carlo MSE of the exact predictor vs coordinate-wise perturbed copies.
  double mse = 0.0, mse_hi = 0.0, mse_lo = 0.0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    std::vector<double> x(d), eps(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double x0 = mu[i] + std::sqrt(diag[i]) * g(rng);
      eps[i] = g(rng);
      x[i] = s.alpha(t) * x0 + s.sigma(t) * eps[i];
    }
    const auto e = pred->eval(x, t);
    for (std::size_t i = 0; i < d; ++i) {
      mse += (e[i] - eps[i]) * (e[i] - eps[i]);
      const double hi = e[i] * 1.07, lo = e[i] * 0.93;
      mse_hi += (hi - eps[i]) * (hi - eps[i]);
      mse_lo += (lo - eps[i]) * (lo - eps[i]);
    }
  }
  CHECK(mse < mse_hi);
  CHECK(mse < mse_lo);
}

TEST_CASE("predictor vjp matches finite differences") {
  const auto s = make_schedule(200, kPaperBetaStart, kPaperBetaEnd);
  const std::size_t d = 6;
  auto rng = make_rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  // Full covariance with off-diagonal structure.
  Eigen::MatrixXd A(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) A(i, j) = g(rng);
  Eigen::MatrixXd sigma = A * A.transpose() / static_cast<double>(d);
  sigma.diagonal().array() += 0.5;
  std::vector<double> mu(d, 0.2);
  const auto pred = gaussian_predictor(mu, sigma, s);

  const Latent x = random_latent(rng, d);
  const int t = 130;
  for (int trial = 0; trial < 10; ++trial) {
    const Latent v = random_latent(rng, d);
    const auto back = pred->vjp(x.values, t, v.values);
    // Directional derivative of <v, eval(x)> along random u.
    const Latent u = random_latent(rng, d);
    const double h = 1e-6;
    auto xp = x.values, xm = x.values;
    for (std::size_t i = 0; i < d; ++i) {
      xp[i] += h * u.values[i];
      xm[i] -= h * u.values[i];
    }
    const auto ep = pred->eval(xp, t);
    const auto em = pred->eval(xm, t);
    double fd = 0.0, an = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      fd += v.values[i] * (ep[i] - em[i]) / (2 * h);
      an += back[i] * u.values[i];
    }
    CHECK(std::abs(fd - an) / std::max(1e-12, std::abs(fd)) < 1e-5);
  }
}

TEST_CASE("invert closed form with zero predictor and exact single-step inverse") {
  const auto s = make_schedule(600, kPaperBetaStart, kPaperBetaEnd);
  auto rng = make_rng(8);
  const Latent x0 = random_latent(rng, 5);
  const ZeroPredictor zero(5);
  const Latent xT = invert(x0, {600}, zero, s);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(xT.values[i] == doctest::Approx(s.alpha(600) * x0.values[i]));

  // Zero predictor, single step T: denoise then invert is exact.
  const Latent down = denoise(xT, {600}, zero, s);
  const Latent up = invert(down, {600}, zero, s);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(std::abs(up.values[i] - xT.values[i]) < 1e-12);

  CHECK_THROWS_AS(invert(x0, {10, 5}, zero, s), std::invalid_argument);
}

TEST_CASE("round trip accuracy with the gaussian predictor") {
  const auto s = make_schedule(1000, kPaperBetaStart, kPaperBetaEnd);
  const std::size_t d = 8;
  auto rng = make_rng(9);
  std::vector<double> mu(d), diag(d);
  std::uniform_real_distribution<double> uv(0.5, 2.0);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < d; ++i) {
    mu[i] = g(rng);
    diag[i] = uv(rng);
  }
  const auto pred = gaussian_predictor(mu, diag, s);
  std::vector<double> x0v(d);
  for (std::size_t i = 0; i < d; ++i) x0v[i] = mu[i] + std::sqrt(diag[i]) * g(rng);
  const Latent x0(std::move(x0v), 1, static_cast<int>(d), 1);

  auto down = uniform_steps(1000, 50);
  auto up = down;
  std::reverse(up.begin(), up.end());

  const Latent xT = invert(x0, up, *pred, s);
  const Latent back = denoise(xT, down, *pred, s);
  CHECK(rel_l2(back.values, x0.values) < 1e-3);

  // Plain first-order inversion documents the inversion imperfection.
  InvertOptions first_order;
  first_order.fixed_point_iters = 0;
  const Latent xT1 = invert(x0, up, *pred, s, SolverMethod::ddim, nullptr, first_order);
  const Latent back1 = denoise(xT1, down, *pred, s);
  CHECK(rel_l2(back1.values, x0.values) > 1e-3);
  CHECK(rel_l2(back1.values, x0.values) < 0.1);

  // Coarse 3-step chain: larger error, still bounded.
  auto down3 = uniform_steps(1000, 3);
  auto up3 = down3;
  std::reverse(up3.begin(), up3.end());
  const Latent xT3 = invert(x0, up3, *pred, s);
  const Latent back3 = denoise(xT3, down3, *pred, s);
  CHECK(rel_l2(back3.values, x0.values) < 0.1);
}

TEST_CASE("denoise converges under step refinement and 2M beats first order") {
  const auto s = make_schedule(1000, kPaperBetaStart, kPaperBetaEnd);
  const std::size_t d = 8;
  auto rng = make_rng(10);
  std::vector<double> mu(d, 0.0), diag(d, 1.5);
  const auto pred = gaussian_predictor(mu, diag, s);
  const Latent xT = random_latent(rng, d);

  // Exact probability-flow endpoint for a diagonal Gaussian.
  std::vector<double> exact(d);
  const double ab = s.abar(1000);
  for (std::size_t i = 0; i < d; ++i)
    exact[i] = mu[i] + std::sqrt(diag[i] / (ab * diag[i] + 1.0 - ab)) *
                           (xT.values[i] - std::sqrt(ab) * mu[i]);

  double prev_err = 1e9;
  for (int n : {25, 50, 100, 200}) {
    const Latent out = denoise(xT, uniform_steps(1000, n), *pred, s);
    const double err = rel_l2(out.values, exact);
    CHECK(err < prev_err);
    prev_err = err;
  }
  // Doubling from an already fine grid changes the result by < 1%.
  const Latent a = denoise(xT, uniform_steps(1000, 200), *pred, s);
  const Latent b = denoise(xT, uniform_steps(1000, 400), *pred, s);
  CHECK(rel_l2(a.values, b.values) < 0.01);

  const Latent o1 = denoise(xT, uniform_steps(1000, 50), *pred, s, SolverMethod::ddim);
  const Latent o2 = denoise(xT, uniform_steps(1000, 50), *pred, s, SolverMethod::multistep2);
  CHECK(rel_l2(o2.values, exact) < rel_l2(o1.values, exact));
}

TEST_CASE("denoise_vjp matches finite differences for both solvers") {
  const auto s = make_schedule(500, kPaperBetaStart, kPaperBetaEnd);
  const std::size_t d = 5;
  auto rng = make_rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd A(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) A(i, j) = 0.3 * g(rng);
  Eigen::MatrixXd sigma = A * A.transpose();
  sigma.diagonal().array() += 1.0;
  std::vector<double> mu(d, -0.1);
  const auto pred = gaussian_predictor(mu, sigma, s);
  const auto steps = uniform_steps(500, 4);

  for (SolverMethod m : {SolverMethod::ddim, SolverMethod::multistep2}) {
    const Latent xT = random_latent(rng, d);
    DenoiseTape tape;
    denoise(xT, steps, *pred, s, m, nullptr, &tape);
    const Latent gout = random_latent(rng, d);
    const auto grad = denoise_vjp(tape, *pred, gout.values);

    const Latent dir = random_latent(rng, d);
    const double h = 1e-6;
    Latent xp = xT, xm = xT;
    for (std::size_t i = 0; i < d; ++i) {
      xp.values[i] += h * dir.values[i];
      xm.values[i] -= h * dir.values[i];
    }
    const Latent op = denoise(xp, steps, *pred, s, m);
    const Latent om = denoise(xm, steps, *pred, s, m);
    double fd = 0.0, an = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      fd += gout.values[i] * (op.values[i] - om.values[i]) / (2 * h);
      an += grad[i] * dir.values[i];
    }
    CHECK(std::abs(fd - an) / std::max(1e-12, std::abs(fd)) < 1e-6);
  }
}

TEST_CASE("trained diagonal linear predictor approaches the gaussian one") {
  const auto s = make_schedule(200, kPaperBetaStart, kPaperBetaEnd);
  const std::size_t d = 6;
  auto rng = make_rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> mu(d), diag(d);
  for (std::size_t i = 0; i < d; ++i) {
    mu[i] = 0.3 * g(rng);
    diag[i] = 1.0 + 0.5 * std::abs(g(rng));
  }
  std::vector<Latent> dataset;
  for (int k = 0; k < 3000; ++k) {
    Latent x;
    x.values.resize(d);
    for (std::size_t i = 0; i < d; ++i) x.values[i] = mu[i] + std::sqrt(diag[i]) * g(rng);
    dataset.push_back(std::move(x));
  }
  const int buckets = 8;
  // Small slopes in the low-noise buckets need a large sample count for a
  // 5% estimate.
  const auto lin = train_linear_predictor(dataset, s, buckets, true, 42, 200);
  // A trained bucket estimates the population regression of eps on x_t with
  // t pooled uniformly over the bucket; compare against that closed form
  // (Frobenius, diagonal gains).
  for (int b = 0; b < buckets; ++b) {
    const int t_lo = 1 + b * s.T / buckets;
    const int t_hi = 1 + (b + 1) * s.T / buckets;
    double frob_diff = 0.0, frob_ref = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double sxx = 0.0, sx = 0.0, sxy = 0.0, n = 0.0;
      for (int t = t_lo; t < t_hi; ++t) {
        const double a = s.alpha(t), sg = s.sigma(t);
        // E[x^2], E[x], E[x eps] at this t for x0 ~ N(mu_i, diag_i).
        sxx += a * a * (diag[i] + mu[i] * mu[i]) + sg * sg;
        sx += a * mu[i];
        sxy += sg;
        n += 1.0;
      }
      const double expected = sxy * n / (sxx * n - sx * sx);
      std::vector<double> x(d, 0.0);
      x[i] = 1.0;
      const auto e1 = lin.eval(x, t_lo);
      x[i] = 0.0;
      const auto e0 = lin.eval(x, t_lo);
      const double gain = e1[i] - e0[i];
      frob_diff += (gain - expected) * (gain - expected);
      frob_ref += expected * expected;
    }
    CHECK(std::sqrt(frob_diff / frob_ref) < 0.05);
  }

  CHECK_THROWS_AS(train_linear_predictor({dataset[0]}, s, 1, true, 0, 4),
                  std::length_error);
}

TEST_CASE("dense-mode training and vjp") {
  const auto s = make_schedule(100, 1e-3, 1e-2);
  const std::size_t d = 4;
  auto rng = make_rng(21);
  std::vector<Latent> dataset;
  for (int k = 0; k < 300; ++k) dataset.push_back(random_latent(rng, d));
  const auto lin = train_linear_predictor(dataset, s, 4, false, 11, 2);
  CHECK(!lin.diagonal());
  const Latent x = random_latent(rng, d);
  const Latent v = random_latent(rng, d);
  const Latent u = random_latent(rng, d);
  const auto back = lin.vjp(x.values, 50, v.values);
  const double h = 1e-6;
  auto xp = x.values, xm = x.values;
  for (std::size_t i = 0; i < d; ++i) {
    xp[i] += h * u.values[i];
    xm[i] -= h * u.values[i];
  }
  const auto ep = lin.eval(xp, 50);
  const auto em = lin.eval(xm, 50);
  double fd = 0.0, an = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    fd += v.values[i] * (ep[i] - em[i]) / (2 * h);
    an += back[i] * u.values[i];
  }
  CHECK(std::abs(fd - an) / std::max(1e-12, std::abs(fd)) < 1e-5);

  CHECK_THROWS_AS(train_linear_predictor(dataset, s, 4, false, 11, 0),
                  std::length_error);
}

TEST_CASE("single bucket single timestep trains one regression") {
  const auto s = make_schedule(1, 0.05, 0.05);
  auto rng = make_rng(13);
  std::vector<Latent> dataset;
  for (int k = 0; k < 200; ++k) dataset.push_back(random_latent(rng, 3));
  const auto lin = train_linear_predictor(dataset, s, 1, true, 7, 2);
  CHECK(lin.bucket_count() == 1);
  CHECK(lin.bucket_of(1) == 0);
}

TEST_CASE("linear predictor round trips through its binary format") {
  const auto s = make_schedule(100, 1e-3, 1e-2);
  auto rng = make_rng(14);
  std::vector<Latent> dataset;
  for (int k = 0; k < 500; ++k) dataset.push_back(random_latent(rng, 4));
  const auto lin = train_linear_predictor(dataset, s, 5, true, 9, 2);

  const auto path = std::filesystem::temp_directory_path() / "csmap_pred_test.bin";
  lin.save(path.string());
  const auto loaded = LinearPredictor::load(path.string());
  const Latent x = random_latent(rng, 4);
  for (int t : {1, 20, 50, 99, 100}) {
    const auto a = lin.eval(x.values, t);
    const auto b = loaded.eval(x.values, t);
    CHECK(a == b);
  }
  std::filesystem::remove(path);

  CHECK_THROWS_AS(LinearPredictor::load("/nonexistent/file.bin"), std::runtime_error);
}
