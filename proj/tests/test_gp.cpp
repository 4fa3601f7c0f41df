#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tvmagi/errors.hpp"
#include "tvmagi/gp.hpp"
#include "tvmagi/hyperfit.hpp"
#include "tvmagi/rng.hpp"

using namespace tvmagi;

TEST_CASE("gaussian_logpdf matches dense oracle") {
  Rng rng(11);
  for (int rep = 0; rep < 50; rep++) {
    int n = 1 + static_cast<int>(rng.uniform() * 8);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; i++)
      for (int j = 0; j < n; j++) a(i, j) = rng.normal();
    Eigen::MatrixXd cov = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd x(n), mu(n);
    for (int i = 0; i < n; i++) {
      x[i] = rng.normal();
      mu[i] = rng.normal();
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    double got = gaussian_logpdf(x, mu, llt);
    double want = oracle::dense_gaussian_logpdf(x, mu, cov);
    CHECK(std::fabs(got - want) < 1e-9 * std::max(1.0, std::fabs(want)));
  }
}

TEST_CASE("conditional derivative moments match joint-Gaussian oracle") {
  Rng rng(22);
  for (int rep = 0; rep < 200; rep++) {
    int n = 2 + static_cast<int>(rng.uniform() * 5);  // 2..6
    Eigen::VectorXd grid(n);
    double t = rng.uniform();
    for (int i = 0; i < n; i++) {
      grid[i] = t;
      t += 0.15 + rng.uniform();
    }
    KernelConfig cfg{0.5 + 2.0 * rng.uniform(), 0.5 + 2.5 * rng.uniform(), 1.3 + 2.0 * rng.uniform()};
    GpPriorSpec prior{cfg, rng.normal(), 0.0};
    auto gram = build_gram(cfg, grid, 1e-7);

    // joint covariance of (curve, derivative) built entry by entry
    Eigen::MatrixXd kj(n, n), kds(n, n), kdt(n, n), kdd(n, n);
    for (int i = 0; i < n; i++)
      for (int j = 0; j < n; j++) {
        auto kd = matern_cov_derivs(cfg, grid[i], grid[j]);
        kj(i, j) = kd.k;
        kds(i, j) = kd.dk_ds;
        kdt(i, j) = kd.dk_dt;
        kdd(i, j) = kd.d2k_dsdt;
      }
    kj.diagonal().array() += gram.jitter_abs;
    Eigen::MatrixXd kinv = kj.inverse();

    Eigen::VectorXd x(n);
    for (int i = 0; i < n; i++) x[i] = prior.mean + cfg.phi1 * rng.normal();
    Eigen::VectorXd mean_want =
        Eigen::VectorXd::Constant(n, prior.mean_deriv) + kds * kinv * (x.array() - prior.mean).matrix();
    Eigen::MatrixXd cov_want = kdd - kds * kinv * kdt;

    Eigen::VectorXd mean_got = conditional_deriv_mean(x, prior, gram);
    CHECK((mean_got - mean_want).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((gram.cond_cov - cov_want).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("fit_x_hyperparams on white noise pushes toward the nugget") {
  Rng rng(33);
  int n = 60;
  Eigen::VectorXd t(n), y(n);
  for (int i = 0; i < n; i++) {
    t[i] = i * 0.5;
    y[i] = 2.0 + 0.7 * rng.normal();
  }
  auto fit = fit_x_hyperparams(t, y, 2.01);
  double sd = std::sqrt((y.array() - y.mean()).square().mean());
  CHECK(fit.sigma > 0.8 * sd);
  CHECK(fit.sigma < 1.2 * sd);
  auto b = default_phi2_bounds(t);
  bool noise_like = fit.kernel.phi2 < b.lo * 1.6 || fit.kernel.phi1 < 0.5 * sd;
  CHECK(noise_like);
}

TEST_CASE("fit_x_hyperparams on a smooth noiseless curve finds tiny noise") {
  int n = 40;
  Eigen::VectorXd t(n), y(n);
  for (int i = 0; i < n; i++) {
    t[i] = i * 0.25;
    y[i] = std::sin(0.6 * t[i]) + 0.3 * std::cos(1.3 * t[i]);
  }
  auto fit = fit_x_hyperparams(t, y, 2.01);
  double sd = std::sqrt((y.array() - y.mean()).square().mean());
  CHECK(fit.sigma < 0.05 * sd);
  CHECK(fit.success);
}

TEST_CASE("fit_x_hyperparams recovers noise on a sampled GP") {
  KernelConfig truth{1.5, 2.0, 2.01};
  int n = 80;
  Eigen::VectorXd t(n);
  for (int i = 0; i < n; i++) t[i] = 0.25 * i;
  auto gram = build_gram(truth, t, 1e-7);
  Rng rng(44);
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; i++) z[i] = rng.normal();
  Eigen::VectorXd f = Eigen::MatrixXd(gram.chol_k.matrixL()) * z;
  double sigma_true = 0.15;
  Eigen::VectorXd y = f;
  for (int i = 0; i < n; i++) y[i] += sigma_true * rng.normal();
  auto fit = fit_x_hyperparams(t, y, 2.01);
  CHECK(fit.sigma > 0.7 * sigma_true);
  CHECK(fit.sigma < 1.4 * sigma_true);
  CHECK(fit.mean == doctest::Approx(y.mean()).epsilon(1e-12));
}

TEST_CASE("fit_theta_hyperparams behavior") {
  int n = 50;
  Eigen::VectorXd grid(n);
  for (int i = 0; i < n; i++) grid[i] = 0.5 * i;

  SUBCASE("degenerate input raises") {
    Eigen::VectorXd flat = Eigen::VectorXd::Constant(n, 0.8);
    CHECK_THROWS_AS(fit_theta_hyperparams(flat, grid, 0.8, {0.5, 10.0}, 2.01), FitError);
  }

  SUBCASE("pinned bounds fix phi2") {
    Rng rng(55);
    Eigen::VectorXd th(n);
    for (int i = 0; i < n; i++) th[i] = 1.0 + std::sin(0.4 * grid[i]) + 0.05 * rng.normal();
    auto fit = fit_theta_hyperparams(th, grid, 1.0, {3.0, 3.0}, 2.01);
    CHECK(fit.kernel.phi2 == 3.0);
    CHECK(fit.kernel.phi1 > 0.0);
  }

  SUBCASE("recovery on a smooth deviation") {
    Rng rng(66);
    Eigen::VectorXd th(n);
    for (int i = 0; i < n; i++) th[i] = 0.5 + 0.8 * std::cos(0.3 * grid[i]) + 0.02 * rng.normal();
    auto fit = fit_theta_hyperparams(th, grid, 0.5, {0.25, 12.0}, 2.01);
    CHECK(fit.delta < 0.2);
    CHECK(fit.kernel.phi1 > 0.2);
    CHECK(fit.kernel.phi2 > 0.5);
    CHECK(fit.bounds.lo == 0.25);
  }
}
