#include "tvmagi/filters.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "tvmagi/errors.hpp"
#include "tvmagi/rk4.hpp"

using tvmagi::ConfigError;
using tvmagi::FactorizationError;
using tvmagi::FilterConfig;
using tvmagi::FilterMethod;
using tvmagi::FilterResult;
using tvmagi::ObservationSet;
using tvmagi::OdeModel;

namespace {

OdeModel scalar_decay(double a) {
  OdeModel m;
  m.name = "decay";
  m.dim_x = 1;
  m.x_names = {"x"};
  m.f = [a](const Eigen::VectorXd& x, const Eigen::VectorXd&, const Eigen::VectorXd&, double,
            Eigen::VectorXd& dx) { dx[0] = a * x[0]; };
  m.jac = [a](const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&, double,
              Eigen::MatrixXd& jx, Eigen::MatrixXd&, Eigen::MatrixXd&) { jx(0, 0) = a; };
  return m;
}

// dx/dt = theta, so the augmented pair (x, theta) evolves linearly
OdeModel drift_pair() {
  OdeModel m;
  m.name = "drift";
  m.dim_x = 1;
  m.dim_theta = 1;
  m.x_names = {"x"};
  m.theta_names = {"rate"};
  m.f = [](const Eigen::VectorXd&, const Eigen::VectorXd& th, const Eigen::VectorXd&, double,
           Eigen::VectorXd& dx) { dx[0] = th[0]; };
  m.jac = [](const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&, double,
             Eigen::MatrixXd& jx, Eigen::MatrixXd& jth, Eigen::MatrixXd&) {
    jx.setZero();
    jth.setOnes();
  };
  return m;
}

ObservationSet single_series(const Eigen::VectorXd& t, const Eigen::VectorXd& y) {
  ObservationSet data;
  data.times = {t};
  data.values = {y};
  return data;
}

// exact flow factor of dx = a x over one observation interval as the RK4
// integrator realizes it
double rk4_decay_factor(double a, double dt, int substeps) {
  double z = a * dt / substeps;
  double poly = 1.0 + z + z * z / 2.0 + z * z * z / 6.0 + z * z * z * z / 24.0;
  return std::pow(poly, substeps);
}

struct ScalarKalman {
  std::vector<double> mean, sd;
};

ScalarKalman scalar_kalman(const Eigen::VectorXd& y, double g, double q, double r, double m0,
                           double p0) {
  ScalarKalman tr;
  double mean = m0, p = p0;
  for (int k = 0; k < y.size(); ++k) {
    if (k > 0) {
      mean = g * mean;
      p = g * g * p + q;
    }
    double kg = p / (p + r);
    mean += kg * (y[k] - mean);
    p = (1.0 - kg) * p * (1.0 - kg) + kg * r * kg;
    tr.mean.push_back(mean);
    tr.sd.push_back(std::sqrt(p));
  }
  return tr;
}

struct ScalarSetup {
  OdeModel model = scalar_decay(-0.5);
  Eigen::VectorXd t, y;
  FilterConfig cfg;
  Eigen::VectorXd init_mean = Eigen::VectorXd::Constant(1, 1.0);
  Eigen::MatrixXd init_cov = Eigen::MatrixXd::Constant(1, 1, 0.25);
  ScalarSetup() {
    const int nt = 10;
    t.resize(nt);
    y.resize(nt);
    for (int k = 0; k < nt; ++k) {
      t[k] = 0.5 * k;
      y[k] = 1.2 * std::exp(-0.5 * t[k]) + 0.08 * std::sin(3.0 * k);
    }
    cfg.state_process_sd = Eigen::VectorXd::Constant(1, 0.05);
    cfg.obs_sd = Eigen::VectorXd::Constant(1, 0.1);
    cfg.inflation = 1.0;
  }
  ScalarKalman oracle() const {
    double g = rk4_decay_factor(-0.5, 0.5, cfg.substeps);
    return scalar_kalman(y, g, 0.05 * 0.05, 0.1 * 0.1, init_mean[0], init_cov(0, 0));
  }
};

}  // namespace

TEST_CASE("filter method names parse") {
  CHECK(tvmagi::parse_filter_method("ekf") == FilterMethod::Ekf);
  CHECK(tvmagi::parse_filter_method("ukf") == FilterMethod::Ukf);
  CHECK(tvmagi::parse_filter_method("enkf") == FilterMethod::Enkf);
  CHECK(tvmagi::parse_filter_method("eakf") == FilterMethod::Eakf);
  CHECK_THROWS_AS(tvmagi::parse_filter_method("kalman"), ConfigError);
}

TEST_CASE("scalar linear ekf matches the exact kalman recursion") {
  ScalarSetup s;
  s.cfg.method = FilterMethod::Ekf;
  FilterResult res = run_filter(single_series(s.t, s.y), s.model, s.init_mean, s.init_cov, s.cfg);
  ScalarKalman km = s.oracle();
  REQUIRE(res.times.size() == 10);
  for (int k = 0; k < 10; ++k) {
    CHECK(res.filtered_means(0, k) == doctest::Approx(km.mean[k]).epsilon(1e-10));
    CHECK(res.filtered_sds(0, k) == doctest::Approx(km.sd[k]).epsilon(1e-10));
  }
}

TEST_CASE("scalar linear ukf matches the exact kalman recursion") {
  ScalarSetup s;
  s.cfg.method = FilterMethod::Ukf;
  FilterResult res = run_filter(single_series(s.t, s.y), s.model, s.init_mean, s.init_cov, s.cfg);
  ScalarKalman km = s.oracle();
  for (int k = 0; k < 10; ++k) {
    CHECK(res.filtered_means(0, k) == doctest::Approx(km.mean[k]).epsilon(1e-8));
    CHECK(res.filtered_sds(0, k) == doctest::Approx(km.sd[k]).epsilon(1e-8));
  }
}

TEST_CASE("joint state and parameter filtering matches the augmented kalman recursion") {
  OdeModel model = drift_pair();
  const int nt = 8;
  const double dt = 0.4;
  Eigen::VectorXd t(nt), y(nt);
  for (int k = 0; k < nt; ++k) {
    t[k] = dt * k;
    y[k] = 0.2 + 0.8 * t[k] + 0.06 * std::cos(2.0 * k);
  }
  Eigen::VectorXd init_mean(2);
  init_mean << 0.1, 0.6;
  Eigen::MatrixXd init_cov = Eigen::Vector2d(0.09, 0.04).asDiagonal();
  FilterConfig cfg;
  cfg.state_process_sd = Eigen::VectorXd::Constant(1, 0.02);
  cfg.param_walk_sd = Eigen::VectorXd::Constant(1, 0.03);
  cfg.obs_sd = Eigen::VectorXd::Constant(1, 0.05);
  cfg.inflation = 1.0;

  // exact recursion with F = [[1, dt], [0, 1]]
  Eigen::Matrix2d f_mat;
  f_mat << 1.0, dt, 0.0, 1.0;
  Eigen::Matrix2d q_mat = Eigen::Vector2d(0.02 * 0.02, 0.03 * 0.03).asDiagonal();
  const double r = 0.05 * 0.05;
  Eigen::Vector2d mean = init_mean;
  Eigen::Matrix2d cov = init_cov;
  Eigen::MatrixXd km_means(2, nt), km_sds(2, nt);
  for (int k = 0; k < nt; ++k) {
    if (k > 0) {
      mean = f_mat * mean;
      cov = f_mat * cov * f_mat.transpose() + q_mat;
    }
    double sres = cov(0, 0) + r;
    Eigen::Vector2d gain = cov.col(0) / sres;
    mean += gain * (y[k] - mean[0]);
    Eigen::Matrix2d ikh = Eigen::Matrix2d::Identity();
    ikh.col(0) -= gain;
    cov = ikh * cov * ikh.transpose() + r * gain * gain.transpose();
    km_means.col(k) = mean;
    km_sds.col(k) = cov.diagonal().cwiseSqrt();
  }

  for (FilterMethod method : {FilterMethod::Ekf, FilterMethod::Ukf}) {
    cfg.method = method;
    FilterResult res = run_filter(single_series(t, y), model, init_mean, init_cov, cfg);
    double tol = method == FilterMethod::Ekf ? 1e-10 : 1e-8;
    for (int k = 0; k < nt; ++k) {
      for (int i = 0; i < 2; ++i) {
        CHECK(res.filtered_means(i, k) == doctest::Approx(km_means(i, k)).epsilon(tol));
        CHECK(res.filtered_sds(i, k) == doctest::Approx(km_sds(i, k)).epsilon(tol));
      }
    }
    CHECK(res.theta_path.rows() == 1);
    CHECK(res.theta_path(0, nt - 1) == res.filtered_means(1, nt - 1));
    CHECK(res.psi_bar.size() == 0);
  }
}

TEST_CASE("eakf scalar update shifts and scales to the kalman posterior") {
  SUBCASE("two member example") {
    Eigen::MatrixXd ens(1, 2);
    ens << 1.0, 3.0;
    REQUIRE(tvmagi::eakf_scalar_update(ens, 0, 2.0, 2.0));
    const double half = std::sqrt(0.5);
    CHECK(ens(0, 0) == doctest::Approx(2.0 - half).epsilon(1e-15));
    CHECK(ens(0, 1) == doctest::Approx(2.0 + half).epsilon(1e-15));
    double mean = ens.row(0).mean();
    double var = (ens.row(0).array() - mean).square().sum() / 1.0;
    CHECK(mean == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("increments regress onto correlated rows") {
    Eigen::MatrixXd ens(3, 2);
    ens << 1.0, 3.0, 11.0, 13.0, 5.0, 1.0;
    REQUIRE(tvmagi::eakf_scalar_update(ens, 0, 2.0, 2.0));
    const double half = std::sqrt(0.5);
    CHECK(ens(1, 0) == doctest::Approx(12.0 - half).epsilon(1e-14));
    CHECK(ens(1, 1) == doctest::Approx(12.0 + half).epsilon(1e-14));
    CHECK(ens(2, 0) == doctest::Approx(3.0 + 2.0 * half).epsilon(1e-14));
    CHECK(ens(2, 1) == doctest::Approx(3.0 - 2.0 * half).epsilon(1e-14));
  }
  SUBCASE("posterior moments are exact for a general ensemble") {
    Eigen::MatrixXd ens(3, 40);
    for (int j = 0; j < 40; ++j) {
      ens(0, j) = std::sin(1.7 * j) + 0.2 * j;
      ens(1, j) = std::cos(0.9 * j);
      ens(2, j) = 0.5 * ens(0, j) + std::sin(5.0 * j);
    }
    const double y = 4.0, r = 0.3;
    double hbar = ens.row(0).mean();
    double var = (ens.row(0).array() - hbar).square().sum() / 39.0;
    double post_var = 1.0 / (1.0 / var + 1.0 / r);
    double post_mean = post_var * (hbar / var + y / r);
    REQUIRE(tvmagi::eakf_scalar_update(ens, 0, y, r));
    double mean = ens.row(0).mean();
    double got_var = (ens.row(0).array() - mean).square().sum() / 39.0;
    CHECK(mean == doctest::Approx(post_mean).epsilon(1e-12));
    CHECK(got_var == doctest::Approx(post_var).epsilon(1e-12));
  }
  SUBCASE("degenerate spread is reported and left unchanged") {
    Eigen::MatrixXd ens = Eigen::MatrixXd::Constant(2, 5, 1.5);
    CHECK_FALSE(tvmagi::eakf_scalar_update(ens, 0, 2.0, 1.0));
    CHECK((ens.array() == 1.5).all());
  }
}

TEST_CASE("enkf mean approaches the kalman mean with many members") {
  ScalarSetup s;
  s.cfg.method = FilterMethod::Enkf;
  s.cfg.ensemble_size = 10000;
  s.cfg.seed = 7;
  FilterResult res = run_filter(single_series(s.t, s.y), s.model, s.init_mean, s.init_cov, s.cfg);
  ScalarKalman km = s.oracle();
  for (int k = 0; k < 10; ++k) {
    CHECK(std::abs(res.filtered_means(0, k) - km.mean[k]) <
          0.05 * std::max(1.0, std::abs(km.mean[k])));
  }
}

TEST_CASE("filters track truth from exact initialization with zero noise") {
  OdeModel model = tvmagi::make_lv();
  Eigen::VectorXd psi(2), x0(2);
  psi << 0.75, 1.0;
  x0 << 3.0, 1.0;
  tvmagi::ThetaPath theta_at = [](double, Eigen::VectorXd& th) {
    th[0] = 0.6;
    th[1] = 1.0;
  };
  Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(21, 0.0, 10.0);
  tvmagi::OdeSolution truth = rk4_solve(model, x0, theta_at, psi, times, 10);
  ObservationSet data;
  data.times = {times, times};
  data.values = {truth.states.row(0).transpose(), truth.states.row(1).transpose()};

  Eigen::VectorXd init_mean(6);
  init_mean << 3.0, 1.0, 0.6, 1.0, 0.75, 1.0;
  Eigen::MatrixXd init_cov = Eigen::MatrixXd::Zero(6, 6);
  FilterConfig cfg;
  cfg.state_process_sd = Eigen::VectorXd::Zero(2);
  cfg.param_walk_sd = Eigen::VectorXd::Zero(4);
  cfg.obs_sd = Eigen::VectorXd::Constant(2, 0.05);
  cfg.inflation = 1.0;
  cfg.ensemble_size = 50;

  struct Expect {
    FilterMethod method;
    double tol;
    int degeneracy;
  };
  for (Expect e : {Expect{FilterMethod::Ekf, 1e-9, 0}, Expect{FilterMethod::Ukf, 1e-6, 0},
                   Expect{FilterMethod::Enkf, 1e-9, 21}, Expect{FilterMethod::Eakf, 1e-9, 42}}) {
    cfg.method = e.method;
    FilterResult res = run_filter(data, model, init_mean, init_cov, cfg);
    REQUIRE(res.times.size() == 21);
    for (int k = 0; k < 21; ++k) {
      CHECK(res.filtered_means(0, k) ==
            doctest::Approx(truth.states(0, k)).epsilon(e.tol));
      CHECK(res.filtered_means(1, k) ==
            doctest::Approx(truth.states(1, k)).epsilon(e.tol));
    }
    CHECK(res.theta_path(0, 20) == doctest::Approx(0.6).epsilon(e.tol));
    CHECK(res.theta_path(1, 20) == doctest::Approx(1.0).epsilon(e.tol));
    CHECK(res.psi_bar[0] == doctest::Approx(0.75).epsilon(e.tol));
    CHECK(res.psi_bar[1] == doctest::Approx(1.0).epsilon(e.tol));
    CHECK(res.degeneracy_events == e.degeneracy);
  }
}

TEST_CASE("union observation schedule drives the filter grid") {
  OdeModel model = tvmagi::make_lv();
  ObservationSet data;
  Eigen::VectorXd t0(5), t1(3);
  t0 << 0.0, 1.0, 2.0, 3.0, 4.0;
  t1 << 0.5, 1.0, 2.5;
  data.times = {t0, t1};
  data.values = {Eigen::VectorXd::Constant(5, 3.0), Eigen::VectorXd::Constant(3, 1.0)};
  Eigen::VectorXd init_mean(6);
  init_mean << 3.0, 1.0, 0.6, 1.0, 0.75, 1.0;
  FilterConfig cfg;
  cfg.method = FilterMethod::Ekf;
  cfg.state_process_sd = Eigen::VectorXd::Constant(2, 0.01);
  cfg.param_walk_sd = Eigen::VectorXd::Constant(4, 0.01);
  cfg.obs_sd = Eigen::VectorXd::Constant(2, 0.1);
  FilterResult res =
      run_filter(data, model, init_mean, 0.01 * Eigen::MatrixXd::Identity(6, 6), cfg);
  Eigen::VectorXd expect(7);
  expect << 0.0, 0.5, 1.0, 2.0, 2.5, 3.0, 4.0;
  REQUIRE(res.times.size() == 7);
  CHECK((res.times - expect).cwiseAbs().maxCoeff() == 0.0);
  CHECK(res.filtered_means.rows() == 6);
  CHECK(res.filtered_means.cols() == 7);
  CHECK(res.filtered_sds.rows() == 6);
  CHECK(res.theta_path.rows() == 2);
  CHECK(res.psi_bar.size() == 2);
  CHECK(res.filtered_means.allFinite());
}

TEST_CASE("default parameter walk is two percent of the initial magnitude") {
  OdeModel model = drift_pair();
  Eigen::VectorXd t(5), y(5);
  for (int k = 0; k < 5; ++k) {
    t[k] = 0.5 * k;
    y[k] = 0.3 * t[k] + 0.02 * std::sin(2.0 * k);
  }
  Eigen::VectorXd init_mean(2);
  init_mean << 0.0, -0.4;
  Eigen::MatrixXd init_cov = Eigen::Vector2d(0.04, 0.04).asDiagonal();
  FilterConfig cfg;
  cfg.method = FilterMethod::Ekf;
  cfg.state_process_sd = Eigen::VectorXd::Constant(1, 0.01);
  cfg.obs_sd = Eigen::VectorXd::Constant(1, 0.05);
  FilterResult with_default =
      run_filter(single_series(t, y), model, init_mean, init_cov, cfg);
  cfg.param_walk_sd = Eigen::VectorXd::Constant(1, 0.02 * 0.4);
  FilterResult with_explicit =
      run_filter(single_series(t, y), model, init_mean, init_cov, cfg);
  CHECK((with_default.filtered_means - with_explicit.filtered_means).cwiseAbs().maxCoeff() == 0.0);
  CHECK((with_default.filtered_sds - with_explicit.filtered_sds).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ensemble runs are reproducible by seed") {
  ScalarSetup s;
  s.cfg.method = FilterMethod::Enkf;
  s.cfg.ensemble_size = 300;
  s.cfg.seed = 11;
  ObservationSet data = single_series(s.t, s.y);
  FilterResult a = run_filter(data, s.model, s.init_mean, s.init_cov, s.cfg);
  FilterResult b = run_filter(data, s.model, s.init_mean, s.init_cov, s.cfg);
  CHECK((a.filtered_means - b.filtered_means).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.filtered_sds - b.filtered_sds).cwiseAbs().maxCoeff() == 0.0);
  s.cfg.seed = 12;
  FilterResult c = run_filter(data, s.model, s.init_mean, s.init_cov, s.cfg);
  CHECK((a.filtered_means - c.filtered_means).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("indefinite covariance is reported as collapse") {
  OdeModel model = drift_pair();
  Eigen::VectorXd t(3), y(3);
  t << 0.0, 0.5, 1.0;
  y << 0.1, 0.2, 0.3;
  Eigen::VectorXd init_mean = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd bad_cov = Eigen::Vector2d(1.0, -1.0).asDiagonal();
  FilterConfig cfg;
  cfg.state_process_sd = Eigen::VectorXd::Constant(1, 0.01);
  cfg.param_walk_sd = Eigen::VectorXd::Constant(1, 0.01);
  cfg.obs_sd = Eigen::VectorXd::Constant(1, 0.1);
  ObservationSet data = single_series(t, y);
  cfg.method = FilterMethod::Ukf;
  CHECK_THROWS_AS(run_filter(data, model, init_mean, bad_cov, cfg), FactorizationError);
  cfg.method = FilterMethod::Eakf;
  CHECK_THROWS_AS(run_filter(data, model, init_mean, bad_cov, cfg), FactorizationError);
}

TEST_CASE("filter configuration is validated") {
  ScalarSetup s;
  ObservationSet data = single_series(s.t, s.y);
  SUBCASE("inflation below one") {
    s.cfg.inflation = 0.9;
    CHECK_THROWS_AS(run_filter(data, s.model, s.init_mean, s.init_cov, s.cfg), ConfigError);
  }
  SUBCASE("substeps must be positive") {
    s.cfg.substeps = 0;
    CHECK_THROWS_AS(run_filter(data, s.model, s.init_mean, s.init_cov, s.cfg), ConfigError);
  }
  SUBCASE("ensemble needs two members") {
    s.cfg.method = FilterMethod::Eakf;
    s.cfg.ensemble_size = 1;
    CHECK_THROWS_AS(run_filter(data, s.model, s.init_mean, s.init_cov, s.cfg), ConfigError);
  }
  SUBCASE("observation noise must cover every component") {
    s.cfg.obs_sd = Eigen::VectorXd();
    CHECK_THROWS_AS(run_filter(data, s.model, s.init_mean, s.init_cov, s.cfg), ConfigError);
  }
  SUBCASE("observed components need positive noise") {
    s.cfg.obs_sd = Eigen::VectorXd::Zero(1);
    CHECK_THROWS_AS(run_filter(data, s.model, s.init_mean, s.init_cov, s.cfg), ConfigError);
  }
  SUBCASE("init mean must match the augmented dimension") {
    CHECK_THROWS_AS(run_filter(data, s.model, Eigen::VectorXd::Zero(3), s.init_cov, s.cfg),
                    ConfigError);
  }
  SUBCASE("init covariance must be square over the augmented state") {
    CHECK_THROWS_AS(
        run_filter(data, s.model, s.init_mean, Eigen::MatrixXd::Zero(2, 2), s.cfg), ConfigError);
  }
  SUBCASE("non-finite initialization") {
    Eigen::VectorXd nan_mean = Eigen::VectorXd::Constant(1, std::nan(""));
    CHECK_THROWS_AS(run_filter(data, s.model, nan_mean, s.init_cov, s.cfg),
                    tvmagi::NonFiniteError);
  }
  SUBCASE("empty observations") {
    ObservationSet empty;
    empty.times = {Eigen::VectorXd()};
    empty.values = {Eigen::VectorXd()};
    CHECK_THROWS_AS(run_filter(empty, s.model, s.init_mean, s.init_cov, s.cfg), ConfigError);
  }
  SUBCASE("negative process noise") {
    s.cfg.state_process_sd = Eigen::VectorXd::Constant(1, -0.1);
    CHECK_THROWS_AS(run_filter(data, s.model, s.init_mean, s.init_cov, s.cfg), ConfigError);
  }
}
