#include <doctest.h>

#include <cmath>
#include <memory>

#include "oracles.hpp"
#include "tvmagi/errors.hpp"
#include "tvmagi/posterior.hpp"
#include "tvmagi/rng.hpp"

using namespace tvmagi;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::shared_ptr<const GramBundle> bundle(const VectorXd& grid, double p1, double p2,
                                         double nu = 2.01) {
  return std::make_shared<GramBundle>(build_gram(KernelConfig{p1, p2, nu}, grid, 1e-7));
}

// drift model dx = theta(t), one component
OdeModel drift_model() {
  OdeModel m;
  m.name = "drift";
  m.dim_x = 1;
  m.dim_theta = 1;
  m.dim_psi = 0;
  m.x_names = {"x"};
  m.theta_names = {"rate"};
  m.f = [](const VectorXd&, const VectorXd& th, const VectorXd&, double, VectorXd& dx) {
    dx[0] = th[0];
  };
  m.jac = [](const VectorXd&, const VectorXd&, const VectorXd&, double, MatrixXd& jx,
             MatrixXd& jth, MatrixXd&) {
    jx(0, 0) = 0.0;
    jth(0, 0) = 1.0;
  };
  return m;
}

OdeModel zero_model(int dim) {
  OdeModel m;
  m.name = "zero";
  m.dim_x = dim;
  m.dim_theta = 0;
  m.dim_psi = 0;
  for (int i = 0; i < dim; i++) m.x_names.push_back("x" + std::to_string(i));
  m.f = [](const VectorXd&, const VectorXd&, const VectorXd&, double, VectorXd& dx) {
    dx.setZero();
  };
  m.jac = [](const VectorXd&, const VectorXd&, const VectorXd&, double, MatrixXd& jx, MatrixXd&,
             MatrixXd&) { jx.setZero(); };
  return m;
}

// from-scratch assembly of the four density terms by dense LU, sharing only
// the raw kernel matrices with the implementation
double dense_total(const Posterior& post, const VectorXd& v) {
  const PosteriorSpec& sp = post.spec();
  InferenceState st = post.unpack(v);
  const int n = post.n_grid();
  const int d = sp.model.dim_x;
  double total = 0.0;
  for (int c = 0; c < d; c++) {
    const GramBundle& b = *sp.x_gram[c];
    total -= oracle::dense_gaussian_logpdf(st.x.row(c).transpose(),
                                           sp.x_mean.row(c).transpose(), b.k);
  }
  if (sp.theta_prior) {
    for (int p = 0; p < sp.model.dim_theta; p++) {
      const GramBundle& b = *sp.theta_gram[p];
      total -= oracle::dense_gaussian_logpdf(st.theta.row(p).transpose(),
                                             sp.theta_mean.row(p).transpose(), b.k);
    }
  }
  for (int c = 0; c < d; c++) {
    for (int i = 0; i < sp.obs.times[c].size(); i++) {
      double t = sp.obs.times[c][i];
      int gi = -1;
      for (int g = 0; g < n; g++)
        if (std::abs(sp.grid[g] - t) < 1e-9) gi = g;
      REQUIRE(gi >= 0);
      double r = st.x(c, gi) - sp.obs.values[c][i];
      double s2 = st.sigma[c] * st.sigma[c];
      total += 0.5 * (std::log(2.0 * 3.141592653589793 * s2) + r * r / s2);
    }
  }
  for (int c = 0; c < d; c++) {
    const GramBundle& b = *sp.x_gram[c];
    Eigen::FullPivLU<MatrixXd> lu(b.k);
    VectorXd cx = st.x.row(c).transpose() - sp.x_mean.row(c).transpose();
    VectorXd mc = b.k_ds * lu.solve(cx);
    MatrixXd cc = b.k_dsdt - b.k_ds * lu.solve(b.k_dt) +
                  b.jitter_abs * MatrixXd::Identity(n, n);
    VectorXd fc(n);
    VectorXd xi(d), fx(d);
    for (int i = 0; i < n; i++) {
      xi = st.x.col(i);
      VectorXd th = st.theta.cols() == n ? st.theta.col(i).eval() : st.theta.col(0).eval();
      sp.model.f(xi, th, st.psi, sp.grid[i], fx);
      fc[i] = fx[c];
    }
    total -= oracle::dense_gaussian_logpdf(fc, mc, cc);
  }
  return total;
}

PosteriorSpec drift_spec(const VectorXd& grid, bool prior) {
  PosteriorSpec sp;
  sp.model = drift_model();
  sp.grid = grid;
  sp.obs.times = {VectorXd(2)};
  sp.obs.values = {VectorXd(2)};
  sp.obs.times[0] << grid[0], grid[grid.size() - 1];
  sp.obs.values[0] << 0.2, -0.4;
  sp.x_gram = {bundle(grid, 1.1, 0.8)};
  sp.x_mean = MatrixXd::Constant(1, grid.size(), 0.3);
  sp.theta_gram = {bundle(grid, 0.9, 1.0)};
  sp.theta_mean = MatrixXd::Constant(1, grid.size(), 0.1);
  sp.theta_prior = prior;
  return sp;
}

}  // namespace

TEST_CASE("posterior total matches a dense from-scratch assembly") {
  VectorXd grid(3);
  grid << 0.0, 0.7, 1.3;
  Posterior post(drift_spec(grid, true));
  Rng rng(515);
  for (int rep = 0; rep < 20; rep++) {
    VectorXd v(post.dim());
    for (int i = 0; i < v.size(); i++) v[i] = rng.normal();
    PosteriorBreakdown b = post.breakdown(v);
    double want = dense_total(post, v);
    CHECK(oracle::rel_err(b.total, want) < 1e-8);
    CHECK(b.total == b.part1_theta_prior + b.part2_x_prior + b.part3_obs + b.part4_manifold);
  }
}

TEST_CASE("posterior parts collapse to their constants in degenerate settings") {
  VectorXd grid(4);
  grid << 0.0, 0.5, 1.0, 1.5;
  PosteriorSpec sp;
  sp.model = zero_model(2);
  sp.grid = grid;
  sp.obs.times = {grid.head(2), VectorXd()};
  sp.obs.values = {VectorXd(2), VectorXd()};
  sp.obs.values[0] << 1.0, 1.1;
  sp.x_gram = {bundle(grid, 1.0, 0.7), bundle(grid, 1.2, 0.9)};
  sp.x_mean = MatrixXd::Zero(2, 4);
  sp.x_mean.row(0).setConstant(1.05);
  sp.x_mean.row(1).setConstant(-0.4);
  sp.theta_prior = false;
  Posterior post(sp);

  InferenceState st;
  st.x = sp.x_mean;
  st.theta = MatrixXd(0, 4);
  st.psi = VectorXd();
  st.sigma = VectorXd::Constant(2, 0.05);
  VectorXd v = post.pack(st);
  PosteriorBreakdown b = post.breakdown(v);

  // x at prior mean and f identically zero: quadratic forms vanish
  double want4 = 0.0, want2 = 0.0;
  for (int c = 0; c < 2; c++) {
    want4 += 0.5 * (4 * std::log(2 * 3.141592653589793) + sp.x_gram[c]->logdet_cond);
    want2 += 0.5 * (4 * std::log(2 * 3.141592653589793) + sp.x_gram[c]->logdet_k);
  }
  CHECK(b.part4_manifold == doctest::Approx(want4).epsilon(1e-12));
  CHECK(b.part2_x_prior == doctest::Approx(want2).epsilon(1e-12));
  CHECK(b.part1_theta_prior == 0.0);

  // noise level of the unobserved component is inert
  InferenceState st2 = st;
  st2.sigma[1] *= 2.0;
  PosteriorBreakdown b2 = post.breakdown(post.pack(st2));
  CHECK(b2.total == doctest::Approx(b.total).epsilon(1e-14));
  VectorXd g;
  post.value_grad(v, g);
  CHECK(g[post.sigma_offset() + 1] == 0.0);
}

TEST_CASE("point-wise objective is the full posterior minus the parameter prior") {
  VectorXd grid(5);
  grid << 0.0, 0.4, 0.9, 1.3, 2.0;
  Posterior full(drift_spec(grid, true));
  PosteriorSpec nspec = drift_spec(grid, false);
  Posterior nop(nspec);
  // the parameter prior inputs must be inert when the prior is off
  PosteriorSpec alt = drift_spec(grid, false);
  alt.theta_mean.setConstant(9.9);
  alt.theta_gram = {bundle(grid, 5.0, 0.3)};
  Posterior nop_alt(alt);

  Rng rng(99);
  for (int rep = 0; rep < 10; rep++) {
    VectorXd v(full.dim());
    for (int i = 0; i < v.size(); i++) v[i] = rng.normal();
    PosteriorBreakdown bf = full.breakdown(v);
    PosteriorBreakdown bp = nop.breakdown(v);
    CHECK(bp.part1_theta_prior == 0.0);
    CHECK(bp.total == doctest::Approx(bf.total - bf.part1_theta_prior).epsilon(1e-12));
    CHECK(nop_alt.breakdown(v).total == doctest::Approx(bp.total).epsilon(1e-14));
  }
}

TEST_CASE("posterior analytic gradient agrees with finite differences") {
  Rng rng(2024);

  auto fd_check = [&](Posterior& post, const VectorXd& v, double tol) {
    VectorXd g;
    double base = post.value_grad(v, g);
    REQUIRE(std::isfinite(base));
    VectorXd vv = v;
    for (int i = 0; i < v.size(); i++) {
      double h = 1e-6 * std::max(1.0, std::abs(v[i]));
      vv[i] = v[i] + h;
      double fp = post.value(vv);
      vv[i] = v[i] - h;
      double fm = post.value(vv);
      vv[i] = v[i];
      double fd = (fp - fm) / (2 * h);
      double scale = std::max({1.0, std::abs(g[i]), std::abs(fd)});
      CHECK(std::abs(g[i] - fd) / scale < tol);
    }
  };

  VectorXd grid = VectorXd::LinSpaced(7, 0.0, 3.0);

  SUBCASE("log-scale epidemic model") {
    CaseStudy cs = builtin_truth("seird");
    PosteriorSpec sp;
    sp.model = cs.inference_model;
    sp.grid = grid;
    sp.obs.times.resize(4);
    sp.obs.values.resize(4);
    VectorXd some(3);
    some << 0.0, 1.5, 3.0;
    for (int c = 0; c < 4; c++) {
      sp.obs.times[c] = some;
      sp.obs.values[c] = VectorXd(3);
      for (int i = 0; i < 3; i++) sp.obs.values[c][i] = 4.0 + rng.normal();
    }
    for (int c = 0; c < 4; c++) sp.x_gram.push_back(bundle(grid, 1.0, 1.2));
    sp.x_mean = MatrixXd::Constant(4, 7, 5.0);
    for (int p = 0; p < 3; p++) sp.theta_gram.push_back(bundle(grid, 0.8, 1.5));
    sp.theta_mean = MatrixXd::Constant(3, 7, 0.5);
    Posterior post(sp);

    for (int rep = 0; rep < 5; rep++) {
      InferenceState st;
      st.x = MatrixXd(4, 7);
      for (int c = 0; c < 4; c++)
        for (int i = 0; i < 7; i++) st.x(c, i) = 4.0 + 2.0 * rng.uniform();
      st.theta = MatrixXd(3, 7);
      for (int p = 0; p < 3; p++)
        for (int i = 0; i < 7; i++) st.theta(p, i) = 0.2 + rng.uniform();
      st.psi = VectorXd::Constant(1, 0.05 + 0.1 * rng.uniform());
      st.sigma = VectorXd::Constant(4, 0.02 + 0.05 * rng.uniform());
      fd_check(post, post.pack(st), 1e-5);
    }
  }

  SUBCASE("predator-prey model") {
    CaseStudy cs = builtin_truth("lv");
    PosteriorSpec sp;
    sp.model = cs.inference_model;
    sp.grid = grid;
    sp.obs.times = {grid, grid};
    sp.obs.values = {VectorXd(7), VectorXd(7)};
    for (int i = 0; i < 7; i++) {
      sp.obs.values[0][i] = 2.0 + rng.uniform();
      sp.obs.values[1][i] = 1.0 + rng.uniform();
    }
    sp.x_gram = {bundle(grid, 1.0, 1.0), bundle(grid, 1.0, 1.0)};
    sp.x_mean = MatrixXd::Constant(2, 7, 1.5);
    sp.theta_gram = {bundle(grid, 0.5, 1.4), bundle(grid, 0.5, 1.4)};
    sp.theta_mean = MatrixXd::Constant(2, 7, 0.8);
    Posterior post(sp);

    for (int rep = 0; rep < 5; rep++) {
      InferenceState st;
      st.x = MatrixXd(2, 7);
      for (int c = 0; c < 2; c++)
        for (int i = 0; i < 7; i++) st.x(c, i) = 0.5 + 3.0 * rng.uniform();
      st.theta = MatrixXd(2, 7);
      for (int p = 0; p < 2; p++)
        for (int i = 0; i < 7; i++) st.theta(p, i) = 0.3 + rng.uniform();
      st.psi = VectorXd(2);
      st.psi << 0.5 + rng.uniform(), 0.5 + rng.uniform();
      st.sigma = VectorXd::Constant(2, 0.02 + 0.05 * rng.uniform());
      fd_check(post, post.pack(st), 1e-5);
    }
  }

  SUBCASE("viral-load reduced model") {
    VectorXd ts = VectorXd::LinSpaced(13, 0.0, 3.0);
    VectorXd tv(13);
    for (int i = 0; i < 13; i++) tv[i] = 300.0 + 40.0 * std::sin(ts[i]);
    OdeModel m = make_hiv_reduced(ts, tv);
    PosteriorSpec sp;
    sp.model = m;
    sp.grid = grid;
    sp.obs.times = {grid};
    sp.obs.values = {VectorXd(7)};
    for (int i = 0; i < 7; i++) sp.obs.values[0][i] = 900.0 + 100.0 * rng.uniform();
    sp.x_gram = {bundle(grid, 400.0, 1.0)};
    sp.x_mean = MatrixXd::Constant(1, 7, 950.0);
    sp.theta_gram = {bundle(grid, 800.0, 1.4), bundle(grid, 3.0, 1.4)};
    sp.theta_mean = MatrixXd::Zero(2, 7);
    sp.theta_mean.row(0).setConstant(-1000.0);
    sp.theta_mean.row(1).setConstant(8.0);
    Posterior post(sp);

    for (int rep = 0; rep < 5; rep++) {
      InferenceState st;
      st.x = MatrixXd(1, 7);
      for (int i = 0; i < 7; i++) st.x(0, i) = 800.0 + 400.0 * rng.uniform();
      st.theta = MatrixXd(2, 7);
      for (int i = 0; i < 7; i++) {
        st.theta(0, i) = -1500.0 + 1000.0 * rng.uniform();
        st.theta(1, i) = 5.0 + 5.0 * rng.uniform();
      }
      st.psi = VectorXd();
      st.sigma = VectorXd::Constant(1, 30.0 + 20.0 * rng.uniform());
      fd_check(post, post.pack(st), 1e-5);
    }
  }

  SUBCASE("constant-parameter mode") {
    CaseStudy cs = builtin_truth("lv");
    PosteriorSpec sp;
    sp.model = cs.inference_model;
    sp.grid = grid;
    sp.obs.times = {grid, grid};
    sp.obs.values = {VectorXd(7), VectorXd(7)};
    for (int i = 0; i < 7; i++) {
      sp.obs.values[0][i] = 2.0 + rng.uniform();
      sp.obs.values[1][i] = 1.0 + rng.uniform();
    }
    sp.x_gram = {bundle(grid, 1.0, 1.0), bundle(grid, 1.0, 1.0)};
    sp.x_mean = MatrixXd::Constant(2, 7, 1.5);
    sp.theta_mode = ThetaMode::Constant;
    sp.theta_prior = false;
    Posterior post(sp);
    CHECK(post.dim() == 2 * 7 + 2 + 2 + 2);

    for (int rep = 0; rep < 5; rep++) {
      InferenceState st;
      st.x = MatrixXd(2, 7);
      for (int c = 0; c < 2; c++)
        for (int i = 0; i < 7; i++) st.x(c, i) = 0.5 + 3.0 * rng.uniform();
      st.theta = MatrixXd(2, 1);
      st.theta << 0.3 + rng.uniform(), 0.3 + rng.uniform();
      st.psi = VectorXd(2);
      st.psi << 0.5 + rng.uniform(), 0.5 + rng.uniform();
      st.sigma = VectorXd::Constant(2, 0.02 + 0.05 * rng.uniform());
      fd_check(post, post.pack(st), 1e-5);
    }
  }
}

TEST_CASE("optimizer fixed point has tiny posterior gradient") {
  // a tight state prior keeps the optimum interior: interpolating the
  // observations would cost far more than the noise term can repay, so sigma
  // settles near the residual scale instead of collapsing to the floor
  VectorXd grid = VectorXd::LinSpaced(5, 0.0, 2.0);
  PosteriorSpec sp;
  sp.model = drift_spec(grid, true).model;
  sp.grid = grid;
  sp.obs.times = {grid};
  sp.obs.values = {VectorXd(5)};
  sp.obs.values[0] << 0.8, -0.1, 0.6, 0.2, -0.3;
  sp.x_gram = {bundle(grid, 0.1, 0.35)};
  sp.x_mean = MatrixXd::Constant(1, 5, 0.3);
  sp.theta_gram = {bundle(grid, 0.9, 0.35)};
  sp.theta_mean = MatrixXd::Constant(1, 5, 0.1);
  auto post = std::make_shared<Posterior>(sp);
  InferenceState st;
  st.x = MatrixXd::Constant(1, 5, 0.3);
  st.theta = MatrixXd::Constant(1, 5, 0.0);
  st.psi = VectorXd();
  st.sigma = VectorXd::Constant(1, 0.4);
  AdamConfig cfg;
  cfg.lr = 2e-3;
  cfg.max_iters = 80000;
  cfg.tol = 0.0;
  AdamResult res = adam_minimize(posterior_objective(post), post->pack(st), cfg);
  cfg.lr = 1e-4;
  res = adam_minimize(posterior_objective(post), res.x, cfg);
  cfg.lr = 1e-5;
  res = adam_minimize(posterior_objective(post), res.x, cfg);
  VectorXd g;
  post->value_grad(res.x, g);
  CHECK(g.norm() < 1e-6);
  InferenceState out = post->unpack(res.x);
  CHECK(out.sigma[0] > 0.1);
}

TEST_CASE("posterior state packing round-trips and validates") {
  VectorXd grid(3);
  grid << 0.0, 0.7, 1.3;
  Posterior post(drift_spec(grid, true));
  InferenceState st;
  st.x = MatrixXd::Constant(1, 3, 0.4);
  st.theta = MatrixXd::Constant(1, 3, -0.2);
  st.psi = VectorXd();
  st.sigma = VectorXd::Constant(1, 0.07);
  VectorXd v = post.pack(st);
  InferenceState rt = post.unpack(v);
  CHECK((rt.x - st.x).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((rt.theta - st.theta).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(rt.sigma[0] == doctest::Approx(0.07).epsilon(1e-12));

  PosteriorSpec bad = drift_spec(grid, true);
  bad.obs.times[0][1] = 0.9;  // not a grid point
  CHECK_THROWS_AS(Posterior{bad}, ConfigError);

  PosteriorSpec cm = drift_spec(grid, true);
  cm.theta_mode = ThetaMode::Constant;
  CHECK_THROWS_AS(Posterior{cm}, ConfigError);
}
