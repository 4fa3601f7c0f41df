#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tvmagi/models.hpp"
#include "tvmagi/rk4.hpp"
#include "tvmagi/rng.hpp"

using namespace tvmagi;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// central-difference check of all three analytic Jacobians at one point
void check_jacobians(const OdeModel& m, const VectorXd& x, const VectorXd& th, const VectorXd& ps,
                     double t, double tol) {
  Jacobians j = eval_jacobians(m, x, th, ps, t);
  const double h = 1e-6;
  for (int e = 0; e < m.dim_x; e++) {
    VectorXd xp = x, xm = x;
    xp[e] += h;
    xm[e] -= h;
    VectorXd fd = (eval_f(m, xp, th, ps, t) - eval_f(m, xm, th, ps, t)) / (2 * h);
    for (int d = 0; d < m.dim_x; d++) {
      double scale = std::max({1.0, std::abs(j.jx(d, e)), std::abs(fd[d])});
      CHECK(std::abs(j.jx(d, e) - fd[d]) / scale < tol);
    }
  }
  for (int e = 0; e < m.dim_theta; e++) {
    VectorXd tp = th, tm = th;
    tp[e] += h;
    tm[e] -= h;
    VectorXd fd = (eval_f(m, x, tp, ps, t) - eval_f(m, x, tm, ps, t)) / (2 * h);
    for (int d = 0; d < m.dim_x; d++) {
      double scale = std::max({1.0, std::abs(j.jtheta(d, e)), std::abs(fd[d])});
      CHECK(std::abs(j.jtheta(d, e) - fd[d]) / scale < tol);
    }
  }
  for (int e = 0; e < m.dim_psi; e++) {
    VectorXd pp = ps, pm = ps;
    double hh = h * std::max(1.0, std::abs(ps[e]));
    pp[e] += hh;
    pm[e] -= hh;
    VectorXd fd = (eval_f(m, x, th, pp, t) - eval_f(m, x, th, pm, t)) / (2 * hh);
    for (int d = 0; d < m.dim_x; d++) {
      double scale = std::max({1.0, std::abs(j.jpsi(d, e)), std::abs(fd[d])});
      CHECK(std::abs(j.jpsi(d, e) - fd[d]) / scale < tol);
    }
  }
}

}  // namespace

TEST_CASE("epidemic model derivative matches hand computation") {
  OdeModel m = make_seird();
  VectorXd dx = eval_f(m, vec({100000, 100, 50, 50}), vec({0.8, 0.08, 0.075}), vec({0.1}), 0.0);
  CHECK(std::abs(dx[0] - (-39.92015968063872)) < 1e-10);
  CHECK(std::abs(dx[1] - 31.92015968063872) < 1e-10);
  CHECK(std::abs(dx[2] - 3.0) < 1e-12);
  CHECK(std::abs(dx[3] - 0.375) < 1e-12);
}

TEST_CASE("predator-prey model derivative and theta jacobian match hand computation") {
  OdeModel m = make_lv();
  VectorXd x = vec({3, 1}), th = vec({0.9, 1.0}), ps = vec({0.75, 1.0});
  VectorXd dx = eval_f(m, x, th, ps, 0.0);
  CHECK(std::abs(dx[0] - 0.45) < 1e-12);
  CHECK(std::abs(dx[1] - 2.0) < 1e-12);
  Jacobians j = eval_jacobians(m, x, th, ps, 0.0);
  CHECK(j.jtheta(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(j.jtheta(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(j.jtheta(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(j.jtheta(1, 1) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("virus model derivative matches hand computation") {
  OdeModel m = make_hiv_full();
  VectorXd ps(6);
  ps << 36.0, 0.108, 5e-4, 0.1, 1000.0, 3.5;
  VectorXd dx = eval_f(m, vec({350, 20, 1000}), vec({1.0}), ps, 0.0);
  CHECK(std::abs(dx[0] - (-1.8)) < 1e-10);
  CHECK(std::abs(dx[1] - (-2.0)) < 1e-12);
  CHECK(std::abs(dx[2] - (-1500.0)) < 1e-9);
}

TEST_CASE("analytic jacobians agree with finite differences") {
  Rng rng(404);
  OdeModel seird = make_seird();
  OdeModel lv = make_lv();
  OdeModel hiv = make_hiv_full();
  for (int rep = 0; rep < 20; rep++) {
    {
      VectorXd x = vec({90000 * rng.uniform_pos(), 500 * rng.uniform_pos(),
                        300 * rng.uniform_pos(), 200 * rng.uniform_pos()});
      VectorXd th = vec({0.5 + rng.uniform(), 0.05 + 0.1 * rng.uniform(),
                         0.02 + 0.06 * rng.uniform()});
      check_jacobians(seird, x, th, vec({0.05 + 0.1 * rng.uniform()}), rng.uniform(), 2e-7);
    }
    {
      VectorXd x = vec({0.5 + 4 * rng.uniform(), 0.3 + 2 * rng.uniform()});
      VectorXd th = vec({0.3 + rng.uniform(), 0.5 + rng.uniform()});
      check_jacobians(lv, x, th, vec({0.4 + rng.uniform(), 0.5 + rng.uniform()}), rng.uniform(),
                      2e-7);
    }
    {
      VectorXd x = vec({200 + 300 * rng.uniform(), 5 + 40 * rng.uniform(),
                        400 + 1200 * rng.uniform()});
      VectorXd ps(6);
      ps << 30 + 10 * rng.uniform(), 0.05 + 0.1 * rng.uniform(), 3e-4 + 4e-4 * rng.uniform(),
          0.05 + 0.1 * rng.uniform(), 800 + 400 * rng.uniform(), 3 + rng.uniform();
      check_jacobians(hiv, x, vec({2 * rng.uniform() - 0.5}), ps, rng.uniform(), 2e-7);
    }
  }
}

TEST_CASE("log-state change of variables") {
  OdeModel m = make_seird();
  OdeModel lm = log_transform(m);
  CHECK(lm.log_scale);
  CHECK_THROWS_AS(log_transform(lm), DomainError);

  VectorXd x = vec({100000, 100, 50, 50});
  VectorXd th = vec({0.8, 0.08, 0.075}), ps = vec({0.1});
  VectorXd y = x.array().log();
  VectorXd dy = eval_f(lm, y, th, ps, 0.0);
  VectorXd dx = eval_f(m, x, th, ps, 0.0);
  for (int d = 0; d < 4; d++) CHECK(dy[d] == doctest::Approx(dx[d] / x[d]).epsilon(1e-12));

  Rng rng(11);
  for (int rep = 0; rep < 10; rep++) {
    VectorXd yy = vec({7 + 4 * rng.uniform(), 2 + 3 * rng.uniform(), 2 + 3 * rng.uniform(),
                       1 + 3 * rng.uniform()});
    VectorXd tt = vec({0.5 + rng.uniform(), 0.05 + 0.1 * rng.uniform(),
                       0.02 + 0.06 * rng.uniform()});
    check_jacobians(lm, yy, tt, vec({0.05 + 0.1 * rng.uniform()}), 0.0, 5e-7);
  }
}

TEST_CASE("built-in case studies are wired consistently") {
  CaseStudy se = builtin_truth("seird");
  CHECK(se.inference_model.log_scale);
  CHECK(se.log_obs);
  CHECK(se.sim_truth.obs_times[0].size() == 33);
  CHECK(se.sim_truth.obs_times[1].size() == 17);
  CHECK(se.sim_truth.obs_times[1][1] == doctest::Approx(2.0));
  CHECK(se.sim_truth.theta_funcs[0](0.0) == doctest::Approx(0.8));
  CHECK(se.sim_truth.theta_funcs[0](8.0) == doctest::Approx(2.8));

  CaseStudy lv = builtin_truth("lv");
  CHECK(lv.sim_truth.obs_times[0].size() == 241);
  CHECK(lv.sim_truth.theta_funcs[0](0.0) == doctest::Approx(0.9));
  CHECK(lv.sim_truth.psi[0] == doctest::Approx(0.75));

  CHECK_THROWS_AS(builtin_truth("nope"), ConfigError);
}

TEST_CASE("virus case study: rewritten system reproduces the full dynamics") {
  CaseStudy cs = builtin_truth("hiv");
  REQUIRE(cs.hiv);
  CHECK(cs.obs_comp_in_sim == std::vector<int>{2});
  CHECK(cs.hiv->cov_values[0] == doctest::Approx(350.0));
  CHECK(cs.hiv->a_true(0.0) == doctest::Approx(2000.0).epsilon(1e-6));

  // a1 + a2 T equals the headline drive N delta Ts pointwise
  for (double t : {0.0, 13.7, 42.0, 77.3, 100.0}) {
    double lhs = cs.inference_truth.theta_funcs[0](t) +
                 cs.inference_truth.theta_funcs[1](t) * cs.hiv->t_cells(t);
    CHECK(lhs == doctest::Approx(cs.hiv->a_true(t)).epsilon(1e-4));
  }

  // integrating the reduced model with true coefficients recovers the
  // virion trajectory of the full system
  VectorXd times = Eigen::VectorXd::LinSpaced(11, 0.0, 100.0);
  ThetaPath tp = [&cs](double t, VectorXd& th) {
    th[0] = cs.inference_truth.theta_funcs[0](t);
    th[1] = cs.inference_truth.theta_funcs[1](t);
  };
  OdeSolution red = rk4_solve(cs.inference_model, cs.inference_truth.x0, tp, VectorXd(), times, 40);
  ThetaPath rp = [&cs](double t, VectorXd& th) { th[0] = cs.sim_truth.theta_funcs[0](t); };
  OdeSolution full = rk4_solve(cs.sim_model, cs.sim_truth.x0, rp, cs.sim_truth.psi, times, 40);
  for (int i = 0; i < times.size(); i++) {
    double rel = std::abs(red.states(0, i) - full.states(2, i)) / std::abs(full.states(2, i));
    CHECK(rel < 2e-3);
  }
}
