#include "tvmagi/models.hpp"

#include <cmath>

#include "tvmagi/errors.hpp"
#include "tvmagi/rk4.hpp"

namespace tvmagi {

namespace {
constexpr double kSeirdPopulation = 100200.0;  // S+E+I+D at day 0, no removed pool yet
constexpr double kHivClearance = 3.5;          // known virion clearance rate

Eigen::VectorXd linspace(double a, double b, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; i++) v[i] = a + (b - a) * i / (n - 1);
  return v;
}
}  // namespace

Eigen::VectorXd eval_f(const OdeModel& m, const Eigen::VectorXd& x, const Eigen::VectorXd& theta,
                       const Eigen::VectorXd& psi, double t) {
  if (x.size() != m.dim_x || theta.size() != m.dim_theta || psi.size() != m.dim_psi)
    throw DomainError("eval_f: dimension mismatch for model " + m.name);
  Eigen::VectorXd dx(m.dim_x);
  m.f(x, theta, psi, t, dx);
  if (!dx.allFinite()) throw NonFiniteError("eval_f: non-finite derivative in model " + m.name);
  return dx;
}

Jacobians eval_jacobians(const OdeModel& m, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& theta, const Eigen::VectorXd& psi, double t) {
  if (x.size() != m.dim_x || theta.size() != m.dim_theta || psi.size() != m.dim_psi)
    throw DomainError("eval_jacobians: dimension mismatch for model " + m.name);
  Jacobians j;
  j.jx.resize(m.dim_x, m.dim_x);
  j.jtheta.resize(m.dim_x, m.dim_theta);
  j.jpsi.resize(m.dim_x, std::max(m.dim_psi, 1));
  m.jac(x, theta, psi, t, j.jx, j.jtheta, j.jpsi);
  j.jpsi.conservativeResize(m.dim_x, m.dim_psi);
  if (!j.jx.allFinite() || !j.jtheta.allFinite() || !j.jpsi.allFinite())
    throw NonFiniteError("eval_jacobians: non-finite entry in model " + m.name);
  return j;
}

OdeModel log_transform(const OdeModel& m) {
  if (m.log_scale) throw DomainError("log_transform: model " + m.name + " already log-scale");
  OdeModel out = m;
  out.name = m.name + "_log";
  out.log_scale = true;
  auto base_f = m.f;
  auto base_jac = m.jac;
  const int d = m.dim_x;
  out.f = [base_f, d](const Eigen::VectorXd& y, const Eigen::VectorXd& th,
                      const Eigen::VectorXd& ps, double t, Eigen::VectorXd& dy) {
    thread_local Eigen::VectorXd x;
    x = y.array().exp();
    base_f(x, th, ps, t, dy);
    dy.array() *= (-y).array().exp();
  };
  out.jac = [base_f, base_jac, d](const Eigen::VectorXd& y, const Eigen::VectorXd& th,
                                  const Eigen::VectorXd& ps, double t, Eigen::MatrixXd& jx,
                                  Eigen::MatrixXd& jth, Eigen::MatrixXd& jps) {
    thread_local Eigen::VectorXd x, fx, einv;
    x = y.array().exp();
    einv = (-y).array().exp();
    fx.resize(d);
    base_f(x, th, ps, t, fx);
    base_jac(x, th, ps, t, jx, jth, jps);
    // d/dy_e [f_d(e^y) e^{-y_d}] = J_de e^{y_e - y_d} - delta_de f_d e^{-y_d}
    for (int dd = 0; dd < d; dd++) {
      for (int e = 0; e < d; e++) jx(dd, e) *= x[e] * einv[dd];
      jx(dd, dd) -= fx[dd] * einv[dd];
    }
    jth.array().colwise() *= einv.array();
    if (jps.cols() > 0) jps.array().colwise() *= einv.array();
  };
  return out;
}

OdeModel make_seird() {
  OdeModel m;
  m.name = "seird";
  m.dim_x = 4;
  m.dim_theta = 3;
  m.dim_psi = 1;
  m.x_names = {"S", "E", "I", "D"};
  m.theta_names = {"beta", "ve", "pd"};
  m.psi_names = {"vi"};
  m.psi_positive = {true};
  m.f = [](const Eigen::VectorXd& x, const Eigen::VectorXd& th, const Eigen::VectorXd& ps,
           double, Eigen::VectorXd& dx) {
    double flow = th[0] * x[2] * x[0] / kSeirdPopulation;
    dx[0] = -flow;
    dx[1] = flow - th[1] * x[1];
    dx[2] = th[1] * x[1] - ps[0] * x[2];
    dx[3] = ps[0] * x[2] * th[2];
  };
  m.jac = [](const Eigen::VectorXd& x, const Eigen::VectorXd& th, const Eigen::VectorXd& ps,
             double, Eigen::MatrixXd& jx, Eigen::MatrixXd& jth, Eigen::MatrixXd& jps) {
    jx.setZero();
    jth.setZero();
    jps.setZero();
    double bI = th[0] * x[2] / kSeirdPopulation;
    double bS = th[0] * x[0] / kSeirdPopulation;
    jx(0, 0) = -bI;
    jx(0, 2) = -bS;
    jx(1, 0) = bI;
    jx(1, 1) = -th[1];
    jx(1, 2) = bS;
    jx(2, 1) = th[1];
    jx(2, 2) = -ps[0];
    jx(3, 2) = ps[0] * th[2];
    double is = x[2] * x[0] / kSeirdPopulation;
    jth(0, 0) = -is;
    jth(1, 0) = is;
    jth(1, 1) = -x[1];
    jth(2, 1) = x[1];
    jth(3, 2) = ps[0] * x[2];
    jps(2, 0) = -x[2];
    jps(3, 0) = x[2] * th[2];
  };
  return m;
}

OdeModel make_lv() {
  OdeModel m;
  m.name = "lv";
  m.dim_x = 2;
  m.dim_theta = 2;
  m.dim_psi = 2;
  m.x_names = {"prey", "predator"};
  m.theta_names = {"alpha", "gamma"};
  m.psi_names = {"beta", "delta"};
  m.psi_positive = {true, true};
  m.f = [](const Eigen::VectorXd& x, const Eigen::VectorXd& th, const Eigen::VectorXd& ps,
           double, Eigen::VectorXd& dx) {
    dx[0] = th[0] * x[0] - ps[0] * x[0] * x[1];
    dx[1] = ps[1] * x[0] * x[1] - th[1] * x[1];
  };
  m.jac = [](const Eigen::VectorXd& x, const Eigen::VectorXd& th, const Eigen::VectorXd& ps,
             double, Eigen::MatrixXd& jx, Eigen::MatrixXd& jth, Eigen::MatrixXd& jps) {
    jx(0, 0) = th[0] - ps[0] * x[1];
    jx(0, 1) = -ps[0] * x[0];
    jx(1, 0) = ps[1] * x[1];
    jx(1, 1) = ps[1] * x[0] - th[1];
    jth.setZero();
    jth(0, 0) = x[0];
    jth(1, 1) = -x[1];
    jps.setZero();
    jps(0, 0) = -x[0] * x[1];
    jps(1, 1) = x[0] * x[1];
  };
  return m;
}

OdeModel make_hiv_full() {
  OdeModel m;
  m.name = "hiv_full";
  m.dim_x = 3;
  m.dim_theta = 1;
  m.dim_psi = 6;
  m.x_names = {"T", "Ts", "X"};
  m.theta_names = {"r"};
  m.psi_names = {"lambda", "rho", "kinf", "dclear", "nburst", "cclear"};
  m.psi_positive = {true, true, true, true, true, true};
  m.f = [](const Eigen::VectorXd& x, const Eigen::VectorXd& th, const Eigen::VectorXd& ps,
           double, Eigen::VectorXd& dx) {
    double infect = ps[2] * (1.0 - th[0]) * x[0] * x[2];
    dx[0] = ps[0] - ps[1] * x[0] - infect;
    dx[1] = infect - ps[3] * x[1];
    dx[2] = ps[4] * ps[3] * x[1] - ps[5] * x[2];
  };
  m.jac = [](const Eigen::VectorXd& x, const Eigen::VectorXd& th, const Eigen::VectorXd& ps,
             double, Eigen::MatrixXd& jx, Eigen::MatrixXd& jth, Eigen::MatrixXd& jps) {
    double u = 1.0 - th[0];
    double k = ps[2];
    jx.setZero();
    jth.setZero();
    jps.setZero();
    jx(0, 0) = -ps[1] - k * u * x[2];
    jx(0, 2) = -k * u * x[0];
    jx(1, 0) = k * u * x[2];
    jx(1, 1) = -ps[3];
    jx(1, 2) = k * u * x[0];
    jx(2, 1) = ps[4] * ps[3];
    jx(2, 2) = -ps[5];
    double txx = x[0] * x[2];
    jth(0, 0) = k * txx;
    jth(1, 0) = -k * txx;
    jps(0, 0) = 1.0;
    jps(0, 1) = -x[0];
    jps(0, 2) = -u * txx;
    jps(1, 2) = u * txx;
    jps(1, 3) = -x[1];
    jps(2, 3) = ps[4] * x[1];
    jps(2, 4) = ps[3] * x[1];
    jps(2, 5) = -x[2];
  };
  return m;
}

OdeModel make_hiv_reduced(const Eigen::VectorXd& t_samples, const Eigen::VectorXd& t_values) {
  OdeModel m;
  m.name = "hiv";
  m.dim_x = 1;
  m.dim_theta = 2;
  m.dim_psi = 0;
  m.x_names = {"X"};
  m.theta_names = {"a1", "a2"};
  Pchip tc(t_samples, t_values);
  m.f = [tc](const Eigen::VectorXd& x, const Eigen::VectorXd& th, const Eigen::VectorXd&,
             double t, Eigen::VectorXd& dx) {
    dx[0] = th[0] + th[1] * tc(t) - kHivClearance * x[0];
  };
  m.jac = [tc](const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&, double t,
               Eigen::MatrixXd& jx, Eigen::MatrixXd& jth, Eigen::MatrixXd& jps) {
    jx(0, 0) = -kHivClearance;
    jth(0, 0) = 1.0;
    jth(0, 1) = tc(t);
    (void)jps;
  };
  return m;
}

CaseStudy builtin_truth(const std::string& name) {
  CaseStudy cs;
  cs.name = name;
  if (name == "seird") {
    cs.sim_model = make_seird();
    cs.inference_model = log_transform(cs.sim_model);
    cs.log_obs = true;
    TrueParamSpec t;
    t.theta_funcs = {[](double u) { return 1.8 - std::cos(3.141592653589793 * u / 8.0); },
                     [](double u) { return 0.1 - 0.02 * std::cos(3.141592653589793 * u / 8.0); },
                     [](double u) { return 0.05 + 0.025 * std::cos(3.141592653589793 * u / 8.0); }};
    t.psi = Eigen::VectorXd::Constant(1, 0.1);
    t.x0 = Eigen::VectorXd(4);
    t.x0 << 100000, 100, 50, 50;
    t.t_end = 32.0;
    t.obs_times = {linspace(0, 32, 33), linspace(0, 32, 17), linspace(0, 32, 33),
                   linspace(0, 32, 33)};
    t.noise_sd = Eigen::VectorXd::Constant(4, 0.03);
    cs.sim_truth = t;
    cs.inference_truth = t;
    return cs;
  }
  if (name == "lv") {
    cs.sim_model = make_lv();
    cs.inference_model = cs.sim_model;
    TrueParamSpec t;
    t.theta_funcs = {[](double u) { return 0.6 + 0.3 * std::cos(3.141592653589793 * u / 5.0); },
                     [](double u) { return 1.0 + 0.1 * std::sin(3.141592653589793 * u / 5.0); }};
    t.psi = Eigen::VectorXd(2);
    t.psi << 0.75, 1.0;
    t.x0 = Eigen::VectorXd(2);
    t.x0 << 3.0, 1.0;
    t.t_end = 20.0;
    t.obs_times = {linspace(0, 20, 241), linspace(0, 20, 241)};
    t.noise_sd = Eigen::VectorXd::Constant(2, 0.03);
    cs.sim_truth = t;
    cs.inference_truth = t;
    return cs;
  }
  if (name == "hiv") {
    cs.sim_model = make_hiv_full();
    cs.relative_traj_metric = true;
    cs.obs_comp_in_sim = {2};
    TrueParamSpec st;
    st.theta_funcs = {[](double u) { return std::cos(3.141592653589793 * u / 500.0); }};
    st.psi = Eigen::VectorXd(6);
    st.psi << 36.0, 0.108, 5e-4, 0.1, 1000.0, 3.5;
    st.x0 = Eigen::VectorXd(3);
    st.x0 << 350.0, 20.0, 1000.0;
    st.t_end = 100.0;
    st.obs_times = {Eigen::VectorXd(), Eigen::VectorXd(), linspace(0, 100, 101)};
    st.noise_sd = Eigen::VectorXd::Constant(3, 0.05);
    cs.sim_truth = st;

    // dense reference solve of the full system defines the rewritten-system
    // truth: a1 = -N dTs/dt, a2 = N k (1-r) X, and the headline drive
    // a = N delta Ts
    Eigen::VectorXd dense = linspace(0, 100, 4001);
    ThetaPath rpath = [&st](double u, Eigen::VectorXd& th) { th[0] = st.theta_funcs[0](u); };
    OdeSolution sol = rk4_solve(cs.sim_model, st.x0, rpath, st.psi, dense, 4);
    Eigen::VectorXd a1(dense.size()), a2(dense.size()), adrive(dense.size());
    double nb = st.psi[4], kinf = st.psi[2], dcl = st.psi[3];
    for (int i = 0; i < dense.size(); i++) {
      double r = st.theta_funcs[0](dense[i]);
      double tt = sol.states(0, i), ts = sol.states(1, i), xx = sol.states(2, i);
      double dts = kinf * (1.0 - r) * tt * xx - dcl * ts;
      a1[i] = -nb * dts;
      a2[i] = nb * kinf * (1.0 - r) * xx;
      adrive[i] = nb * dcl * ts;
    }
    auto ex = std::make_shared<HivExtras>();
    ex->cov_times = linspace(0, 100, 101);
    ex->cov_values.resize(101);
    {
      OdeSolution daily = rk4_solve(cs.sim_model, st.x0, rpath, st.psi, ex->cov_times, 40);
      for (int i = 0; i < 101; i++) ex->cov_values[i] = daily.states(0, i);
    }
    ex->t_cells = Pchip(ex->cov_times, ex->cov_values);
    Pchip a_interp(dense, adrive);
    ex->a_true = [a_interp](double u) { return a_interp(u); };
    cs.hiv = ex;

    cs.inference_model = make_hiv_reduced(ex->cov_times, ex->cov_values);
    TrueParamSpec it;
    Pchip a1i(dense, a1), a2i(dense, a2);
    it.theta_funcs = {[a1i](double u) { return a1i(u); }, [a2i](double u) { return a2i(u); }};
    it.psi = Eigen::VectorXd();
    it.x0 = Eigen::VectorXd::Constant(1, st.x0[2]);
    it.t_end = 100.0;
    it.obs_times = {st.obs_times[2]};
    it.noise_sd = Eigen::VectorXd::Constant(1, 0.05);
    cs.inference_truth = it;
    return cs;
  }
  throw ConfigError("builtin_truth: unknown case study '" + name + "'");
}

}  // namespace tvmagi
