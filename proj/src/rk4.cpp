#include "tvmagi/rk4.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "tvmagi/errors.hpp"

namespace tvmagi {

namespace {

// linear interpolation weights of t on the grid: theta(t) = (1-w) col(j) + w col(j+1)
inline void theta_weights(const Eigen::VectorXd& grid, double t, int& j, double& w) {
  const int n = static_cast<int>(grid.size());
  if (n == 1) {
    j = 0;
    w = 0.0;
    return;
  }
  if (t <= grid[0]) {
    j = 0;
    w = 0.0;
    return;
  }
  if (t >= grid[n - 1]) {
    j = n - 2;
    w = 1.0;
    return;
  }
  int lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    (grid[mid] <= t ? lo : hi) = mid;
  }
  j = lo;
  w = (t - grid[lo]) / (grid[lo + 1] - grid[lo]);
}

}  // namespace

ThetaPath theta_path_linear(const Eigen::MatrixXd& theta_grid, const Eigen::VectorXd& grid) {
  if (theta_grid.cols() != grid.size() || grid.size() < 1)
    throw ConfigError("theta_path_linear: grid and values must align");
  auto tg = std::make_shared<Eigen::MatrixXd>(theta_grid);
  auto g = std::make_shared<Eigen::VectorXd>(grid);
  return [tg, g](double t, Eigen::VectorXd& th) {
    int j;
    double w;
    theta_weights(*g, t, j, w);
    th = tg->col(j);
    if (w > 0.0) th = (1.0 - w) * tg->col(j) + w * tg->col(j + 1);
  };
}

OdeSolution rk4_solve(const OdeModel& m, const Eigen::VectorXd& x0, const ThetaPath& theta_at,
                      const Eigen::VectorXd& psi, const Eigen::VectorXd& times, int substeps) {
  if (times.size() < 1) throw DomainError("rk4_solve: need at least one output time");
  if (substeps < 1) throw DomainError("rk4_solve: substeps must be >= 1");
  const int d = m.dim_x;
  OdeSolution sol;
  sol.times = times;
  sol.states.resize(d, times.size());
  Eigen::VectorXd x = x0, th(m.dim_theta);
  Eigen::VectorXd k1(d), k2(d), k3(d), k4(d), stage(d), dx(d);
  auto f = [&](const Eigen::VectorXd& xs, double t, Eigen::VectorXd& out) {
    theta_at(t, th);
    m.f(xs, th, psi, t, out);
  };
  sol.states.col(0) = x;
  for (int k = 0; k + 1 < times.size(); k++) {
    double h = (times[k + 1] - times[k]) / substeps;
    for (int s = 0; s < substeps; s++) {
      rk4_step(f, times[k] + s * h, h, x, k1, k2, k3, k4, stage);
    }
    if (!x.allFinite()) throw NonFiniteError("rk4_solve: state became non-finite");
    sol.states.col(k + 1) = x;
  }
  return sol;
}

namespace {

// state and scratch shared by objective evaluations; owned by the closure
// returned from rk_ls_objective
struct RkLsWork {
  OdeModel m;
  Eigen::VectorXd grid;
  int steps_per_gap;
  int d, p, q, ng, nt, dim, total_sub;
  std::vector<double> tl;
  std::vector<std::vector<std::pair<int, double>>> at;
  Eigen::MatrixXd base, st2, st3, st4;
  Eigen::VectorXd hs, t0s;
  Eigen::MatrixXd jx, jth, jps;
  Eigen::VectorXd th_at;

  RkLsWork(const OdeModel& model, const ObservationSet& obs, const Eigen::VectorXd& g, int sub)
      : m(model), grid(g), steps_per_gap(sub) {
    d = m.dim_x;
    p = m.dim_theta;
    q = m.dim_psi;
    ng = static_cast<int>(grid.size());
    if (ng < 1) throw DomainError("rk_least_squares: empty grid");
    if (steps_per_gap < 1) throw DomainError("rk_least_squares: substeps must be >= 1");

    // output timeline: all distinct observation times
    for (const auto& tv : obs.times)
      for (int i = 0; i < tv.size(); i++) tl.push_back(tv[i]);
    std::sort(tl.begin(), tl.end());
    tl.erase(std::unique(tl.begin(), tl.end()), tl.end());
    if (tl.empty()) throw DomainError("rk_least_squares: no observations");
    nt = static_cast<int>(tl.size());
    dim = d + p * ng + q;

    // observation lookup: timeline index -> (component, value)
    at.resize(nt);
    for (int c = 0; c < obs.dim(); c++) {
      for (int i = 0; i < obs.times[c].size(); i++) {
        auto it = std::lower_bound(tl.begin(), tl.end(), obs.times[c][i]);
        at[it - tl.begin()].push_back({c, obs.values[c][i]});
      }
    }

    total_sub = (nt - 1) * steps_per_gap;
    base.resize(d, total_sub);
    st2.resize(d, total_sub);
    st3.resize(d, total_sub);
    st4.resize(d, total_sub);
    hs.resize(std::max(total_sub, 1));
    t0s.resize(std::max(total_sub, 1));
    jx.resize(d, d);
    jth.resize(d, p);
    jps.resize(d, std::max(q, 1));
    th_at.resize(p);
  }

  void unpack(const Eigen::VectorXd& v, Eigen::VectorXd& x0, Eigen::MatrixXd& th,
              Eigen::VectorXd& psi) const {
    x0 = v.head(d);
    th = Eigen::Map<const Eigen::MatrixXd>(v.data() + d, p, ng);
    psi.resize(q);
    for (int i = 0; i < q; i++)
      psi[i] = m.psi_positive[i] ? std::exp(v[d + p * ng + i]) : v[d + p * ng + i];
  }

  double eval(const Eigen::VectorXd& v, Eigen::VectorXd& gout) {
    Eigen::VectorXd x0;
    Eigen::MatrixXd th;
    Eigen::VectorXd psi;
    unpack(v, x0, th, psi);

    Eigen::VectorXd k1(d), k2(d), k3(d), k4(d);
    auto theta_of = [&](double t) {
      int j;
      double w;
      theta_weights(grid, t, j, w);
      th_at = th.col(j);
      if (w > 0.0) th_at = (1.0 - w) * th.col(j) + w * th.col(j + 1);
    };
    auto f = [&](const Eigen::VectorXd& xs, double t, Eigen::VectorXd& out) {
      theta_of(t);
      m.f(xs, th_at, psi, t, out);
    };

    // forward pass, recording stage bases
    double sse = 0.0;
    Eigen::VectorXd x = x0;
    std::vector<Eigen::VectorXd> x_at(nt);
    int sub = 0;
    x_at[0] = x;
    for (int k = 0; k + 1 < nt; k++) {
      double h = (tl[k + 1] - tl[k]) / steps_per_gap;
      for (int s = 0; s < steps_per_gap; s++, sub++) {
        double t = tl[k] + s * h;
        hs[sub] = h;
        t0s[sub] = t;
        base.col(sub) = x;
        f(x, t, k1);
        st2.col(sub) = x + 0.5 * h * k1;
        f(st2.col(sub), t + 0.5 * h, k2);
        st3.col(sub) = x + 0.5 * h * k2;
        f(st3.col(sub), t + 0.5 * h, k3);
        st4.col(sub) = x + h * k3;
        f(st4.col(sub), t + h, k4);
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      if (!x.allFinite()) {
        gout.setZero(dim);
        return std::numeric_limits<double>::infinity();
      }
      x_at[k + 1] = x;
    }
    for (int k = 0; k < nt; k++)
      for (const auto& [c, y] : at[k]) {
        double r = x_at[k][c] - y;
        sse += r * r;
      }

    // backward pass
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd gth = Eigen::MatrixXd::Zero(p, ng);
    Eigen::VectorXd gpsi = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd gstage(d);
    sub = total_sub - 1;
    for (int k = nt - 1; k >= 1; k--) {
      for (const auto& [c, y] : at[k]) lam[c] += 2.0 * (x_at[k][c] - y);
      for (int s = steps_per_gap - 1; s >= 0; s--, sub--) {
        double h = hs[sub], t = t0s[sub];
        Eigen::VectorXd lam_x = lam;
        Eigen::VectorXd g1 = (h / 6.0) * lam, g2 = (h / 3.0) * lam, g3 = (h / 3.0) * lam,
                        g4 = (h / 6.0) * lam;
        auto stage_pull = [&](const Eigen::VectorXd& xs, double ts, const Eigen::VectorXd& gki,
                              Eigen::VectorXd& gx_out) {
          int j;
          double w;
          theta_weights(grid, ts, j, w);
          th_at = th.col(j);
          if (w > 0.0) th_at = (1.0 - w) * th.col(j) + w * th.col(j + 1);
          m.jac(xs, th_at, psi, ts, jx, jth, jps);
          gx_out.noalias() = jx.transpose() * gki;
          Eigen::VectorXd gt = jth.transpose() * gki;
          gth.col(j) += (1.0 - w) * gt;
          if (w > 0.0) gth.col(j + 1) += w * gt;
          if (q > 0) gpsi.noalias() += jps.leftCols(q).transpose() * gki;
        };
        // k4 stage, then fold into k3, and so on down to the step base
        stage_pull(st4.col(sub), t + h, g4, gstage);
        lam_x += gstage;
        g3 += h * gstage;
        stage_pull(st3.col(sub), t + 0.5 * h, g3, gstage);
        lam_x += gstage;
        g2 += 0.5 * h * gstage;
        stage_pull(st2.col(sub), t + 0.5 * h, g2, gstage);
        lam_x += gstage;
        g1 += 0.5 * h * gstage;
        stage_pull(base.col(sub), t, g1, gstage);
        lam_x += gstage;
        lam = lam_x;
      }
    }
    for (const auto& [c, y] : at[0]) lam[c] += 2.0 * (x_at[0][c] - y);

    gout.resize(dim);
    gout.head(d) = lam;
    Eigen::Map<Eigen::MatrixXd>(gout.data() + d, p, ng) = gth;
    for (int i = 0; i < q; i++)
      gout[d + p * ng + i] = m.psi_positive[i] ? gpsi[i] * psi[i] : gpsi[i];
    return sse;
  }
};

}  // namespace

Objective rk_ls_objective(const OdeModel& m, const ObservationSet& obs,
                          const Eigen::VectorXd& grid, int substeps) {
  auto w = std::make_shared<RkLsWork>(m, obs, grid, substeps);
  return [w](const Eigen::VectorXd& v, Eigen::VectorXd& g) { return w->eval(v, g); };
}

RkLsResult rk_least_squares(const OdeModel& m, const ObservationSet& obs,
                            const Eigen::VectorXd& grid, const Eigen::VectorXd& x0_init,
                            const Eigen::MatrixXd& theta_init, const Eigen::VectorXd& psi_init,
                            const AdamConfig& opt, int substeps) {
  const int d = m.dim_x, p = m.dim_theta, q = m.dim_psi;
  const int ng = static_cast<int>(grid.size());
  if (theta_init.rows() != p || theta_init.cols() != ng)
    throw DomainError("rk_least_squares: theta_init shape mismatch");

  auto w = std::make_shared<RkLsWork>(m, obs, grid, substeps);
  Objective fobj = [w](const Eigen::VectorXd& v, Eigen::VectorXd& g) { return w->eval(v, g); };

  Eigen::VectorXd v0(w->dim);
  v0.head(d) = x0_init;
  Eigen::Map<Eigen::MatrixXd>(v0.data() + d, p, ng) = theta_init;
  for (int i = 0; i < q; i++) {
    if (m.psi_positive[i]) {
      if (!(psi_init[i] > 0.0)) throw DomainError("rk_least_squares: psi_init must be positive");
      v0[d + p * ng + i] = std::log(psi_init[i]);
    } else {
      v0[d + p * ng + i] = psi_init[i];
    }
  }

  AdamResult ar = adam_minimize(fobj, v0, opt);
  RkLsResult out;
  Eigen::MatrixXd th;
  Eigen::VectorXd psi;
  w->unpack(ar.x, out.x0, th, psi);
  out.theta = th;
  out.psi = psi;
  out.objective = ar.value;
  out.iters = ar.iters;
  out.aborted_nonfinite = ar.aborted_nonfinite;
  return out;
}

}  // namespace tvmagi
