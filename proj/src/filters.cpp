#include "tvmagi/filters.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "tvmagi/errors.hpp"
#include "tvmagi/rk4.hpp"
#include "tvmagi/rng.hpp"

namespace tvmagi {

namespace {

struct ObsEvent {
  double t = 0.0;
  std::vector<int> comps;
  std::vector<double> vals;
};

std::vector<ObsEvent> collect_events(const ObservationSet& data) {
  struct Rec {
    double t;
    int comp;
    double val;
  };
  std::vector<Rec> recs;
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (int d = 0; d < data.dim(); ++d) {
    for (int i = 0; i < data.times[d].size(); ++i) {
      double t = data.times[d][i];
      recs.push_back({t, d, data.values[d][i]});
      lo = any ? std::min(lo, t) : t;
      hi = any ? std::max(hi, t) : t;
      any = true;
    }
  }
  if (!any) throw ConfigError("filter: no observations");
  std::stable_sort(recs.begin(), recs.end(),
                   [](const Rec& a, const Rec& b) { return a.t < b.t; });
  const double tol = 1e-9 * std::max(1.0, hi - lo);
  std::vector<ObsEvent> events;
  for (const Rec& r : recs) {
    if (events.empty() || r.t - events.back().t > tol) {
      events.push_back({r.t, {}, {}});
    }
    events.back().comps.push_back(r.comp);
    events.back().vals.push_back(r.val);
  }
  return events;
}

// symmetric PSD square root with small negative eigenvalues clamped to zero;
// genuine indefiniteness is covariance collapse
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& p) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (p + p.transpose()));
  if (es.info() != Eigen::Success)
    throw FactorizationError("filter: covariance eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -1e-8 * scale)
    throw FactorizationError("filter: covariance collapsed (not positive semidefinite)");
  Eigen::VectorXd root = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

struct MemberScratch {
  Eigen::VectorXd x, th, ps, k1, k2, k3, k4, stage;
};

void advance_member(const OdeModel& m, Eigen::VectorXd& z, double t0, double t1, int substeps,
                    MemberScratch& s) {
  const int d = m.dim_x;
  s.x = z.head(d);
  s.th = z.segment(d, m.dim_theta);
  s.ps = z.tail(m.dim_psi);
  auto f = [&](const Eigen::VectorXd& x, double t, Eigen::VectorXd& out) {
    out = eval_f(m, x, s.th, s.ps, t);
  };
  const double h = (t1 - t0) / substeps;
  for (int i = 0; i < substeps; ++i)
    rk4_step(f, t0 + i * h, h, s.x, s.k1, s.k2, s.k3, s.k4, s.stage);
  z.head(d) = s.x;
}

// mean and flow sensitivity of the augmented state (x, theta, psi); the
// parameter rows of the transition are identity, so only the top d x m block
// is integrated: S' = J_x S + [0 | J_theta | J_psi]
void advance_mean_and_transition(const OdeModel& model, Eigen::VectorXd& mean,
                                 Eigen::MatrixXd& phi, double t0, double t1, int substeps,
                                 MemberScratch& s) {
  const int d = model.dim_x, p = model.dim_theta, q = model.dim_psi;
  const int m = d + p + q;
  s.th = mean.segment(d, p);
  s.ps = mean.tail(q);
  Eigen::VectorXd u(d + d * m);
  u.head(d) = mean.head(d);
  {
    Eigen::Map<Eigen::MatrixXd> s0(u.data() + d, d, m);
    s0.setZero();
    s0.leftCols(d).setIdentity();
  }
  auto f = [&](const Eigen::VectorXd& in, double t, Eigen::VectorXd& out) {
    out.resize(d + d * m);
    Eigen::Map<const Eigen::MatrixXd> sm(in.data() + d, d, m);
    Jacobians jac = eval_jacobians(model, in.head(d), s.th, s.ps, t);
    out.head(d) = eval_f(model, in.head(d), s.th, s.ps, t);
    Eigen::Map<Eigen::MatrixXd> ds(out.data() + d, d, m);
    ds = jac.jx * sm;
    if (p > 0) ds.middleCols(d, p) += jac.jtheta;
    if (q > 0) ds.rightCols(q) += jac.jpsi;
  };
  const double h = (t1 - t0) / substeps;
  for (int i = 0; i < substeps; ++i)
    rk4_step(f, t0 + i * h, h, u, s.k1, s.k2, s.k3, s.k4, s.stage);
  mean.head(d) = u.head(d);
  phi.setZero();
  phi.topRows(d) = Eigen::Map<const Eigen::MatrixXd>(u.data() + d, d, m);
  phi.bottomRightCorner(p + q, p + q).setIdentity();
}

struct LinearAnalysis {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Kalman update with the selector observation matrix given by comps, Joseph
// stabilized
void kalman_update(Eigen::VectorXd& mean, Eigen::MatrixXd& cov, const ObsEvent& ev,
                   const Eigen::VectorXd& obs_sd) {
  const int m = static_cast<int>(mean.size());
  const int o = static_cast<int>(ev.comps.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(o, m);
  Eigen::VectorXd y(o), rdiag(o);
  for (int i = 0; i < o; ++i) {
    h(i, ev.comps[i]) = 1.0;
    y[i] = ev.vals[i];
    rdiag[i] = obs_sd[ev.comps[i]] * obs_sd[ev.comps[i]];
  }
  Eigen::MatrixXd pht = cov * h.transpose();
  Eigen::MatrixXd s = h * pht;
  s.diagonal() += rdiag;
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success)
    throw FactorizationError("filter: innovation covariance collapsed (not positive definite)");
  Eigen::MatrixXd k = llt.solve(pht.transpose()).transpose();
  mean += k * (y - h * mean);
  Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(m, m) - k * h;
  cov = ikh * cov * ikh.transpose() + k * rdiag.asDiagonal() * k.transpose();
  cov = 0.5 * (cov + cov.transpose());
}

Eigen::VectorXd resolve_walk_sd(const FilterConfig& cfg, const Eigen::VectorXd& init_mean, int d,
                                int pq) {
  if (cfg.param_walk_sd.size() == 0)
    return 0.02 * init_mean.segment(d, pq).cwiseAbs();
  if (cfg.param_walk_sd.size() != pq)
    throw ConfigError("filter: param_walk_sd size mismatch");
  return cfg.param_walk_sd;
}

}  // namespace

FilterMethod parse_filter_method(const std::string& name) {
  if (name == "ekf") return FilterMethod::Ekf;
  if (name == "ukf") return FilterMethod::Ukf;
  if (name == "enkf") return FilterMethod::Enkf;
  if (name == "eakf") return FilterMethod::Eakf;
  throw ConfigError("filter: unknown method '" + name + "' (expected ekf|ukf|enkf|eakf)");
}

std::string filter_method_name(FilterMethod method) {
  switch (method) {
    case FilterMethod::Ekf: return "ekf";
    case FilterMethod::Ukf: return "ukf";
    case FilterMethod::Enkf: return "enkf";
    case FilterMethod::Eakf: return "eakf";
  }
  throw ConfigError("filter: unknown method value");
}

bool eakf_scalar_update(Eigen::MatrixXd& ens, int obs_row, double y, double obs_var) {
  const int n = static_cast<int>(ens.cols());
  if (n < 2) throw ConfigError("eakf update needs at least two members");
  if (obs_row < 0 || obs_row >= ens.rows()) throw ConfigError("eakf update: row out of range");
  if (!(obs_var > 0.0)) throw ConfigError("eakf update: observation variance must be positive");
  const Eigen::RowVectorXd h = ens.row(obs_row);
  const double hbar = h.mean();
  const Eigen::RowVectorXd dh = h.array() - hbar;
  const double var = dh.squaredNorm() / (n - 1);
  const double dust = 1e-12 * (1.0 + std::abs(hbar));
  if (!(var > dust * dust)) return false;
  const double post_var = 1.0 / (1.0 / var + 1.0 / obs_var);
  const double post_mean = post_var * (hbar / var + y / obs_var);
  const double shrink = std::sqrt(post_var / var);
  Eigen::RowVectorXd inc = Eigen::RowVectorXd::Constant(n, post_mean - hbar) + (shrink - 1.0) * dh;
  Eigen::MatrixXd anoms = ens.colwise() - ens.rowwise().mean();
  Eigen::VectorXd slope = (anoms * dh.transpose()) / ((n - 1) * var);
  ens += slope * inc;
  return true;
}

FilterResult run_filter(const ObservationSet& data, const OdeModel& model,
                        const Eigen::VectorXd& init_mean, const Eigen::MatrixXd& init_cov,
                        const FilterConfig& cfg) {
  const int d = model.dim_x, p = model.dim_theta, q = model.dim_psi;
  const int m = d + p + q;
  if (data.dim() != d) throw ConfigError("filter: observation dimension does not match model");
  if (init_mean.size() != m) throw ConfigError("filter: init_mean must have length dim_x+dim_theta+dim_psi");
  if (init_cov.rows() != m || init_cov.cols() != m)
    throw ConfigError("filter: init_cov must be square over the augmented state");
  if (!init_mean.allFinite() || !init_cov.allFinite())
    throw NonFiniteError("filter: non-finite initialization");
  if (!(cfg.inflation >= 1.0)) throw ConfigError("filter: inflation must be at least 1");
  if (cfg.substeps < 1) throw ConfigError("filter: substeps must be positive");
  const bool ensemble =
      cfg.method == FilterMethod::Enkf || cfg.method == FilterMethod::Eakf;
  if (ensemble && cfg.ensemble_size < 2)
    throw ConfigError("filter: ensemble methods need at least two members");

  std::vector<ObsEvent> events = collect_events(data);
  const int nt = static_cast<int>(events.size());

  Eigen::VectorXd walk_sd = resolve_walk_sd(cfg, init_mean, d, p + q);
  Eigen::VectorXd state_sd = cfg.state_process_sd;
  if (state_sd.size() == 0) state_sd = Eigen::VectorXd::Zero(d);
  if (state_sd.size() != d) throw ConfigError("filter: state_process_sd size mismatch");
  if (cfg.obs_sd.size() != d) throw ConfigError("filter: obs_sd must have one entry per component");
  if ((walk_sd.size() > 0 && walk_sd.minCoeff() < 0.0) ||
      (state_sd.size() > 0 && state_sd.minCoeff() < 0.0))
    throw ConfigError("filter: process noise must be nonnegative");
  for (const ObsEvent& ev : events)
    for (int c : ev.comps)
      if (!(cfg.obs_sd[c] > 0.0))
        throw ConfigError("filter: obs_sd must be positive for observed components");

  Eigen::VectorXd qdiag(m);
  qdiag.head(d) = state_sd.array().square();
  qdiag.tail(p + q) = walk_sd.array().square();

  FilterResult out;
  out.times.resize(nt);
  for (int k = 0; k < nt; ++k) out.times[k] = events[k].t;
  out.filtered_means.resize(m, nt);
  out.filtered_sds.resize(m, nt);

  Rng rng(cfg.seed);
  MemberScratch scratch;

  if (!ensemble) {
    Eigen::VectorXd mean = init_mean;
    Eigen::MatrixXd cov = init_cov;
    Eigen::MatrixXd phi(m, m);
    for (int k = 0; k < nt; ++k) {
      if (k > 0) {
        const double t0 = events[k - 1].t, t1 = events[k].t;
        if (cfg.method == FilterMethod::Ekf) {
          advance_mean_and_transition(model, mean, phi, t0, t1, cfg.substeps, scratch);
          cov = phi * cov * phi.transpose();
        } else {
          // unscented forecast: propagate 2m+1 sigma points, standard weights
          const double alpha = 1e-1, beta = 2.0, kappa = 0.0;
          const double lambda = alpha * alpha * (m + kappa) - m;
          const double wi = 1.0 / (2.0 * (m + lambda));
          const double w0m = lambda / (m + lambda);
          const double w0c = w0m + (1.0 - alpha * alpha + beta);
          Eigen::MatrixXd root = psd_sqrt((m + lambda) * cov);
          Eigen::MatrixXd pts(m, 2 * m + 1);
          pts.col(0) = mean;
          for (int j = 0; j < m; ++j) {
            pts.col(1 + j) = mean + root.col(j);
            pts.col(1 + m + j) = mean - root.col(j);
          }
          for (int j = 0; j < pts.cols(); ++j) {
            Eigen::VectorXd z = pts.col(j);
            advance_member(model, z, t0, t1, cfg.substeps, scratch);
            pts.col(j) = z;
          }
          mean = w0m * pts.col(0);
          for (int j = 1; j < pts.cols(); ++j) mean += wi * pts.col(j);
          cov.setZero();
          for (int j = 0; j < pts.cols(); ++j) {
            Eigen::VectorXd delta = pts.col(j) - mean;
            cov += (j == 0 ? w0c : wi) * delta * delta.transpose();
          }
        }
        cov.diagonal() += qdiag;
        cov = 0.5 * (cov + cov.transpose());
      }
      cov *= cfg.inflation;
      kalman_update(mean, cov, events[k], cfg.obs_sd);
      if (!mean.allFinite() || !cov.allFinite())
        throw NonFiniteError("filter: state became non-finite");
      out.filtered_means.col(k) = mean;
      out.filtered_sds.col(k) = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    }
  } else {
    const int n = cfg.ensemble_size;
    Eigen::MatrixXd ens(m, n);
    {
      Eigen::MatrixXd root = psd_sqrt(init_cov);
      Eigen::VectorXd xi(m);
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < m; ++i) xi[i] = rng.normal();
        ens.col(j) = init_mean + root * xi;
      }
    }
    for (int k = 0; k < nt; ++k) {
      if (k > 0) {
        const double t0 = events[k - 1].t, t1 = events[k].t;
        for (int j = 0; j < n; ++j) {
          Eigen::VectorXd z = ens.col(j);
          advance_member(model, z, t0, t1, cfg.substeps, scratch);
          for (int i = 0; i < m; ++i)
            if (qdiag[i] > 0.0) z[i] += std::sqrt(qdiag[i]) * rng.normal();
          ens.col(j) = z;
        }
      }
      if (cfg.inflation > 1.0) {
        Eigen::VectorXd mean = ens.rowwise().mean();
        ens = (std::sqrt(cfg.inflation) * (ens.colwise() - mean)).colwise() + mean;
      }
      const ObsEvent& ev = events[k];
      if (cfg.method == FilterMethod::Eakf) {
        for (std::size_t i = 0; i < ev.comps.size(); ++i) {
          double r = cfg.obs_sd[ev.comps[i]] * cfg.obs_sd[ev.comps[i]];
          if (!eakf_scalar_update(ens, ev.comps[i], ev.vals[i], r)) ++out.degeneracy_events;
        }
      } else {
        const int o = static_cast<int>(ev.comps.size());
        Eigen::VectorXd mean = ens.rowwise().mean();
        Eigen::MatrixXd anoms = ens.colwise() - mean;
        Eigen::MatrixXd hanoms(o, n);
        Eigen::VectorXd rdiag(o);
        for (int i = 0; i < o; ++i) {
          hanoms.row(i) = anoms.row(ev.comps[i]);
          rdiag[i] = cfg.obs_sd[ev.comps[i]] * cfg.obs_sd[ev.comps[i]];
        }
        bool all_dust = true;
        for (int i = 0; i < o; ++i) {
          double dust = 1e-12 * (1.0 + std::abs(mean[ev.comps[i]]));
          if (hanoms.row(i).squaredNorm() / (n - 1) > dust * dust) all_dust = false;
        }
        if (all_dust) ++out.degeneracy_events;
        Eigen::MatrixXd s = hanoms * hanoms.transpose() / (n - 1);
        s.diagonal() += rdiag;
        Eigen::LLT<Eigen::MatrixXd> llt(s);
        if (llt.info() != Eigen::Success)
          throw FactorizationError(
              "filter: innovation covariance collapsed (not positive definite)");
        Eigen::MatrixXd pht = anoms * hanoms.transpose() / (n - 1);
        Eigen::MatrixXd gain = llt.solve(pht.transpose()).transpose();
        for (int j = 0; j < n; ++j) {
          Eigen::VectorXd innov(o);
          for (int i = 0; i < o; ++i)
            innov[i] = ev.vals[i] + cfg.obs_sd[ev.comps[i]] * rng.normal() - ens(ev.comps[i], j);
          ens.col(j) += gain * innov;
        }
      }
      if (!ens.allFinite()) throw NonFiniteError("filter: ensemble became non-finite");
      Eigen::VectorXd mean = ens.rowwise().mean();
      Eigen::MatrixXd anoms = ens.colwise() - mean;
      out.filtered_means.col(k) = mean;
      out.filtered_sds.col(k) = (anoms.array().square().rowwise().sum() / (n - 1)).sqrt();
    }
  }

  out.theta_path = out.filtered_means.middleRows(d, p);
  out.psi_bar = out.filtered_means.bottomRows(q).rowwise().mean();
  return out;
}

}  // namespace tvmagi
