#include "tvmagi/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tvmagi/errors.hpp"
#include "tvmagi/rng.hpp"

namespace tvmagi {

namespace {

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

// linear-interpolation percentile of an ascending column, p in [0,1]
double sorted_percentile(const Eigen::VectorXd& col, double p) {
  const int m = static_cast<int>(col.size());
  if (m == 1) return col[0];
  double h = p * (m - 1);
  int lo = static_cast<int>(std::floor(h));
  if (lo >= m - 1) return col[m - 1];
  double frac = h - lo;
  return col[lo] + frac * (col[lo + 1] - col[lo]);
}

// summaries go through a sorted copy so that permuting the draws leaves
// every output bit-identical (the mean is summed in sorted order)
void summarize_columns(const Eigen::MatrixXd& draws, Eigen::VectorXd& mean,
                       Eigen::VectorXd& lower, Eigen::VectorXd& upper) {
  const int dim = static_cast<int>(draws.cols());
  mean.resize(dim);
  lower.resize(dim);
  upper.resize(dim);
  Eigen::VectorXd col;
  for (int j = 0; j < dim; ++j) {
    col = draws.col(j);
    std::sort(col.data(), col.data() + col.size());
    mean[j] = col.sum() / col.size();
    lower[j] = sorted_percentile(col, 0.025);
    upper[j] = sorted_percentile(col, 0.975);
  }
}

}  // namespace

double leapfrog(const Objective& potential, Eigen::VectorXd& q, Eigen::VectorXd& p,
                double eps, int steps) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd g(q.size());
  double u = potential(q, g);
  if (!std::isfinite(u) || !all_finite(g)) return nan;
  p.noalias() -= (0.5 * eps) * g;
  for (int l = 0; l < steps; ++l) {
    q.noalias() += eps * p;
    u = potential(q, g);
    if (!std::isfinite(u) || !all_finite(g)) return nan;
    p.noalias() -= (l + 1 < steps ? eps : 0.5 * eps) * g;
  }
  return u;
}

PosteriorSamples hmc_sample(const Objective& potential, const Eigen::VectorXd& init,
                            const HmcConfig& cfg) {
  if (!(cfg.step_size > 0.0)) throw ConfigError("hmc: step_size must be positive");
  if (cfg.leapfrog_steps < 1) throw ConfigError("hmc: leapfrog_steps must be at least 1");
  if (cfg.n_samples < 1) throw ConfigError("hmc: n_samples must be at least 1");
  if (!(cfg.burn_in_ratio >= 0.0 && cfg.burn_in_ratio < 1.0))
    throw ConfigError("hmc: burn_in_ratio must lie in [0,1)");
  if (!all_finite(init)) throw NonFiniteError("hmc: init is not finite");

  const int dim = static_cast<int>(init.size());
  const int burn = static_cast<int>(cfg.burn_in_ratio * cfg.n_samples);
  const int kept = cfg.n_samples - burn;

  Rng rng(cfg.seed);
  Eigen::VectorXd q = init, q_prop(dim), p(dim), g(dim);
  double u_cur = potential(q, g);
  if (!std::isfinite(u_cur)) throw NonFiniteError("hmc: potential not finite at init");

  PosteriorSamples out;
  out.draws.resize(kept, dim);
  int accepted = 0;
  int divergent = 0;
  for (int s = 0; s < cfg.n_samples; ++s) {
    for (int j = 0; j < dim; ++j) p[j] = rng.normal();
    const double kin_cur = 0.5 * p.squaredNorm();
    q_prop = q;
    const double u_prop = leapfrog(potential, q_prop, p, cfg.step_size, cfg.leapfrog_steps);
    bool accept = false;
    if (std::isfinite(u_prop)) {
      const double log_alpha = u_cur - u_prop + kin_cur - 0.5 * p.squaredNorm();
      accept = log_alpha >= 0.0 || rng.uniform_pos() < std::exp(log_alpha);
    } else {
      ++divergent;
    }
    if (accept) {
      q = q_prop;
      u_cur = u_prop;
      ++accepted;
    }
    if (s >= burn) out.draws.row(s - burn) = q;
  }
  if (divergent > 0.99 * cfg.n_samples)
    throw NonFiniteError("hmc: more than 99% of proposals diverged");

  out.accept_rate = static_cast<double>(accepted) / cfg.n_samples;
  summarize_columns(out.draws, out.mean, out.lower95, out.upper95);
  return out;
}

std::vector<IntervalRow> summarize_intervals(const PosteriorSamples& samples,
                                             const Posterior& post) {
  if (samples.draws.cols() != post.dim())
    throw ConfigError("summarize_intervals: draw dimension does not match the posterior layout");
  if (samples.draws.rows() < 100)
    throw ConfigError("summarize_intervals: needs at least 100 retained draws");

  const PosteriorSpec& sp = post.spec();
  const OdeModel& model = sp.model;
  const int n = post.n_grid();
  const int tc = post.theta_cols();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // transform psi/sigma columns from raw (log) to natural scale; quantiles
  // commute with the monotone map, means are taken on the natural scale
  Eigen::MatrixXd draws = samples.draws;
  for (int qi = 0; qi < model.dim_psi; ++qi) {
    if (model.psi_positive[qi]) {
      const int c = post.psi_offset() + qi;
      draws.col(c) = draws.col(c).array().exp();
    }
  }
  for (int d = 0; d < model.dim_x; ++d) {
    const int c = post.sigma_offset() + d;
    const double floor2 = sp.sigma_floor * sp.sigma_floor;
    draws.col(c) = ((2.0 * draws.col(c).array()).exp() + floor2).sqrt();
  }

  Eigen::VectorXd mean, lower, upper;
  summarize_columns(draws, mean, lower, upper);

  std::vector<IntervalRow> rows;
  rows.reserve(post.dim());
  auto push = [&](const std::string& name, double t, int col) {
    rows.push_back({name, t, mean[col], lower[col], upper[col]});
  };
  for (int d = 0; d < model.dim_x; ++d)
    for (int i = 0; i < n; ++i) push("x:" + model.x_names[d], sp.grid[i], post.x_offset() + d * n + i);
  for (int pi = 0; pi < model.dim_theta; ++pi)
    for (int i = 0; i < tc; ++i)
      push("theta:" + model.theta_names[pi], tc == 1 ? nan : sp.grid[i],
           post.theta_offset() + pi * tc + i);
  for (int qi = 0; qi < model.dim_psi; ++qi)
    push("psi:" + model.psi_names[qi], nan, post.psi_offset() + qi);
  for (int d = 0; d < model.dim_x; ++d)
    push("sigma:" + model.x_names[d], nan, post.sigma_offset() + d);
  return rows;
}

}  // namespace tvmagi
