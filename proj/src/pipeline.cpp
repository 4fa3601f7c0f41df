#include "tvmagi/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tvmagi/errors.hpp"
#include "tvmagi/gp.hpp"
#include "tvmagi/interp.hpp"

namespace tvmagi {

namespace {

template <typename Fn>
auto stage_guard(const char* label, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    const std::string msg = std::string(label) + ": " + e.what();
    if (e.kind() == ErrorKind::Config) throw ConfigError(msg);
    throw FitError(msg);
  }
}

void check_data(const ObservationSet& data, const OdeModel& model) {
  if (data.dim() != model.dim_x)
    throw ConfigError("pipeline: observation set has " + std::to_string(data.dim()) +
                      " components, model has " + std::to_string(model.dim_x));
  long total = 0;
  for (int d = 0; d < data.dim(); ++d) {
    if (data.times[d].size() != data.values[d].size())
      throw ConfigError("pipeline: times/values length mismatch on component " +
                        std::to_string(d));
    for (int i = 1; i < data.times[d].size(); ++i)
      if (!(data.times[d][i] > data.times[d][i - 1]))
        throw ConfigError("pipeline: observation times must increase on component " +
                          std::to_string(d));
    total += data.times[d].size();
  }
  if (total == 0) throw ConfigError("pipeline: no observations on any component");
}

// constant-parameter start by matching f to the GP-conditional derivative
// estimate at the interpolated states (linear least squares in one Gauss-
// Newton step from all-ones); falls back to all-ones if anything misbehaves
void derivative_matching_init(const OdeModel& model, const Eigen::VectorXd& grid,
                              const Eigen::MatrixXd& x_interp, const Eigen::MatrixXd& xdot_hat,
                              Eigen::VectorXd& theta0, Eigen::VectorXd& psi0) {
  const int p = model.dim_theta, q = model.dim_psi, d = model.dim_x;
  const int n = static_cast<int>(grid.size());
  theta0 = Eigen::VectorXd::Ones(p);
  psi0 = Eigen::VectorXd::Ones(q);
  if (p + q == 0) return;
  try {
    Eigen::MatrixXd a(n * d, p + q);
    Eigen::VectorXd b(n * d);
    Eigen::VectorXd uref = Eigen::VectorXd::Ones(p + q);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd xi = x_interp.col(i);
      Eigen::VectorXd fi = eval_f(model, xi, theta0, psi0, grid[i]);
      Jacobians j = eval_jacobians(model, xi, theta0, psi0, grid[i]);
      a.block(i * d, 0, d, p) = j.jtheta;
      a.block(i * d, p, d, q) = j.jpsi;
      b.segment(i * d, d) =
          xdot_hat.col(i) - fi + a.block(i * d, 0, d, p + q) * uref;
    }
    Eigen::VectorXd u = a.colPivHouseholderQr().solve(b);
    if (!u.allFinite()) return;
    for (int k = 0; k < p; ++k) theta0[k] = std::clamp(u[k], -1e6, 1e6);
    for (int k = 0; k < q; ++k) {
      double v = std::clamp(u[p + k], -1e6, 1e6);
      psi0[k] = model.psi_positive[k] ? std::max(v, 1e-2) : v;
    }
  } catch (const Error&) {
    theta0.setOnes();
    psi0.setOnes();
  }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  return h;
}

}  // namespace

Eigen::VectorXd make_grid(const ObservationSet& obs, int level) {
  if (level < 1) throw ConfigError("make_grid: discretization level must be at least 1");
  int densest = -1;
  for (int d = 0; d < obs.dim(); ++d)
    if (densest < 0 || obs.times[d].size() > obs.times[densest].size()) densest = d;
  if (densest < 0 || obs.times[densest].size() == 0)
    throw ConfigError("make_grid: no observations");

  std::vector<double> pts;
  for (int d = 0; d < obs.dim(); ++d)
    for (int i = 0; i < obs.times[d].size(); ++i) pts.push_back(obs.times[d][i]);
  const Eigen::VectorXd& dense = obs.times[densest];
  for (int i = 0; i + 1 < dense.size(); ++i)
    for (int k = 1; k < level; ++k)
      pts.push_back(dense[i] + (dense[i + 1] - dense[i]) * k / level);

  std::sort(pts.begin(), pts.end());
  double span = pts.back() - pts.front();
  double tol = 1e-12 * std::max(1.0, span);
  std::vector<double> uniq;
  for (double t : pts)
    if (uniq.empty() || t - uniq.back() > tol) uniq.push_back(t);
  return Eigen::Map<Eigen::VectorXd>(uniq.data(), static_cast<long>(uniq.size()));
}

Stage1Result stage1_constant_init(const ObservationSet& data, const OdeModel& model,
                                  const TvmagiConfig& cfg) {
  check_data(data, model);
  Stage1Result out;
  out.grid = make_grid(data, cfg.discretization_level);
  const int n = static_cast<int>(out.grid.size());
  const int d = model.dim_x;

  // per-component smoothing fits where there is enough data
  out.x_hyper.assign(d, XHyperFit{});
  std::vector<bool> fitted(d, false);
  for (int c = 0; c < d; ++c) {
    if (data.times[c].size() >= 4) {
      out.x_hyper[c] = fit_x_hyperparams(data.times[c], data.values[c], cfg.nu_x);
      fitted[c] = true;
    }
  }
  double mean_phi1 = 0.0, mean_phi2 = 0.0, mean_sigma = 0.0, mean_level = 0.0;
  int n_fitted = 0;
  for (int c = 0; c < d; ++c) {
    if (!fitted[c]) continue;
    mean_phi1 += out.x_hyper[c].kernel.phi1;
    mean_phi2 += out.x_hyper[c].kernel.phi2;
    mean_sigma += out.x_hyper[c].sigma;
    mean_level += out.x_hyper[c].mean;
    ++n_fitted;
  }
  if (n_fitted == 0)
    throw FitError("stage1: no component has the four observations needed for a smoothing fit");
  mean_phi1 /= n_fitted;
  mean_phi2 /= n_fitted;
  mean_sigma /= n_fitted;
  mean_level /= n_fitted;
  for (int c = 0; c < d; ++c) {
    if (fitted[c]) continue;
    // sparse or unobserved component: borrow the fitted components' scales
    out.x_hyper[c].kernel = KernelConfig{mean_phi1, mean_phi2, cfg.nu_x};
    out.x_hyper[c].sigma = mean_sigma;
    out.x_hyper[c].mean =
        data.times[c].size() > 0 ? data.values[c].mean() : mean_level;
    out.x_hyper[c].success = false;
  }

  // states start at the interpolated observations (constant where unobserved)
  out.x_interp.resize(d, n);
  for (int c = 0; c < d; ++c) {
    if (data.times[c].size() == 0) {
      out.x_interp.row(c).setConstant(out.x_hyper[c].mean);
    } else if (data.times[c].size() == 1) {
      out.x_interp.row(c).setConstant(data.values[c][0]);
    } else {
      LinearInterp li(data.times[c], data.values[c]);
      for (int i = 0; i < n; ++i) out.x_interp(c, i) = li(out.grid[i]);
    }
  }

  out.x_gram.clear();
  for (int c = 0; c < d; ++c)
    out.x_gram.push_back(std::make_shared<GramBundle>(
        build_gram(out.x_hyper[c].kernel, out.grid, cfg.jitter)));

  Eigen::MatrixXd xdot_hat(d, n);
  for (int c = 0; c < d; ++c) {
    GpPriorSpec prior{out.x_hyper[c].kernel, out.x_hyper[c].mean, 0.0};
    xdot_hat.row(c) =
        conditional_deriv_mean(out.x_interp.row(c).transpose(), prior, *out.x_gram[c])
            .transpose();
  }
  Eigen::VectorXd theta0, psi0;
  derivative_matching_init(model, out.grid, out.x_interp, xdot_hat, theta0, psi0);

  PosteriorSpec sp;
  sp.model = model;
  sp.grid = out.grid;
  sp.obs = data;
  sp.x_gram = out.x_gram;
  sp.x_mean.resize(d, n);
  for (int c = 0; c < d; ++c) sp.x_mean.row(c).setConstant(out.x_hyper[c].mean);
  sp.theta_mode = ThetaMode::Constant;
  sp.theta_prior = false;
  sp.sigma_floor = cfg.sigma_floor;
  auto post = std::make_shared<Posterior>(sp);

  InferenceState init;
  init.x = out.x_interp;
  init.theta = theta0;
  init.psi = psi0;
  init.sigma.resize(d);
  for (int c = 0; c < d; ++c) init.sigma[c] = std::max(out.x_hyper[c].sigma, 1e-4);

  AdamResult res = adam_minimize(posterior_objective(post), post->pack(init), cfg.adam_stage1);
  InferenceState opt = post->unpack(res.x);
  out.mu_theta_hat = opt.theta.col(0);
  out.psi0 = opt.psi;
  out.x0 = opt.x;
  out.sigma0 = opt.sigma;
  out.objective = res.value;
  out.iters = res.iters;
  return out;
}

Stage2Result stage2_pointwise(const Stage1Result& s1, const ObservationSet& data,
                              const OdeModel& model, const TvmagiConfig& cfg) {
  const int n = static_cast<int>(s1.grid.size());
  PosteriorSpec sp;
  sp.model = model;
  sp.grid = s1.grid;
  sp.obs = data;
  sp.x_gram = s1.x_gram;
  sp.x_mean.resize(model.dim_x, n);
  for (int c = 0; c < model.dim_x; ++c) sp.x_mean.row(c).setConstant(s1.x_hyper[c].mean);
  sp.theta_mode = ThetaMode::Grid;
  sp.theta_prior = false;
  sp.sigma_floor = cfg.sigma_floor;
  auto post = std::make_shared<Posterior>(sp);

  InferenceState init;
  init.x = s1.x0;
  init.theta = s1.mu_theta_hat * Eigen::RowVectorXd::Ones(n);
  init.psi = s1.psi0;
  init.sigma = s1.sigma0;

  AdamResult res = adam_minimize(posterior_objective(post), post->pack(init), cfg.adam_stage2);
  InferenceState opt = post->unpack(res.x);
  Stage2Result out;
  out.theta_tilde = opt.theta;
  out.x_tilde = opt.x;
  out.psi_tilde = opt.psi;
  out.sigma_tilde = opt.sigma;
  out.objective = res.value;
  out.iters = res.iters;
  return out;
}

Stage3Result stage3_theta_hyper(const Stage2Result& s2, const Stage1Result& s1,
                                const TvmagiConfig& cfg) {
  Phi2Bounds bounds = cfg.theta_phi2_bounds;
  if (!(bounds.hi > 0.0)) bounds = default_phi2_bounds(s1.grid);
  Stage3Result out;
  for (int p = 0; p < s2.theta_tilde.rows(); ++p)
    out.theta_hyper.push_back(fit_theta_hyperparams(
        s2.theta_tilde.row(p).transpose(), s1.grid, s1.mu_theta_hat[p], bounds, cfg.nu_theta));
  return out;
}

Stage4Result stage4_map(const Stage1Result& s1, const Stage2Result& s2, const Stage3Result& s3,
                        const ObservationSet& data, const OdeModel& model,
                        const TvmagiConfig& cfg) {
  const int n = static_cast<int>(s1.grid.size());
  PosteriorSpec sp;
  sp.model = model;
  sp.grid = s1.grid;
  sp.obs = data;
  sp.x_gram = s1.x_gram;
  sp.x_mean.resize(model.dim_x, n);
  for (int c = 0; c < model.dim_x; ++c) sp.x_mean.row(c).setConstant(s1.x_hyper[c].mean);
  sp.theta_mode = ThetaMode::Grid;
  sp.theta_prior = true;
  sp.sigma_floor = cfg.sigma_floor;
  for (int p = 0; p < model.dim_theta; ++p)
    sp.theta_gram.push_back(std::make_shared<GramBundle>(
        build_gram(s3.theta_hyper[p].kernel, s1.grid, cfg.jitter)));
  sp.theta_mean.resize(model.dim_theta, n);
  for (int p = 0; p < model.dim_theta; ++p) sp.theta_mean.row(p).setConstant(s1.mu_theta_hat[p]);
  auto post = std::make_shared<Posterior>(sp);

  InferenceState init;
  init.x = s2.x_tilde;
  init.theta = s2.theta_tilde;
  init.psi = s2.psi_tilde;
  init.sigma = s2.sigma_tilde;
  Eigen::VectorXd v0 = post->pack(init);

  Stage4Result out;
  out.posterior = post;
  out.objective_init = post->value(v0);

  Objective obj = posterior_objective(post);
  AdamResult best = adam_minimize(obj, v0, cfg.adam_stage4);
  out.iters = best.iters;
  out.best_start = 0;
  InferenceState alt = init;
  alt.x = s1.x_interp;
  AdamResult other = adam_minimize(obj, post->pack(alt), cfg.adam_stage4);
  out.iters += other.iters;
  if (other.value < best.value) {
    best = other;
    out.best_start = 1;
  }

  // learning-rate annealing tail; best-seen keeps this monotone
  AdamConfig polish = cfg.adam_stage4;
  polish.max_iters = std::max(1, cfg.adam_stage4.max_iters / 2);
  for (int k = 0; k < cfg.stage4_polish; ++k) {
    polish.lr *= 0.1;
    AdamResult r = adam_minimize(obj, best.x, polish);
    out.iters += r.iters;
    if (r.value <= best.value) {
      best.value = r.value;
      best.x = r.x;
    }
  }

  out.map_state = post->unpack(best.x);
  out.objective = best.value;
  return out;
}

Stage5Result stage5_intervals(const Stage4Result& s4, const TvmagiConfig& cfg) {
  HmcConfig hmc = cfg.hmc;
  hmc.seed = mix_seed(cfg.hmc.seed, cfg.seed);
  Stage5Result out;
  out.samples = hmc_sample(posterior_objective(s4.posterior),
                           s4.posterior->pack(s4.map_state), hmc);
  out.intervals = summarize_intervals(out.samples, *s4.posterior);
  return out;
}

FitResult run_tvmagi(const ObservationSet& data, const OdeModel& model,
                     const TvmagiConfig& cfg) {
  FitResult out;
  Stage1Result s1 =
      stage_guard("stage1", [&] { return stage1_constant_init(data, model, cfg); });
  Stage2Result s2 = stage_guard("stage2", [&] { return stage2_pointwise(s1, data, model, cfg); });
  Stage3Result s3 = stage_guard("stage3", [&] { return stage3_theta_hyper(s2, s1, cfg); });
  Stage4Result s4 =
      stage_guard("stage4", [&] { return stage4_map(s1, s2, s3, data, model, cfg); });
  if (!cfg.skip_hmc) {
    Stage5Result s5 = stage_guard("stage5", [&] { return stage5_intervals(s4, cfg); });
    out.posterior = std::move(s5.samples);
    out.intervals = std::move(s5.intervals);
  }
  out.grid = s1.grid;
  out.map_state = s4.map_state;
  out.theta_map = s4.map_state.theta;
  out.psi_map = s4.map_state.psi;
  out.sigma_map = s4.map_state.sigma;
  out.diagnostics.map_objective_init = s4.objective_init;
  out.diagnostics.map_objective = s4.objective;
  out.diagnostics.map_iters = s4.iters;
  out.diagnostics.map_best_start = s4.best_start;
  out.posterior_def = s4.posterior;
  out.diagnostics.stage1 = std::move(s1);
  out.diagnostics.stage2 = std::move(s2);
  out.diagnostics.stage3 = std::move(s3);
  return out;
}

}  // namespace tvmagi
