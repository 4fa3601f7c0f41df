#include "tvmagi/simeval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "tvmagi/errors.hpp"
#include "tvmagi/rk4.hpp"
#include "tvmagi/rng.hpp"

namespace tvmagi {

namespace {

Eigen::VectorXd union_times(const std::vector<Eigen::VectorXd>& schedules) {
  std::vector<double> all;
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const Eigen::VectorXd& s : schedules)
    for (int i = 0; i < s.size(); ++i) {
      all.push_back(s[i]);
      lo = any ? std::min(lo, s[i]) : s[i];
      hi = any ? std::max(hi, s[i]) : s[i];
      any = true;
    }
  if (!any) throw ConfigError("simulate: no observation times scheduled");
  std::sort(all.begin(), all.end());
  const double tol = 1e-12 * std::max(1.0, hi - lo);
  std::vector<double> merged;
  for (double t : all)
    if (merged.empty() || t - merged.back() > tol) merged.push_back(t);
  return Eigen::Map<Eigen::VectorXd>(merged.data(), static_cast<int>(merged.size()));
}

int locate_time(const Eigen::VectorXd& times, double t) {
  const double span = times[times.size() - 1] - times[0];
  const double tol = 1e-9 * std::max(1.0, span);
  auto it = std::lower_bound(times.data(), times.data() + times.size(), t - tol);
  int idx = static_cast<int>(it - times.data());
  if (idx >= times.size() || std::abs(times[idx] - t) > tol)
    throw ConfigError("evaluation time not on the integration grid");
  return idx;
}

}  // namespace

SimulatedData simulate_dataset(const OdeModel& model, const TrueParamSpec& truth,
                               std::uint64_t seed, int substeps) {
  const int d = model.dim_x;
  if (static_cast<int>(truth.obs_times.size()) != d)
    throw ConfigError("simulate: one observation schedule per component required");
  if (truth.x0.size() != d) throw ConfigError("simulate: x0 size mismatch");
  if (static_cast<int>(truth.theta_funcs.size()) != model.dim_theta)
    throw ConfigError("simulate: theta_funcs size mismatch");
  if (truth.psi.size() != model.dim_psi) throw ConfigError("simulate: psi size mismatch");
  if (truth.noise_sd.size() != d) throw ConfigError("simulate: noise_sd size mismatch");
  if (truth.noise_sd.size() > 0 && truth.noise_sd.minCoeff() < 0.0)
    throw ConfigError("simulate: noise_sd must be nonnegative");
  for (const Eigen::VectorXd& s : truth.obs_times)
    for (int i = 1; i < s.size(); ++i)
      if (!(s[i] > s[i - 1])) throw ConfigError("simulate: schedule times must increase");
  if (substeps < 1) throw ConfigError("simulate: substeps must be positive");

  SimulatedData out;
  out.times = union_times(truth.obs_times);
  ThetaPath theta_at = [&truth](double t, Eigen::VectorXd& th) {
    for (std::size_t j = 0; j < truth.theta_funcs.size(); ++j) th[j] = truth.theta_funcs[j](t);
  };
  OdeSolution sol = rk4_solve(model, truth.x0, theta_at, truth.psi, out.times, substeps);
  out.truth = sol.states;

  Rng rng(seed);
  out.obs.times = truth.obs_times;
  out.obs.values.resize(d);
  for (int c = 0; c < d; ++c) {
    const Eigen::VectorXd& sched = truth.obs_times[c];
    Eigen::VectorXd y(sched.size());
    for (int i = 0; i < sched.size(); ++i) {
      double x = out.truth(c, locate_time(out.times, sched[i]));
      double eps = rng.normal();
      y[i] = truth.noise_sd[c] == 0.0 ? x : x * std::exp(truth.noise_sd[c] * eps);
    }
    out.obs.values[c] = y;
  }
  return out;
}

ObservationSet inference_observations(const CaseStudy& cs, const ObservationSet& sim_obs) {
  if (sim_obs.dim() != cs.sim_model.dim_x)
    throw ConfigError("inference_observations: observation set does not match the sim model");
  std::vector<int> map = cs.obs_comp_in_sim;
  if (map.empty())
    for (int c = 0; c < cs.inference_model.dim_x; ++c) map.push_back(c);
  if (static_cast<int>(map.size()) != cs.inference_model.dim_x)
    throw ConfigError("inference_observations: component map size mismatch");
  ObservationSet out;
  for (int s : map) {
    if (s < 0 || s >= sim_obs.dim())
      throw ConfigError("inference_observations: component map out of range");
    out.times.push_back(sim_obs.times[s]);
    Eigen::VectorXd v = sim_obs.values[s];
    if (cs.log_obs) {
      for (int i = 0; i < v.size(); ++i) {
        if (!(v[i] > 0.0))
          throw DomainError("inference_observations: nonpositive value cannot be logged");
        v[i] = std::log(v[i]);
      }
    }
    out.values.push_back(std::move(v));
  }
  return out;
}

Eigen::VectorXd param_rmse(const Eigen::MatrixXd& theta_est, const Eigen::VectorXd& grid,
                           const std::vector<std::function<double(double)>>& theta_true) {
  if (theta_est.cols() != grid.size())
    throw ConfigError("param_rmse: estimate and grid have different lengths");
  if (static_cast<int>(theta_true.size()) != theta_est.rows())
    throw ConfigError("param_rmse: one truth function per parameter required");
  if (grid.size() == 0) throw ConfigError("param_rmse: empty grid");
  Eigen::VectorXd out(theta_est.rows());
  for (int j = 0; j < theta_est.rows(); ++j) {
    double acc = 0.0;
    for (int i = 0; i < grid.size(); ++i) {
      double diff = theta_est(j, i) - theta_true[j](grid[i]);
      acc += diff * diff;
    }
    out[j] = std::sqrt(acc / grid.size());
  }
  return out;
}

Eigen::VectorXd param_rmse(const Eigen::VectorXd& psi_est, const Eigen::VectorXd& psi_true) {
  if (psi_est.size() != psi_true.size())
    throw ConfigError("param_rmse: estimate and truth have different lengths");
  return (psi_est - psi_true).cwiseAbs();
}

double rms(const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("rms: empty input");
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return std::sqrt(acc / values.size());
}

TrajectoryEval trajectory_rmse(const OdeModel& model, const Eigen::VectorXd& x0,
                               const Eigen::MatrixXd& theta_grid, const Eigen::VectorXd& grid,
                               const Eigen::VectorXd& psi,
                               const std::vector<Eigen::VectorXd>& eval_times,
                               const std::vector<Eigen::VectorXd>& truth_values, bool relative,
                               int substeps) {
  const int d = model.dim_x;
  if (static_cast<int>(eval_times.size()) != d ||
      static_cast<int>(truth_values.size()) != d)
    throw ConfigError("trajectory_rmse: one evaluation series per component required");
  for (int c = 0; c < d; ++c)
    if (eval_times[c].size() != truth_values[c].size())
      throw ConfigError("trajectory_rmse: times and truth values must align");
  if (theta_grid.rows() != model.dim_theta || theta_grid.cols() != grid.size())
    throw ConfigError("trajectory_rmse: theta grid shape mismatch");
  if (!x0.allFinite() || !theta_grid.allFinite() || !psi.allFinite())
    throw ConfigError("trajectory_rmse: estimate must be finite");

  TrajectoryEval out;
  out.rmse = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::quiet_NaN());

  Eigen::VectorXd times = union_times(eval_times);
  if (grid.size() > 0 && grid[0] < times[0] - 1e-12) {
    Eigen::VectorXd ext(times.size() + 1);
    ext[0] = grid[0];
    ext.tail(times.size()) = times;
    times = ext;
  }
  OdeSolution sol;
  try {
    sol = rk4_solve(model, x0, theta_path_linear(theta_grid, grid), psi, times, substeps);
  } catch (const Error&) {
    out.integrator_failed = true;
    out.rmse.setConstant(std::numeric_limits<double>::infinity());
    return out;
  }
  for (int c = 0; c < d; ++c) {
    const Eigen::VectorXd& sched = eval_times[c];
    if (sched.size() == 0) continue;
    double acc = 0.0;
    for (int i = 0; i < sched.size(); ++i) {
      double est = sol.states(c, locate_time(times, sched[i]));
      double diff = est - truth_values[c][i];
      if (relative) {
        if (truth_values[c][i] == 0.0)
          throw ConfigError("trajectory_rmse: relative metric needs nonzero truth");
        diff /= truth_values[c][i];
      }
      acc += diff * diff;
    }
    out.rmse[c] = std::sqrt(acc / sched.size());
  }
  for (int c = 0; c < d; ++c) {
    if (eval_times[c].size() > 0 && !std::isfinite(out.rmse[c])) {
      out.rmse[c] = std::numeric_limits<double>::infinity();
      out.integrator_failed = true;
    }
  }
  return out;
}

CoverageSummary coverage(const std::vector<Eigen::VectorXd>& lower,
                         const std::vector<Eigen::VectorXd>& upper,
                         const std::vector<Eigen::VectorXd>& truth) {
  const std::size_t reps = lower.size();
  if (upper.size() != reps || truth.size() != reps)
    throw ConfigError("coverage: one lower/upper/truth set per replication required");
  if (reps == 0) throw ConfigError("coverage: no replications");
  CoverageSummary out;
  out.per_replication.resize(static_cast<int>(reps));
  long covered = 0, total = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    if (lower[r].size() != upper[r].size() || lower[r].size() != truth[r].size())
      throw ConfigError("coverage: interval and truth lengths differ");
    if (lower[r].size() == 0) throw ConfigError("coverage: empty replication");
    long rep_cov = 0;
    for (int i = 0; i < lower[r].size(); ++i) {
      if (!(lower[r][i] <= upper[r][i]))
        throw ConfigError("coverage: interval bounds out of order");
      if (lower[r][i] <= truth[r][i] && truth[r][i] <= upper[r][i]) ++rep_cov;
    }
    covered += rep_cov;
    total += lower[r].size();
    out.per_replication[static_cast<int>(r)] =
        static_cast<double>(rep_cov) / lower[r].size();
  }
  out.pooled = static_cast<double>(covered) / total;
  out.mean_of_replications = out.per_replication.mean();
  return out;
}

}  // namespace tvmagi
