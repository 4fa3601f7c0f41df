#include "tvmagi/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <thread>
#include <vector>

#include "tvmagi/errors.hpp"
#include "tvmagi/filters.hpp"
#include "tvmagi/pipeline.hpp"
#include "tvmagi/rk4.hpp"

namespace tvmagi {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int find_time(const Eigen::VectorXd& times, double t) {
  const double tol = 1e-9 * std::max(1.0, std::abs(t));
  for (int i = 0; i < times.size(); ++i)
    if (std::abs(times[i] - t) <= tol) return i;
  return -1;
}

int name_index(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

const std::string* kv_find(const KvPairs& pairs, const std::string& key) {
  for (const auto& [k, v] : pairs)
    if (k == key) return &v;
  return nullptr;
}

int sim_component(const CaseStudy& cs, int inference_comp) {
  return cs.obs_comp_in_sim.empty() ? inference_comp : cs.obs_comp_in_sim[inference_comp];
}

void unpack_intervals(const std::vector<IntervalRow>& rows, const OdeModel& model,
                      MethodRun& out) {
  const int n = static_cast<int>(out.grid.size());
  out.theta_lower.setConstant(model.dim_theta, n, kNan);
  out.theta_upper.setConstant(model.dim_theta, n, kNan);
  out.psi_lower.setConstant(model.dim_psi, kNan);
  out.psi_upper.setConstant(model.dim_psi, kNan);
  out.sigma_lower.setConstant(model.dim_x, kNan);
  out.sigma_upper.setConstant(model.dim_x, kNan);
  for (const IntervalRow& row : rows) {
    std::size_t colon = row.quantity.find(':');
    if (colon == std::string::npos) continue;
    std::string kind = row.quantity.substr(0, colon);
    std::string name = row.quantity.substr(colon + 1);
    if (kind == "theta") {
      int j = name_index(model.theta_names, name);
      int i = find_time(out.grid, row.time);
      if (j < 0 || i < 0) throw FitError("intervals: unknown quantity " + row.quantity);
      out.theta_lower(j, i) = row.lower95;
      out.theta_upper(j, i) = row.upper95;
    } else if (kind == "psi") {
      int j = name_index(model.psi_names, name);
      if (j < 0) throw FitError("intervals: unknown quantity " + row.quantity);
      out.psi_lower[j] = row.lower95;
      out.psi_upper[j] = row.upper95;
    } else if (kind == "sigma") {
      int j = name_index(model.x_names, name);
      if (j < 0) throw FitError("intervals: unknown quantity " + row.quantity);
      out.sigma_lower[j] = row.lower95;
      out.sigma_upper[j] = row.upper95;
    }
  }
  if (out.theta_lower.hasNaN() || out.psi_lower.hasNaN() || out.sigma_lower.hasNaN())
    throw FitError("intervals: summary is missing quantities");
}

// integrates the fitted system to report a trajectory on the original scale;
// a diverging reconstruction is reported as +inf rather than a failed run
void reconstruct_trajectory(const OdeModel& model, const Eigen::VectorXd& x0,
                            const Eigen::MatrixXd& theta_grid, const Eigen::VectorXd& grid,
                            const Eigen::VectorXd& psi, int substeps, MethodRun& out) {
  out.traj_times = grid;
  try {
    OdeSolution sol = rk4_solve(model, x0, theta_path_linear(theta_grid, grid), psi, grid,
                                substeps);
    if (model.log_scale)
      out.trajectory = sol.states.array().exp().matrix();
    else
      out.trajectory = sol.states;
  } catch (const Error&) {
    out.trajectory.setConstant(model.dim_x, grid.size(),
                               std::numeric_limits<double>::infinity());
    out.diagnostics.emplace_back("trajectory_failed", "1");
  }
}

Eigen::VectorXd derive_obs_sd(const RunConfig& cfg, const CaseStudy& cs,
                              const ObservationSet& obs) {
  const int d = cs.inference_model.dim_x;
  Eigen::VectorXd sd(d);
  for (int c = 0; c < d; ++c) {
    int s = sim_component(cs, c);
    double level = cfg.noise >= 0.0 ? cfg.noise : cs.sim_truth.noise_sd[s];
    double v = level;
    if (!cs.log_obs) v = level * (obs.values[c].size() ? obs.values[c].cwiseAbs().mean() : 0.0);
    sd[c] = std::max(v, 1e-6);
  }
  return sd;
}

}  // namespace

MethodRun run_method(const RunConfig& cfg, const CaseStudy& cs, const ObservationSet& sim_obs,
                     const std::string& method) {
  auto t0 = std::chrono::steady_clock::now();
  ObservationSet obs = inference_observations(cs, sim_obs);
  const OdeModel& model = cs.inference_model;
  MethodRun out;
  out.diagnostics.emplace_back("method", method);

  if (method == "tvmagi") {
    FitResult fit = run_tvmagi(obs, model, cfg.tvmagi);
    out.grid = fit.grid;
    out.theta = fit.theta_map;
    out.psi = fit.psi_map;
    out.sigma = fit.sigma_map;
    if (!fit.intervals.empty()) unpack_intervals(fit.intervals, model, out);
    reconstruct_trajectory(model, fit.map_state.x.col(0), fit.theta_map, fit.grid, fit.psi_map,
                           cfg.rk_substeps, out);
    out.diagnostics.emplace_back("map_objective", format_double(fit.diagnostics.map_objective));
    out.diagnostics.emplace_back("map_iters", std::to_string(fit.diagnostics.map_iters));
    out.diagnostics.emplace_back("map_best_start",
                                 std::to_string(fit.diagnostics.map_best_start));
    if (fit.posterior.draws.size() > 0)
      out.diagnostics.emplace_back("hmc_accept_rate", format_double(fit.posterior.accept_rate));
  } else if (method == "rk4") {
    Stage1Result s1 = stage1_constant_init(obs, model, cfg.tvmagi);
    Eigen::MatrixXd theta_init = s1.mu_theta_hat.replicate(1, s1.grid.size());
    RkLsResult fit = rk_least_squares(model, obs, s1.grid, s1.x_interp.col(0), theta_init,
                                      s1.psi0, cfg.rk_opt, cfg.rk_substeps);
    out.grid = s1.grid;
    out.theta = fit.theta;
    out.psi = fit.psi;
    reconstruct_trajectory(model, fit.x0, fit.theta, s1.grid, fit.psi, cfg.rk_substeps, out);
    out.diagnostics.emplace_back("objective", format_double(fit.objective));
    out.diagnostics.emplace_back("iters", std::to_string(fit.iters));
    if (fit.aborted_nonfinite) out.diagnostics.emplace_back("aborted_nonfinite", "1");
  } else if (method == "ekf" || method == "ukf" || method == "enkf" || method == "eakf") {
    FilterConfig fc = cfg.filter;
    fc.method = parse_filter_method(method);
    if (fc.obs_sd.size() == 0) fc.obs_sd = derive_obs_sd(cfg, cs, obs);
    Stage1Result s1 = stage1_constant_init(obs, model, cfg.tvmagi);
    const int d = model.dim_x, p = model.dim_theta, q = model.dim_psi;
    Eigen::VectorXd init_mean(d + p + q);
    init_mean.head(d) = s1.x_interp.col(0);
    init_mean.segment(d, p) = s1.mu_theta_hat;
    init_mean.tail(q) = s1.psi0;
    Eigen::MatrixXd init_cov = Eigen::MatrixXd::Zero(d + p + q, d + p + q);
    for (int i = 0; i < init_mean.size(); ++i) {
      double sd = 0.1 * std::abs(init_mean[i]) + 1e-3;
      init_cov(i, i) = sd * sd;
    }
    FilterResult fr = run_filter(obs, model, init_mean, init_cov, fc);
    out.grid = fr.times;
    out.theta = fr.theta_path;
    Eigen::MatrixXd theta_sd = fr.filtered_sds.middleRows(d, p);
    out.theta_lower = out.theta - 1.96 * theta_sd;
    out.theta_upper = out.theta + 1.96 * theta_sd;
    out.psi = fr.psi_bar;
    out.traj_times = fr.times;
    if (model.log_scale)
      out.trajectory = fr.filtered_means.topRows(d).array().exp().matrix();
    else
      out.trajectory = fr.filtered_means.topRows(d);
    for (int j = 0; j < q; ++j)
      out.diagnostics.emplace_back("psi_bar." + model.psi_names[j], format_double(fr.psi_bar[j]));
    out.diagnostics.emplace_back("degeneracy_events", std::to_string(fr.degeneracy_events));
  } else {
    throw ConfigError("unknown method '" + method +
                      "' (expected tvmagi | rk4 | ekf | ukf | enkf | eakf)");
  }

  out.wall_clock_sec = seconds_since(t0);
  return out;
}

KvPairs evaluate_metrics(const CaseStudy& cs, const SimulatedData& data, const MethodRun& run) {
  const OdeModel& model = cs.inference_model;
  KvPairs metrics;
  if (const std::string* m = kv_find(run.diagnostics, "method"))
    metrics.emplace_back("method", *m);

  Eigen::VectorXd theta_err = param_rmse(run.theta, run.grid, cs.inference_truth.theta_funcs);
  for (int j = 0; j < theta_err.size(); ++j)
    metrics.emplace_back("theta_rmse." + model.theta_names[j], format_double(theta_err[j]));

  if (model.dim_psi > 0) {
    Eigen::VectorXd psi_err = param_rmse(run.psi, cs.inference_truth.psi);
    for (int j = 0; j < psi_err.size(); ++j)
      metrics.emplace_back("psi_err." + model.psi_names[j], format_double(psi_err[j]));
  }

  for (int c = 0; c < model.dim_x; ++c) {
    int s = sim_component(cs, c);
    const Eigen::VectorXd& sched = data.obs.times[s];
    if (sched.size() == 0) {
      metrics.emplace_back("traj_rmse." + model.x_names[c], "nan");
      continue;
    }
    double acc = 0.0;
    for (int i = 0; i < sched.size(); ++i) {
      int iu = find_time(data.times, sched[i]);
      int it = find_time(run.traj_times, sched[i]);
      if (iu < 0 || it < 0)
        throw ConfigError("evaluate: observed time " + format_double(sched[i]) +
                          " missing from the trajectory");
      double truth = data.truth(s, iu);
      double err = run.trajectory(c, it) - truth;
      if (cs.relative_traj_metric) {
        if (truth == 0.0) throw ConfigError("evaluate: relative error against zero truth");
        err /= truth;
      }
      acc += err * err;
    }
    metrics.emplace_back("traj_rmse." + model.x_names[c],
                         format_double(std::sqrt(acc / sched.size())));
  }

  if (run.theta_lower.size() > 0) {
    for (int j = 0; j < model.dim_theta; ++j) {
      int covered = 0;
      for (int i = 0; i < run.grid.size(); ++i) {
        double truth = cs.inference_truth.theta_funcs[j](run.grid[i]);
        if (run.theta_lower(j, i) <= truth && truth <= run.theta_upper(j, i)) ++covered;
      }
      metrics.emplace_back("coverage_theta." + model.theta_names[j],
                           format_double(static_cast<double>(covered) / run.grid.size()));
    }
  }
  if (run.psi_lower.size() > 0) {
    for (int j = 0; j < model.dim_psi; ++j) {
      double truth = cs.inference_truth.psi[j];
      bool in = run.psi_lower[j] <= truth && truth <= run.psi_upper[j];
      metrics.emplace_back("coverage_psi." + model.psi_names[j], in ? "1" : "0");
    }
  }

  if (cs.hiv) {
    double acc = 0.0;
    for (int i = 0; i < run.grid.size(); ++i) {
      double tc = cs.hiv->t_cells(run.grid[i]);
      double ahat = run.theta(0, i) + run.theta(1, i) * tc;
      double diff = ahat - cs.hiv->a_true(run.grid[i]);
      acc += diff * diff;
    }
    metrics.emplace_back("a_rmse", format_double(std::sqrt(acc / run.grid.size())));
  }
  return metrics;
}

namespace {

void check_header(const CsvTable& t, const std::string& path,
                  const std::vector<std::string>& names) {
  bool ok = t.header.size() == names.size() + 1 && t.header[0] == "t";
  for (std::size_t c = 0; ok && c < names.size(); ++c) ok = t.header[c + 1] == names[c];
  if (!ok) throw ConfigError(path + ": header does not match the model components");
}

CsvTable series_table(const std::vector<std::string>& names, const Eigen::VectorXd& times,
                      const Eigen::MatrixXd& values) {
  CsvTable t;
  t.header.push_back("t");
  for (const std::string& n : names) t.header.push_back(n);
  for (int i = 0; i < times.size(); ++i) {
    std::vector<std::string> row;
    row.push_back(format_double(times[i]));
    for (int c = 0; c < values.rows(); ++c) row.push_back(format_double(values(c, i)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable observations_table(const std::vector<std::string>& names, const Eigen::VectorXd& times,
                            const ObservationSet& obs) {
  CsvTable t;
  t.header.push_back("t");
  for (const std::string& n : names) t.header.push_back(n);
  t.rows.assign(times.size(), std::vector<std::string>(names.size() + 1));
  for (int i = 0; i < times.size(); ++i) t.rows[i][0] = format_double(times[i]);
  for (int c = 0; c < obs.dim(); ++c)
    for (int k = 0; k < obs.times[c].size(); ++k) {
      int i = find_time(times, obs.times[c][k]);
      if (i < 0) throw ConfigError("observation time off the output grid");
      t.rows[i][c + 1] = format_double(obs.values[c][k]);
    }
  return t;
}

// one series per column; empty cells are skipped so staggered schedules work
ObservationSet read_observations(const std::string& path, const OdeModel& sim_model,
                                 Eigen::VectorXd* all_times = nullptr) {
  CsvTable t = read_csv(path);
  check_header(t, path, sim_model.x_names);
  const int d = sim_model.dim_x;
  const int rows = static_cast<int>(t.rows.size());
  if (rows == 0) throw IoError(path + ": no data rows");
  Eigen::VectorXd times(rows);
  for (int i = 0; i < rows; ++i) times[i] = parse_double(t.rows[i][0]);
  for (int i = 1; i < rows; ++i)
    if (!(times[i] > times[i - 1])) throw IoError(path + ": times must increase");
  ObservationSet obs;
  obs.times.resize(d);
  obs.values.resize(d);
  for (int c = 0; c < d; ++c) {
    std::vector<double> tt, vv;
    for (int i = 0; i < rows; ++i) {
      const std::string& cell = t.rows[i][c + 1];
      if (cell.empty()) continue;
      tt.push_back(times[i]);
      vv.push_back(parse_double(cell));
    }
    obs.times[c] = Eigen::Map<Eigen::VectorXd>(tt.data(), static_cast<int>(tt.size()));
    obs.values[c] = Eigen::Map<Eigen::VectorXd>(vv.data(), static_cast<int>(vv.size()));
  }
  if (all_times) *all_times = times;
  return obs;
}

std::string dataset_file(const std::string& data_path) {
  if (std::filesystem::is_directory(data_path))
    return (std::filesystem::path(data_path) / "observations.csv").string();
  return data_path;
}

SimulatedData simulate_case(const RunConfig& cfg, const CaseStudy& cs) {
  TrueParamSpec spec = cs.sim_truth;
  if (cfg.noise >= 0.0) spec.noise_sd.setConstant(cfg.noise);
  return simulate_dataset(cs.sim_model, spec, cfg.sim_seed, cfg.sim_substeps);
}

void write_run(const MethodRun& run, const OdeModel& model, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto at = [&](const std::string& name) {
    return (std::filesystem::path(out_dir) / name).string();
  };

  CsvTable th;
  th.header.push_back("t");
  for (const std::string& n : model.theta_names) {
    th.header.push_back(n);
    th.header.push_back(n + "_lower");
    th.header.push_back(n + "_upper");
  }
  const bool theta_bounds = run.theta_lower.size() > 0;
  for (int i = 0; i < run.grid.size(); ++i) {
    std::vector<std::string> row;
    row.push_back(format_double(run.grid[i]));
    for (int j = 0; j < run.theta.rows(); ++j) {
      row.push_back(format_double(run.theta(j, i)));
      row.push_back(theta_bounds ? format_double(run.theta_lower(j, i)) : "");
      row.push_back(theta_bounds ? format_double(run.theta_upper(j, i)) : "");
    }
    th.rows.push_back(std::move(row));
  }
  write_csv(at("theta.csv"), th);

  CsvTable ps;
  ps.header = {"name", "value", "lower", "upper"};
  const bool psi_bounds = run.psi_lower.size() > 0;
  for (int j = 0; j < run.psi.size(); ++j)
    ps.rows.push_back({model.psi_names[j], format_double(run.psi[j]),
                       psi_bounds ? format_double(run.psi_lower[j]) : "",
                       psi_bounds ? format_double(run.psi_upper[j]) : ""});
  write_csv(at("psi.csv"), ps);

  if (run.sigma.size() > 0) {
    CsvTable sg;
    sg.header = {"component", "value", "lower", "upper"};
    const bool sigma_bounds = run.sigma_lower.size() > 0;
    for (int c = 0; c < run.sigma.size(); ++c)
      sg.rows.push_back({model.x_names[c], format_double(run.sigma[c]),
                         sigma_bounds ? format_double(run.sigma_lower[c]) : "",
                         sigma_bounds ? format_double(run.sigma_upper[c]) : ""});
    write_csv(at("sigma.csv"), sg);
  }

  write_csv(at("trajectory.csv"), series_table(model.x_names, run.traj_times, run.trajectory));
  write_kv(at("diagnostics.kv"), run.diagnostics);
}

}  // namespace

void cmd_simulate(const RunConfig& cfg, const std::string& out_dir) {
  CaseStudy cs = builtin_truth(cfg.model_name);
  SimulatedData data = simulate_case(cfg, cs);
  std::filesystem::create_directories(out_dir);
  std::filesystem::path dir(out_dir);
  write_csv((dir / "observations.csv").string(),
            observations_table(cs.sim_model.x_names, data.times, data.obs));
  write_csv((dir / "truth.csv").string(),
            series_table(cs.sim_model.x_names, data.times, data.truth));
}

MethodRun cmd_infer(const RunConfig& cfg, const std::string& method, const std::string& data_path,
                    const std::string& out_dir) {
  CaseStudy cs = builtin_truth(cfg.model_name);
  ObservationSet sim_obs = read_observations(dataset_file(data_path), cs.sim_model);
  MethodRun run = run_method(cfg, cs, sim_obs, method);
  write_run(run, cs.inference_model, out_dir);
  return run;
}

void cmd_evaluate(const RunConfig& cfg, const std::string& data_dir, const std::string& result_dir,
                  const std::string& out_dir) {
  CaseStudy cs = builtin_truth(cfg.model_name);
  const OdeModel& model = cs.inference_model;
  std::filesystem::path data(data_dir), result(result_dir);

  SimulatedData sim;
  sim.obs = read_observations((data / "observations.csv").string(), cs.sim_model);
  {
    std::string path = (data / "truth.csv").string();
    CsvTable t = read_csv(path);
    check_header(t, path, cs.sim_model.x_names);
    const int rows = static_cast<int>(t.rows.size());
    sim.times.resize(rows);
    sim.truth.resize(cs.sim_model.dim_x, rows);
    for (int i = 0; i < rows; ++i) {
      sim.times[i] = parse_double(t.rows[i][0]);
      for (int c = 0; c < cs.sim_model.dim_x; ++c)
        sim.truth(c, i) = parse_double(t.rows[i][c + 1]);
    }
  }

  MethodRun run;
  {
    std::string path = (result / "theta.csv").string();
    CsvTable t = read_csv(path);
    std::vector<std::string> expect{"t"};
    for (const std::string& n : model.theta_names) {
      expect.push_back(n);
      expect.push_back(n + "_lower");
      expect.push_back(n + "_upper");
    }
    if (t.header != expect) throw ConfigError(path + ": unexpected header");
    const int n = static_cast<int>(t.rows.size());
    if (n == 0) throw IoError(path + ": no data rows");
    run.grid.resize(n);
    run.theta.resize(model.dim_theta, n);
    const bool bounds = model.dim_theta > 0 && !t.rows[0][2].empty();
    if (bounds) {
      run.theta_lower.resize(model.dim_theta, n);
      run.theta_upper.resize(model.dim_theta, n);
    }
    for (int i = 0; i < n; ++i) {
      run.grid[i] = parse_double(t.rows[i][0]);
      for (int j = 0; j < model.dim_theta; ++j) {
        run.theta(j, i) = parse_double(t.rows[i][1 + 3 * j]);
        if (bounds) {
          run.theta_lower(j, i) = parse_double(t.rows[i][2 + 3 * j]);
          run.theta_upper(j, i) = parse_double(t.rows[i][3 + 3 * j]);
        }
      }
    }
  }
  {
    std::string path = (result / "psi.csv").string();
    CsvTable t = read_csv(path);
    if (t.header != std::vector<std::string>{"name", "value", "lower", "upper"})
      throw ConfigError(path + ": unexpected header");
    if (static_cast<int>(t.rows.size()) != model.dim_psi)
      throw ConfigError(path + ": expected one row per constant parameter");
    run.psi.resize(model.dim_psi);
    const bool bounds = model.dim_psi > 0 && !t.rows[0][2].empty();
    if (bounds) {
      run.psi_lower.resize(model.dim_psi);
      run.psi_upper.resize(model.dim_psi);
    }
    for (const std::vector<std::string>& row : t.rows) {
      int j = name_index(model.psi_names, row[0]);
      if (j < 0) throw ConfigError(path + ": unknown parameter '" + row[0] + "'");
      run.psi[j] = parse_double(row[1]);
      if (bounds) {
        run.psi_lower[j] = parse_double(row[2]);
        run.psi_upper[j] = parse_double(row[3]);
      }
    }
  }
  {
    std::string path = (result / "trajectory.csv").string();
    CsvTable t = read_csv(path);
    check_header(t, path, model.x_names);
    const int n = static_cast<int>(t.rows.size());
    if (n == 0) throw IoError(path + ": no data rows");
    run.traj_times.resize(n);
    run.trajectory.resize(model.dim_x, n);
    for (int i = 0; i < n; ++i) {
      run.traj_times[i] = parse_double(t.rows[i][0]);
      for (int c = 0; c < model.dim_x; ++c)
        run.trajectory(c, i) = parse_double(t.rows[i][c + 1]);
    }
  }
  {
    std::string path = (result / "diagnostics.kv").string();
    if (std::filesystem::exists(path)) {
      KvPairs diag = read_kv(path);
      if (const std::string* m = kv_find(diag, "method"))
        run.diagnostics.emplace_back("method", *m);
    }
  }

  KvPairs metrics = evaluate_metrics(cs, sim, run);
  std::filesystem::create_directories(out_dir);
  write_kv((std::filesystem::path(out_dir) / "metrics.kv").string(), metrics);
}

int cmd_replicate(const RunConfig& cfg, const std::string& method, const std::string& out_dir) {
  CaseStudy cs = builtin_truth(cfg.model_name);
  const int n = cfg.replications;
  if (n < 1) throw ConfigError("replicate: replications must be positive");

  struct Rep {
    std::string status;
    double wall = 0.0;
    KvPairs metrics;
  };
  std::vector<Rep> reps(n);
  std::atomic<int> next{0};
  auto body = [&]() {
    while (true) {
      int r = next.fetch_add(1);
      if (r >= n) return;
      auto t0 = std::chrono::steady_clock::now();
      try {
        RunConfig rc = cfg;
        rc.sim_seed = cfg.sim_seed + static_cast<std::uint64_t>(r);
        rc.tvmagi.seed = cfg.tvmagi.seed + static_cast<std::uint64_t>(r);
        rc.filter.seed = cfg.filter.seed + static_cast<std::uint64_t>(r);
        SimulatedData data = simulate_case(rc, cs);
        MethodRun run = run_method(rc, cs, data.obs, method);
        reps[r].metrics = evaluate_metrics(cs, data, run);
        reps[r].status = "ok";
      } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& ch : msg)
          if (ch == ',' || ch == '\n') ch = ';';
        reps[r].status = "failed: " + msg;
      }
      reps[r].wall = seconds_since(t0);
    }
  };
  const int workers = std::max(1, std::min(cfg.workers, n));
  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (std::thread& t : pool) t.join();
  }

  std::vector<std::string> keys;
  for (const Rep& rep : reps)
    if (rep.status == "ok") {
      for (const auto& [k, v] : rep.metrics) keys.push_back(k);
      break;
    }

  CsvTable t;
  t.header = {"replication", "status", "wall_clock_sec"};
  for (const std::string& k : keys) t.header.push_back(k);
  int failed = 0;
  double wall_sum = 0.0;
  for (int r = 0; r < n; ++r) {
    wall_sum += reps[r].wall;
    std::vector<std::string> row{std::to_string(r), reps[r].status,
                                 format_double(reps[r].wall)};
    if (reps[r].status == "ok") {
      for (const std::string& k : keys) {
        const std::string* v = kv_find(reps[r].metrics, k);
        row.push_back(v ? *v : "");
      }
    } else {
      ++failed;
      row.resize(t.header.size());
    }
    t.rows.push_back(std::move(row));
  }

  const int ok = n - failed;
  std::vector<std::string> agg{"aggregate", std::to_string(ok) + "_of_" + std::to_string(n) + "_ok",
                               format_double(wall_sum / n)};
  for (const std::string& k : keys) {
    if (k == "method") {
      const std::string* v = nullptr;
      for (const Rep& rep : reps)
        if (rep.status == "ok" && (v = kv_find(rep.metrics, k))) break;
      agg.push_back(v ? *v : "");
      continue;
    }
    // absolute one-number errors aggregate as root mean square, everything
    // else as the mean over successful replications
    const bool use_rms = k.rfind("psi_err.", 0) == 0;
    double acc = 0.0;
    int count = 0;
    for (const Rep& rep : reps) {
      if (rep.status != "ok") continue;
      const std::string* v = kv_find(rep.metrics, k);
      if (!v) continue;
      double x = parse_double(*v);
      acc += use_rms ? x * x : x;
      ++count;
    }
    agg.push_back(count == 0 ? ""
                             : format_double(use_rms ? std::sqrt(acc / count) : acc / count));
  }
  t.rows.push_back(std::move(agg));

  std::filesystem::create_directories(out_dir);
  write_csv((std::filesystem::path(out_dir) / "summary.csv").string(), t);
  return failed;
}

}  // namespace tvmagi
