#pragma once

#include <Eigen/Dense>
#include <string>

#include "tvmagi/config.hpp"
#include "tvmagi/csv.hpp"
#include "tvmagi/models.hpp"
#include "tvmagi/obs.hpp"
#include "tvmagi/simeval.hpp"

namespace tvmagi {

// What any method reports for one dataset, in inference-model terms.
// Interval matrices are empty when the method gives none; the trajectory is
// on the original scale of the observed quantities.
struct MethodRun {
  Eigen::VectorXd grid;                      // times the theta estimates live on
  Eigen::MatrixXd theta;                     // P x n
  Eigen::MatrixXd theta_lower, theta_upper;  // P x n when present
  Eigen::VectorXd psi, psi_lower, psi_upper;
  Eigen::VectorXd sigma, sigma_lower, sigma_upper;  // fitted observation noise
  Eigen::VectorXd traj_times;
  Eigen::MatrixXd trajectory;  // inference components x traj_times
  KvPairs diagnostics;
  double wall_clock_sec = 0.0;
};

// method is tvmagi | rk4 | ekf | ukf | enkf | eakf
MethodRun run_method(const RunConfig& cfg, const CaseStudy& cs, const ObservationSet& sim_obs,
                     const std::string& method);

// scores one run against the generating truth; keys like theta_rmse.<name>,
// psi_err.<name>, traj_rmse.<component>, coverage_theta.<name>
KvPairs evaluate_metrics(const CaseStudy& cs, const SimulatedData& data, const MethodRun& run);

// subcommand bodies; each writes its files under out_dir
void cmd_simulate(const RunConfig& cfg, const std::string& out_dir);
// data_path is a dataset directory or the observations file itself
MethodRun cmd_infer(const RunConfig& cfg, const std::string& method, const std::string& data_path,
                    const std::string& out_dir);
void cmd_evaluate(const RunConfig& cfg, const std::string& data_dir, const std::string& result_dir,
                  const std::string& out_dir);
// simulate + fit + score cfg.replications times with shifted seeds, writing
// summary.csv; failed replications are recorded there and excluded from the
// aggregate row. Returns the number of failures.
int cmd_replicate(const RunConfig& cfg, const std::string& method, const std::string& out_dir);

}  // namespace tvmagi
