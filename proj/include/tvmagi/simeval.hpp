#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "tvmagi/models.hpp"
#include "tvmagi/obs.hpp"

namespace tvmagi {

struct SimulatedData {
  ObservationSet obs;        // noisy, one series per component schedule
  Eigen::VectorXd times;     // union of all scheduled times
  Eigen::MatrixXd truth;     // noiseless states at times, dim_x rows
};

// Integrate the true system and emit multiplicative log-normal observations
// y_d(t) = x_d(t) * exp(noise_sd_d * eps) on each component's schedule.
// Deterministic per seed.
SimulatedData simulate_dataset(const OdeModel& model, const TrueParamSpec& truth,
                               std::uint64_t seed, int substeps = 40);

// Map simulated observations onto the inference model: pick the observed sim
// components (obs_comp_in_sim, identity when empty) and take logs when the
// case study fits on the log scale.
ObservationSet inference_observations(const CaseStudy& cs, const ObservationSet& sim_obs);

// per-parameter sqrt of the mean squared error over the grid
Eigen::VectorXd param_rmse(const Eigen::MatrixXd& theta_est, const Eigen::VectorXd& grid,
                           const std::vector<std::function<double(double)>>& theta_true);

// per-parameter absolute error of a time-constant estimate; aggregate across
// replications with rms()
Eigen::VectorXd param_rmse(const Eigen::VectorXd& psi_est, const Eigen::VectorXd& psi_true);

double rms(const std::vector<double>& values);

struct TrajectoryEval {
  // per component; +inf when integration failed, NaN when a component has no
  // evaluation times
  Eigen::VectorXd rmse;
  bool integrator_failed = false;
};

// Reconstruct the trajectory from the inferred initial state and parameters
// (theta linearly interpolated over the grid) and score it per component
// against the supplied truth values at the evaluation times. With
// `relative`, errors are divided by the truth values.
TrajectoryEval trajectory_rmse(const OdeModel& model, const Eigen::VectorXd& x0,
                               const Eigen::MatrixXd& theta_grid, const Eigen::VectorXd& grid,
                               const Eigen::VectorXd& psi,
                               const std::vector<Eigen::VectorXd>& eval_times,
                               const std::vector<Eigen::VectorXd>& truth_values,
                               bool relative = false, int substeps = 40);

struct CoverageSummary {
  double pooled = 0.0;              // over all (replication, point) pairs
  Eigen::VectorXd per_replication;  // covered fraction within each replication
  double mean_of_replications = 0.0;
};

// one lower/upper/truth vector per replication (length 1 for time-constant
// quantities, one entry per grid point otherwise)
CoverageSummary coverage(const std::vector<Eigen::VectorXd>& lower,
                         const std::vector<Eigen::VectorXd>& upper,
                         const std::vector<Eigen::VectorXd>& truth);

}  // namespace tvmagi
