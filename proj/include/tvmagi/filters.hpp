#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "tvmagi/models.hpp"
#include "tvmagi/obs.hpp"

namespace tvmagi {

enum class FilterMethod { Ekf, Ukf, Enkf, Eakf };

// accepts ekf | ukf | enkf | eakf
FilterMethod parse_filter_method(const std::string& name);
std::string filter_method_name(FilterMethod method);

struct FilterConfig {
  FilterMethod method = FilterMethod::Ekf;
  int ensemble_size = 300;            // ensemble methods only
  Eigen::VectorXd param_walk_sd;      // size P+Q, random walk per observation interval
  Eigen::VectorXd state_process_sd;   // size D, additive per observation interval
  Eigen::VectorXd obs_sd;             // size D, noise of each observed component
  double inflation = 1.02;            // multiplicative, applied before each analysis
  std::uint64_t seed = 0;
  int substeps = 10;                  // RK4 steps per inter-observation interval
};

struct FilterResult {
  Eigen::VectorXd times;           // union of all observation times
  Eigen::MatrixXd filtered_means;  // (D+P+Q) x T, post-analysis
  Eigen::MatrixXd filtered_sds;    // same shape
  Eigen::MatrixXd theta_path;      // P x T slice of filtered_means
  Eigen::VectorXd psi_bar;         // time-average of the filtered psi rows
  int degeneracy_events = 0;       // analyses skipped for zero spread
};

// One serial scalar-observation adjustment: shift and scale the observed row
// so its mean and variance match the Kalman posterior exactly, then regress
// the increments onto the other rows. Returns false (no change) when the
// prior spread of the observed row is at rounding level relative to its mean.
bool eakf_scalar_update(Eigen::MatrixXd& ens, int obs_row, double y, double obs_var);

// Joint filtering of states and parameters: the augmented state
// (x, theta, psi) is forecast through the ODE between observation times with
// parameters held constant plus their configured random walks, then updated
// by the chosen analysis.
FilterResult run_filter(const ObservationSet& data, const OdeModel& model,
                        const Eigen::VectorXd& init_mean, const Eigen::MatrixXd& init_cov,
                        const FilterConfig& cfg);

}  // namespace tvmagi
