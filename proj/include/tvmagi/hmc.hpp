#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "tvmagi/adam.hpp"
#include "tvmagi/posterior.hpp"

namespace tvmagi {

struct HmcConfig {
  double step_size = 1e-5;
  int leapfrog_steps = 100;
  int n_samples = 8000;
  double burn_in_ratio = 0.5;  // fraction of n_samples discarded from the front
  std::uint64_t seed = 0;
};

struct PosteriorSamples {
  Eigen::MatrixXd draws;  // retained samples x dimension
  double accept_rate = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd lower95;  // 2.5 percentile per column
  Eigen::VectorXd upper95;  // 97.5 percentile per column
};

// One leapfrog trajectory of `steps` steps of size eps, mutating q and p in
// place. Returns the potential at the final point; returns NaN (divergence)
// as soon as the potential or its gradient stops being finite.
double leapfrog(const Objective& potential, Eigen::VectorXd& q, Eigen::VectorXd& p,
                double eps, int steps);

// Hamiltonian Monte Carlo with standard-normal momenta. `potential` is the
// negative log-density (with gradient). Divergent trajectories count as
// rejections; more than 99% divergent proposals is an error.
PosteriorSamples hmc_sample(const Objective& potential, const Eigen::VectorXd& init,
                            const HmcConfig& cfg);

// One scalar quantity summarized over the retained draws. time is the grid
// time for x(t) and theta(t) rows and NaN for psi/sigma (and constant theta).
struct IntervalRow {
  std::string quantity;
  double time = 0.0;
  double mean = 0.0;
  double lower95 = 0.0;
  double upper95 = 0.0;
};

// Maps flat sample columns back to named quantities using the posterior's
// free-vector layout. Recomputes summaries from the draws themselves, on
// the natural scale (psi and sigma columns are stored as logs in the draws).
std::vector<IntervalRow> summarize_intervals(const PosteriorSamples& samples,
                                             const Posterior& post);

}  // namespace tvmagi
