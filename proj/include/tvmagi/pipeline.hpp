#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "tvmagi/adam.hpp"
#include "tvmagi/hmc.hpp"
#include "tvmagi/hyperfit.hpp"
#include "tvmagi/models.hpp"
#include "tvmagi/obs.hpp"
#include "tvmagi/posterior.hpp"

namespace tvmagi {

struct TvmagiConfig {
  int discretization_level = 2;  // grid points per observation gap of the densest component
  double nu_x = 2.01;
  double nu_theta = 2.01;
  Phi2Bounds theta_phi2_bounds;  // lo == hi == 0 derives the default from the grid
  AdamConfig adam_stage1{5e-3, 0.9, 0.999, 1e-8, 20000, 1e-9, 200, false};
  AdamConfig adam_stage2{5e-3, 0.9, 0.999, 1e-8, 20000, 1e-9, 200, false};
  AdamConfig adam_stage4{2e-3, 0.9, 0.999, 1e-8, 30000, 1e-9, 200, false};
  // extra tenfold learning-rate drops after the winning stage-4 start, each
  // running half the stage-4 iteration budget
  int stage4_polish = 2;
  HmcConfig hmc;
  bool skip_hmc = false;
  double sigma_floor = 1e-6;
  double jitter = 1e-7;
  std::uint64_t seed = 0;
};

// inference grid: union of every component's observation times plus
// (level - 1) equispaced fill points per gap of the densest component
Eigen::VectorXd make_grid(const ObservationSet& obs, int level);

struct Stage1Result {
  Eigen::VectorXd grid;
  std::vector<XHyperFit> x_hyper;  // per component
  std::vector<std::shared_ptr<const GramBundle>> x_gram;
  Eigen::MatrixXd x_interp;     // D x n, linear interpolation of the observations
  Eigen::VectorXd mu_theta_hat;  // P, fitted constant parameter means
  Eigen::VectorXd psi0;
  Eigen::MatrixXd x0;  // D x n, optimized states
  Eigen::VectorXd sigma0;
  double objective = 0.0;
  int iters = 0;
};

struct Stage2Result {
  Eigen::MatrixXd theta_tilde;  // P x n point-wise estimates
  Eigen::MatrixXd x_tilde;
  Eigen::VectorXd psi_tilde;
  Eigen::VectorXd sigma_tilde;
  double objective = 0.0;
  int iters = 0;
};

struct Stage3Result {
  std::vector<ThetaHyperFit> theta_hyper;  // per parameter
};

struct Stage4Result {
  InferenceState map_state;
  double objective_init = 0.0;
  double objective = 0.0;
  int iters = 0;
  int best_start = 0;  // 0 = stage-2 state init, 1 = interpolated-observation init
  std::shared_ptr<Posterior> posterior;  // full objective with frozen hyperparameters
};

struct Stage5Result {
  PosteriorSamples samples;
  std::vector<IntervalRow> intervals;
};

// fits constant parameter means, state hyperparameters, and initial states
// by optimizing the density with the time-varying parameters collapsed to
// constants (no parameter-process prior)
Stage1Result stage1_constant_init(const ObservationSet& data, const OdeModel& model,
                                  const TvmagiConfig& cfg);

// point-wise parameter estimates: same density on the grid without the
// parameter-process prior, parameters free per grid point
Stage2Result stage2_pointwise(const Stage1Result& s1, const ObservationSet& data,
                              const OdeModel& model, const TvmagiConfig& cfg);

// empirical-Bayes kernel fit for each time-varying parameter around its
// stage-1 mean
Stage3Result stage3_theta_hyper(const Stage2Result& s2, const Stage1Result& s1,
                                const TvmagiConfig& cfg);

// MAP of the full density with all hyperparameters frozen; multi-start over
// the stage-2 state and the interpolated-observation state
Stage4Result stage4_map(const Stage1Result& s1, const Stage2Result& s2, const Stage3Result& s3,
                        const ObservationSet& data, const OdeModel& model,
                        const TvmagiConfig& cfg);

// posterior sampling from the MAP with the same frozen density
Stage5Result stage5_intervals(const Stage4Result& s4, const TvmagiConfig& cfg);

struct StageDiagnostics {
  Stage1Result stage1;
  Stage2Result stage2;
  Stage3Result stage3;
  double map_objective_init = 0.0;
  double map_objective = 0.0;
  int map_iters = 0;
  int map_best_start = 0;
};

struct FitResult {
  Eigen::VectorXd grid;
  InferenceState map_state;
  Eigen::MatrixXd theta_map;  // P x n
  Eigen::VectorXd psi_map;
  Eigen::VectorXd sigma_map;
  PosteriorSamples posterior;          // empty draws when sampling skipped
  std::vector<IntervalRow> intervals;  // empty when sampling skipped
  StageDiagnostics diagnostics;
  std::shared_ptr<Posterior> posterior_def;
};

FitResult run_tvmagi(const ObservationSet& data, const OdeModel& model, const TvmagiConfig& cfg);

}  // namespace tvmagi
