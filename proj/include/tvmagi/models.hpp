#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tvmagi/interp.hpp"

namespace tvmagi {

// ODE system dx/dt = f(x, theta(t), psi, t) with analytic Jacobians in all
// three blocks. theta holds the time-varying parameters evaluated at t, psi
// the time-constant ones.
struct OdeModel {
  std::string name;
  int dim_x = 0;
  int dim_theta = 0;
  int dim_psi = 0;
  std::vector<std::string> x_names, theta_names, psi_names;
  std::vector<bool> psi_positive;  // optimize through log when true
  bool log_scale = false;          // states are logs of the original quantities

  std::function<void(const Eigen::VectorXd& x, const Eigen::VectorXd& theta,
                     const Eigen::VectorXd& psi, double t, Eigen::VectorXd& dx)>
      f;
  std::function<void(const Eigen::VectorXd& x, const Eigen::VectorXd& theta,
                     const Eigen::VectorXd& psi, double t, Eigen::MatrixXd& jx,
                     Eigen::MatrixXd& jtheta, Eigen::MatrixXd& jpsi)>
      jac;
};

// checked single evaluation, throws NonFiniteError on NaN/Inf output
Eigen::VectorXd eval_f(const OdeModel& m, const Eigen::VectorXd& x, const Eigen::VectorXd& theta,
                       const Eigen::VectorXd& psi, double t);

struct Jacobians {
  Eigen::MatrixXd jx, jtheta, jpsi;
};
Jacobians eval_jacobians(const OdeModel& m, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& theta, const Eigen::VectorXd& psi, double t);

// change of variables to log states: y = log x, dy_d = f_d(exp y)/exp(y_d).
// Throws DomainError if the model is already on the log scale.
OdeModel log_transform(const OdeModel& m);

// generating truth for one case study, expressed for a specific model
struct TrueParamSpec {
  std::vector<std::function<double(double)>> theta_funcs;
  Eigen::VectorXd psi;
  Eigen::VectorXd x0;
  double t_end = 0.0;
  std::vector<Eigen::VectorXd> obs_times;  // per component; empty = unobserved
  Eigen::VectorXd noise_sd;                // per component, log-scale sd
};

// extra reporting pieces for the viral-load study: the inference model works
// on a rewritten scalar system with an exogenous drive, and the headline
// parameter is a combination of the two time-varying coefficients
struct HivExtras {
  Pchip t_cells;                           // exogenous T(t) from noiseless samples
  std::function<double(double)> a_true;    // combined drive a(t) truth
  Eigen::VectorXd cov_times, cov_values;   // the covariate sample series
};

struct CaseStudy {
  std::string name;
  OdeModel sim_model;         // generates data on the original scale
  TrueParamSpec sim_truth;    // truth for sim_model
  OdeModel inference_model;   // what the fitting pipeline sees
  TrueParamSpec inference_truth;  // truth in the inference parameterization (x0 original scale)
  bool log_obs = false;       // observations enter inference as logs
  bool relative_traj_metric = false;  // trajectory RMSE on relative errors
  std::vector<int> obs_comp_in_sim;   // inference component -> sim component; empty = identity
  std::shared_ptr<HivExtras> hiv;
};

OdeModel make_seird();
OdeModel make_lv();
OdeModel make_hiv_full();
// reduced scalar system dX = a1(t) + a2(t) T(t) - c X with T(t) interpolated
// from a sampled series
OdeModel make_hiv_reduced(const Eigen::VectorXd& t_samples, const Eigen::VectorXd& t_values);

// name is one of seird | lv | hiv
CaseStudy builtin_truth(const std::string& name);

}  // namespace tvmagi
