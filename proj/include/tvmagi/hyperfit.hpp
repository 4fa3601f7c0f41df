#pragma once

#include <Eigen/Dense>

#include "tvmagi/matern.hpp"

namespace tvmagi {

struct Phi2Bounds {
  double lo = 0.0;
  double hi = 0.0;
};

// default search box for the kernel range: [half the median observation
// spacing, half the span]
Phi2Bounds default_phi2_bounds(const Eigen::VectorXd& times);

struct XHyperFit {
  KernelConfig kernel;
  double sigma = 0.0;   // observation noise
  double mean = 0.0;    // sample mean, used as the GP constant mean
  double loglik = 0.0;
  bool success = false;
};

// GP-regression marginal likelihood fit of (phi1, phi2, sigma) for one
// observed curve, constant mean fixed at the sample mean. Multi-start
// gradient ascent in transformed coordinates (logs; phi2 through a logistic
// map onto its search box).
XHyperFit fit_x_hyperparams(const Eigen::VectorXd& times, const Eigen::VectorXd& y, double nu,
                            Phi2Bounds bounds = {});

struct ThetaHyperFit {
  KernelConfig kernel;
  double delta = 0.0;   // nugget around the point-wise estimates
  double loglik = 0.0;
  Phi2Bounds bounds;
};

// Empirical-Bayes fit of the time-varying-parameter GP hyperparameters to
// point-wise estimates theta_tilde, prior mean fixed at mu_theta (not the
// sample mean). phi2 carries a uniform hyper-prior on [bounds.lo, bounds.hi];
// degenerate inputs (theta_tilde constant at mu_theta) raise FitError.
ThetaHyperFit fit_theta_hyperparams(const Eigen::VectorXd& theta_tilde,
                                    const Eigen::VectorXd& grid, double mu_theta,
                                    Phi2Bounds bounds, double nu);

}  // namespace tvmagi
