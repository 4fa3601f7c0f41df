#pragma once

#include <Eigen/Dense>

#include "tvmagi/matern.hpp"

namespace tvmagi {

// GP prior for one scalar curve: Matern kernel, constant mean, zero
// derivative mean.
struct GpPriorSpec {
  KernelConfig kernel;
  double mean = 0.0;
  double mean_deriv = 0.0;
};

// log N(x; mean, LL^T) using the precomputed Cholesky factor
double gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                       const Eigen::LLT<Eigen::MatrixXd>& chol);

// Moments of the GP derivative on the grid given curve values x on the same
// grid: mean = mean_deriv + k_ds k^{-1} (x - mean); covariance is
// gram.cond_cov with factor gram.chol_cond.
Eigen::VectorXd conditional_deriv_mean(const Eigen::VectorXd& x, const GpPriorSpec& prior,
                                       const GramBundle& gram);

}  // namespace tvmagi
