#pragma once

#include <Eigen/Dense>

namespace tvmagi {

// Matern covariance k(l) = phi1^2 2^{1-nu}/Gamma(nu) z^nu K_nu(z) with
// z = sqrt(2 nu) l / phi2.
struct KernelConfig {
  double phi1 = 1.0;
  double phi2 = 1.0;
  double nu = 2.01;
};

// kernel sections at a pair (s, t): value and the derivatives taken in each
// argument, plus the cross second derivative
struct KernelDerivs {
  double k = 0.0;
  double dk_ds = 0.0;
  double dk_dt = 0.0;
  double d2k_dsdt = 0.0;
};

double matern_cov(const KernelConfig& cfg, double l);

// requires nu > 1 so the cross derivative exists on the diagonal
KernelDerivs matern_cov_derivs(const KernelConfig& cfg, double s, double t);

// d k(l) / d phi2, used by marginal-likelihood gradients
double matern_cov_dphi2(const KernelConfig& cfg, double l);

// Gram matrices of the kernel and its derivative sections over a grid,
// with their factorizations. k carries the jitter on its diagonal;
// cond_cov is the Schur complement k_dsdt - k_ds k^{-1} k_dt of the
// jittered k, and its own factorization adds the same jitter again.
struct GramBundle {
  Eigen::VectorXd grid;
  KernelConfig cfg;
  double jitter_abs = 0.0;           // actual diagonal shift applied
  Eigen::MatrixXd k;                 // kernel matrix, jittered
  Eigen::MatrixXd k_ds;              // d/ds sections (antisymmetric)
  Eigen::MatrixXd k_dt;              // d/dt sections = k_ds transposed
  Eigen::MatrixXd k_dsdt;            // cross second derivatives
  Eigen::MatrixXd cond_cov;          // conditional covariance of the derivative process
  Eigen::LLT<Eigen::MatrixXd> chol_k;
  Eigen::LLT<Eigen::MatrixXd> chol_cond;
  Eigen::MatrixXd deriv_gain;        // k_ds k^{-1}, conditional-mean map
  double logdet_k = 0.0;
  double logdet_cond = 0.0;
};

GramBundle build_gram(const KernelConfig& cfg, const Eigen::VectorXd& grid, double jitter = 1e-7);

}  // namespace tvmagi
