#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "tvmagi/adam.hpp"
#include "tvmagi/matern.hpp"
#include "tvmagi/models.hpp"
#include "tvmagi/obs.hpp"

namespace tvmagi {

// how the time-varying parameters enter the free vector: one value per grid
// point, or a single constant per parameter (initialization stage)
enum class ThetaMode { Grid, Constant };

struct PosteriorSpec {
  OdeModel model;
  Eigen::VectorXd grid;                                  // discretization set
  ObservationSet obs;                                    // on the inference scale
  std::vector<std::shared_ptr<const GramBundle>> x_gram; // per state component
  Eigen::MatrixXd x_mean;                                // D x n prior means
  std::vector<std::shared_ptr<const GramBundle>> theta_gram;  // per parameter, Grid+prior only
  Eigen::MatrixXd theta_mean;                            // P x n prior means
  ThetaMode theta_mode = ThetaMode::Grid;
  bool theta_prior = true;   // include the theta-GP density term (off for the
                             // point-wise objective and the constant stage)
  double sigma_floor = 1e-6;
};

struct PosteriorBreakdown {
  double part1_theta_prior = 0.0;
  double part2_x_prior = 0.0;
  double part3_obs = 0.0;
  double part4_manifold = 0.0;
  double total = 0.0;
};

// point estimate on the natural scale
struct InferenceState {
  Eigen::MatrixXd x;      // D x n
  Eigen::MatrixXd theta;  // P x n (Grid) or P x 1 (Constant)
  Eigen::VectorXd psi;
  Eigen::VectorXd sigma;
};

// Negative log posterior of (x(I), theta, psi, sigma) given observations:
//   part1  GP density of each theta_p over the grid
//   part2  GP density of each x_d over the grid
//   part3  Gaussian observation likelihood with noise sigma_d
//   part4  Gaussian density of the ODE residual f - m under the conditional
//          derivative covariance of each component's GP
// psi and sigma live in the free vector through logs (psi only where flagged
// positive); sigma_d^2 = exp(2u) + floor^2.
class Posterior {
 public:
  explicit Posterior(PosteriorSpec spec);

  int dim() const { return dim_; }
  int n_grid() const { return n_; }
  const PosteriorSpec& spec() const { return spec_; }

  // value and gradient for optimizers and samplers: returns +inf with zero
  // gradient when any intermediate is non-finite
  double value_grad(const Eigen::VectorXd& v, Eigen::VectorXd& grad);

  // value only, same non-finite convention
  double value(const Eigen::VectorXd& v);

  // checked decomposition, throws NonFiniteError naming the offending part
  PosteriorBreakdown breakdown(const Eigen::VectorXd& v);

  Eigen::VectorXd pack(const InferenceState& st) const;
  InferenceState unpack(const Eigen::VectorXd& v) const;

  // block offsets within the free vector
  int x_offset() const { return 0; }
  int theta_offset() const { return d_ * n_; }
  int psi_offset() const { return d_ * n_ + p_ * theta_cols_; }
  int sigma_offset() const { return psi_offset() + q_; }
  int theta_cols() const { return theta_cols_; }

 private:
  double eval(const Eigen::VectorXd& v, Eigen::VectorXd* grad, PosteriorBreakdown* parts);

  PosteriorSpec spec_;
  int d_, p_, q_, n_, theta_cols_, dim_;
  std::vector<std::vector<int>> obs_idx_;  // per component, grid index of each observation
  double part2_const_ = 0.0, part4_const_ = 0.0, part1_const_ = 0.0;
  // workspaces (n x D / n x P layouts, one column per component/parameter)
  Eigen::MatrixXd f_, m_, h_, ax_, at_;
  Eigen::MatrixXd jx_, jth_, jps_;
  Eigen::VectorXd xi_, thi_, hi_, fi_, psi_nat_, sigma2_, cx_, gthp_;
};

// shared-ownership adapter for adam_minimize / hmc_sample
Objective posterior_objective(std::shared_ptr<Posterior> post);

}  // namespace tvmagi
