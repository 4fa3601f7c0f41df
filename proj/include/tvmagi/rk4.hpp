#pragma once

#include <Eigen/Dense>
#include <functional>

#include "tvmagi/adam.hpp"
#include "tvmagi/models.hpp"
#include "tvmagi/obs.hpp"

namespace tvmagi {

// one classic fourth-order step of dx/dt = f(x, t); k1..k4 and the stage
// buffer are caller-provided scratch
template <typename F>
inline void rk4_step(F&& f, double t, double h, Eigen::VectorXd& x, Eigen::VectorXd& k1,
                     Eigen::VectorXd& k2, Eigen::VectorXd& k3, Eigen::VectorXd& k4,
                     Eigen::VectorXd& stage) {
  f(x, t, k1);
  stage = x + 0.5 * h * k1;
  f(stage, t + 0.5 * h, k2);
  stage = x + 0.5 * h * k2;
  f(stage, t + 0.5 * h, k3);
  stage = x + h * k3;
  f(stage, t + h, k4);
  x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

struct OdeSolution {
  Eigen::VectorXd times;
  Eigen::MatrixXd states;  // dim_x rows, one column per output time
};

using ThetaPath = std::function<void(double t, Eigen::VectorXd& theta)>;

// each parameter row linearly interpolated over the grid, clamped outside
ThetaPath theta_path_linear(const Eigen::MatrixXd& theta_grid, const Eigen::VectorXd& grid);

// integrate the model through the given output times, `substeps` equal RK4
// steps per interval
OdeSolution rk4_solve(const OdeModel& m, const Eigen::VectorXd& x0, const ThetaPath& theta_at,
                      const Eigen::VectorXd& psi, const Eigen::VectorXd& times, int substeps = 10);

struct RkLsResult {
  Eigen::VectorXd x0;
  Eigen::MatrixXd theta;  // dim_theta rows, one column per grid point
  Eigen::VectorXd psi;
  double objective = 0.0;
  int iters = 0;
  bool aborted_nonfinite = false;
};

// The least-squares objective over the packed free vector
// [x0; theta grid columns; psi (log where positive)]; gradients run backward
// through the integrator stages
Objective rk_ls_objective(const OdeModel& m, const ObservationSet& obs,
                          const Eigen::VectorXd& grid, int substeps = 10);

// Benchmark fit: squared-error matching of the RK4 trajectory to the
// observations over (x0, theta on the grid, psi), theta interpolated
// linearly between grid points, psi through logs where flagged positive.
RkLsResult rk_least_squares(const OdeModel& m, const ObservationSet& obs,
                            const Eigen::VectorXd& grid, const Eigen::VectorXd& x0_init,
                            const Eigen::MatrixXd& theta_init, const Eigen::VectorXd& psi_init,
                            const AdamConfig& opt, int substeps = 10);

}  // namespace tvmagi
