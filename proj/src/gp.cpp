#include "tvmagi/gp.hpp"

#include <cmath>

#include "tvmagi/errors.hpp"

namespace tvmagi {

double gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                       const Eigen::LLT<Eigen::MatrixXd>& chol) {
  if (x.size() != mean.size()) throw DomainError("gaussian_logpdf: size mismatch");
  const double log2pi = 1.8378770664093454835606594728112;
  Eigen::VectorXd d = x - mean;
  Eigen::VectorXd w = chol.matrixL().solve(d);
  double logdet = 2.0 * Eigen::MatrixXd(chol.matrixL()).diagonal().array().log().sum();
  return -0.5 * (x.size() * log2pi + logdet + w.squaredNorm());
}

Eigen::VectorXd conditional_deriv_mean(const Eigen::VectorXd& x, const GpPriorSpec& prior,
                                       const GramBundle& gram) {
  if (x.size() != gram.grid.size()) throw DomainError("conditional_deriv_mean: size mismatch");
  return Eigen::VectorXd::Constant(x.size(), prior.mean_deriv) +
         gram.deriv_gain * (x.array() - prior.mean).matrix();
}

}  // namespace tvmagi
