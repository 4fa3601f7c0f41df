#include "tvmagi/hyperfit.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "tvmagi/adam.hpp"
#include "tvmagi/errors.hpp"

namespace tvmagi {

namespace {

constexpr double kSigmaFloor = 1e-6;

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

// kernel matrix and its phi2 derivative, Toeplitz fill on uniform grids
void build_cov_pair(const KernelConfig& cfg, const Eigen::VectorXd& t, Eigen::MatrixXd& k,
                    Eigen::MatrixXd& dk, bool want_dk) {
  const int n = static_cast<int>(t.size());
  k.resize(n, n);
  if (want_dk) dk.resize(n, n);
  bool uniform = n >= 3;
  double step = (n >= 2) ? t[1] - t[0] : 0.0;
  double span = std::fabs(t[n - 1] - t[0]);
  for (int i = 2; i < n && uniform; i++)
    if (std::fabs((t[i] - t[i - 1]) - step) > 1e-9 * std::max(1.0, span)) uniform = false;
  if (uniform && step > 0.0) {
    std::vector<double> kr(n), dr(n);
    for (int d = 0; d < n; d++) {
      kr[d] = matern_cov(cfg, step * d);
      if (want_dk) dr[d] = matern_cov_dphi2(cfg, step * d);
    }
    for (int i = 0; i < n; i++)
      for (int j = 0; j < n; j++) {
        k(i, j) = kr[std::abs(i - j)];
        if (want_dk) dk(i, j) = dr[std::abs(i - j)];
      }
  } else {
    for (int i = 0; i < n; i++)
      for (int j = 0; j <= i; j++) {
        double v = matern_cov(cfg, t[i] - t[j]);
        k(i, j) = v;
        k(j, i) = v;
        if (want_dk) {
          double w = matern_cov_dphi2(cfg, t[i] - t[j]);
          dk(i, j) = w;
          dk(j, i) = w;
        }
      }
  }
}

struct MarginalFit {
  KernelConfig kernel;
  double noise = 0.0;
  double loglik = 0.0;
  bool success = false;
};

// maximize log N(r; 0, K(phi1, phi2) + noise^2 I) over (phi1, phi2, noise),
// phi2 restricted to [bounds.lo, bounds.hi] by a logistic map
MarginalFit fit_marginal(const Eigen::VectorXd& times, const Eigen::VectorXd& r, double nu,
                         Phi2Bounds bounds) {
  const int n = static_cast<int>(times.size());
  if (n < 2) throw FitError("hyperparameter fit needs at least 2 points");
  if (!(bounds.lo > 0.0) || bounds.hi < bounds.lo)
    throw DomainError("hyperparameter fit: invalid phi2 bounds");
  const bool pinned = bounds.hi == bounds.lo;
  double sd = std::sqrt(r.squaredNorm() / n);
  sd = std::max(sd, 1e-8);
  const double log2pi = 1.8378770664093454835606594728112;

  Eigen::MatrixXd k, dk;
  auto nll = [&](const Eigen::VectorXd& u, Eigen::VectorXd& grad) -> double {
    double phi1 = std::exp(u[0]);
    double s2 = pinned ? 1.0 : sigmoid(u[1]);
    double phi2 = pinned ? bounds.lo : bounds.lo + (bounds.hi - bounds.lo) * s2;
    double sig2 = std::exp(2.0 * u[2]) + kSigmaFloor * kSigmaFloor;
    KernelConfig cfg{phi1, phi2, nu};
    build_cov_pair(cfg, times, k, dk, !pinned);
    Eigen::MatrixXd sigma = k;
    sigma.diagonal().array() += sig2;
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) {
      grad.setZero(3);
      return std::numeric_limits<double>::infinity();
    }
    Eigen::VectorXd alpha = llt.solve(r);
    double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    double val = 0.5 * (r.dot(alpha) + logdet + n * log2pi);
    // d nll / d eta = 0.5 tr((Sigma^-1 - alpha alpha^T) dSigma)
    Eigen::MatrixXd p = llt.solve(Eigen::MatrixXd::Identity(n, n));
    p.noalias() -= alpha * alpha.transpose();
    grad.resize(3);
    grad[0] = p.cwiseProduct(k).sum();  // dSigma/dlogphi1 = 2k
    if (pinned) {
      grad[1] = 0.0;
    } else {
      double dphi2 = (bounds.hi - bounds.lo) * s2 * (1.0 - s2);
      grad[1] = 0.5 * p.cwiseProduct(dk).sum() * dphi2;
    }
    grad[2] = std::exp(2.0 * u[2]) * p.trace();
    return val;
  };

  struct Start {
    double p1m, frac, sm;
  };
  const Start starts[8] = {{1.0, 0.20, 0.20}, {1.0, 0.60, 0.20}, {2.0, 0.85, 0.10},
                           {0.5, 0.35, 0.50}, {1.0, 0.07, 0.30}, {2.0, 0.50, 0.05},
                           {0.5, 0.75, 0.15}, {1.5, 0.12, 0.08}};
  AdamConfig screen;
  screen.lr = 0.08;
  screen.max_iters = 250;
  screen.tol = 1e-8;
  AdamConfig refine = screen;
  refine.lr = 0.02;
  refine.max_iters = 800;

  MarginalFit best;
  double best_val = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_u;
  for (const auto& st : starts) {
    Eigen::VectorXd u0(3);
    u0[0] = std::log(st.p1m * sd);
    u0[1] = logit(st.frac);
    u0[2] = std::log(std::max(st.sm * sd, 2.0 * kSigmaFloor));
    AdamResult ar = adam_minimize(nll, u0, screen);
    if (std::isfinite(ar.value) && ar.value < best_val) {
      best_val = ar.value;
      best_u = ar.x;
    }
  }
  if (!std::isfinite(best_val)) return best;
  AdamResult ar = adam_minimize(nll, best_u, refine);
  Eigen::VectorXd u = (std::isfinite(ar.value) && ar.value <= best_val) ? ar.x : best_u;
  double val = std::min(ar.value, best_val);

  best.kernel.phi1 = std::exp(u[0]);
  best.kernel.phi2 = pinned ? bounds.lo : bounds.lo + (bounds.hi - bounds.lo) * sigmoid(u[1]);
  best.kernel.nu = nu;
  best.noise = std::sqrt(std::exp(2.0 * u[2]) + kSigmaFloor * kSigmaFloor);
  best.loglik = -val;
  best.success = std::isfinite(val);
  return best;
}

}  // namespace

Phi2Bounds default_phi2_bounds(const Eigen::VectorXd& times) {
  const int n = static_cast<int>(times.size());
  if (n < 2) throw DomainError("default_phi2_bounds: need at least 2 times");
  std::vector<double> gaps(n - 1);
  for (int i = 0; i + 1 < n; i++) gaps[i] = times[i + 1] - times[i];
  std::nth_element(gaps.begin(), gaps.begin() + (n - 1) / 2, gaps.end());
  double spacing = gaps[(n - 1) / 2];
  double span = times[n - 1] - times[0];
  return {0.5 * spacing, 0.5 * span};
}

XHyperFit fit_x_hyperparams(const Eigen::VectorXd& times, const Eigen::VectorXd& y, double nu,
                            Phi2Bounds bounds) {
  if (times.size() != y.size()) throw DomainError("fit_x_hyperparams: size mismatch");
  if (bounds.lo == 0.0 && bounds.hi == 0.0) bounds = default_phi2_bounds(times);
  XHyperFit out;
  out.mean = y.mean();
  Eigen::VectorXd r = y.array() - out.mean;
  MarginalFit mf = fit_marginal(times, r, nu, bounds);
  if (!mf.success) throw FitError("fit_x_hyperparams: no start converged to a finite optimum");
  out.kernel = mf.kernel;
  out.sigma = mf.noise;
  out.loglik = mf.loglik;
  out.success = true;
  return out;
}

ThetaHyperFit fit_theta_hyperparams(const Eigen::VectorXd& theta_tilde,
                                    const Eigen::VectorXd& grid, double mu_theta,
                                    Phi2Bounds bounds, double nu) {
  if (theta_tilde.size() != grid.size()) throw DomainError("fit_theta_hyperparams: size mismatch");
  Eigen::VectorXd r = theta_tilde.array() - mu_theta;
  double scale = std::max(1.0, std::fabs(mu_theta));
  if (std::sqrt(r.squaredNorm() / std::max<int>(1, r.size())) < 1e-10 * scale)
    throw FitError("fit_theta_hyperparams: point-wise estimates are degenerate at the prior mean");
  MarginalFit mf = fit_marginal(grid, r, nu, bounds);
  if (!mf.success)
    throw FitError("fit_theta_hyperparams: no start converged to a finite optimum");
  ThetaHyperFit out;
  out.kernel = mf.kernel;
  out.delta = mf.noise;
  out.loglik = mf.loglik;
  out.bounds = bounds;
  return out;
}

}  // namespace tvmagi
