#include "tvmagi/matern.hpp"

#include <cmath>
#include <string>

#include "tvmagi/bessel.hpp"
#include "tvmagi/errors.hpp"

namespace tvmagi {

namespace {

void check_cfg(const KernelConfig& cfg) {
  if (!(cfg.phi1 > 0.0) || !(cfg.phi2 > 0.0) || !(cfg.nu > 0.0))
    throw DomainError("matern: phi1, phi2, nu must be positive");
}

double front_const(const KernelConfig& cfg) {
  return cfg.phi1 * cfg.phi1 * std::pow(2.0, 1.0 - cfg.nu) / std::tgamma(cfg.nu);
}

}  // namespace

double matern_cov(const KernelConfig& cfg, double l) {
  check_cfg(cfg);
  l = std::fabs(l);
  if (l == 0.0) return cfg.phi1 * cfg.phi1;
  double z = std::sqrt(2.0 * cfg.nu) * l / cfg.phi2;
  double v = front_const(cfg) * std::pow(z, cfg.nu) * bessel_k(cfg.nu, z);
  // far tail underflows to zero covariance, which is the right limit
  return std::isfinite(v) ? v : 0.0;
}

double matern_cov_dphi2(const KernelConfig& cfg, double l) {
  check_cfg(cfg);
  l = std::fabs(l);
  if (l == 0.0) return 0.0;
  double z = std::sqrt(2.0 * cfg.nu) * l / cfg.phi2;
  double v = front_const(cfg) * std::pow(z, cfg.nu + 1.0) * bessel_k(cfg.nu - 1.0, z) / cfg.phi2;
  return std::isfinite(v) ? v : 0.0;
}

KernelDerivs matern_cov_derivs(const KernelConfig& cfg, double s, double t) {
  check_cfg(cfg);
  if (cfg.nu <= 1.0)
    throw DomainError("matern_cov_derivs: needs nu > 1, got nu=" + std::to_string(cfg.nu));
  KernelDerivs out;
  double l = std::fabs(s - t);
  double sq2nu = std::sqrt(2.0 * cfg.nu);
  if (l == 0.0) {
    out.k = cfg.phi1 * cfg.phi1;
    out.dk_ds = 0.0;
    out.dk_dt = 0.0;
    out.d2k_dsdt = cfg.phi1 * cfg.phi1 * cfg.nu / ((cfg.nu - 1.0) * cfg.phi2 * cfg.phi2);
    return out;
  }
  double z = sq2nu * l / cfg.phi2;
  double a = front_const(cfg);
  double knu = bessel_k(cfg.nu, z);
  double knum1 = bessel_k(cfg.nu - 1.0, z);
  double knum2 = bessel_k(std::fabs(cfg.nu - 2.0), z);
  double zp = std::pow(z, cfg.nu);
  out.k = a * zp * knu;
  // d/dz [z^nu K_nu(z)] = -z^nu K_{nu-1}(z)
  double sgn = (s > t) ? 1.0 : -1.0;
  out.dk_ds = -a * zp * knum1 * sq2nu / cfg.phi2 * sgn;
  out.dk_dt = -out.dk_ds;
  out.d2k_dsdt = (2.0 * cfg.nu / (cfg.phi2 * cfg.phi2)) * a * std::pow(z, cfg.nu - 1.0) *
                 (knum1 - z * knum2);
  if (!std::isfinite(out.k)) out.k = 0.0;
  if (!std::isfinite(out.dk_ds)) { out.dk_ds = 0.0; out.dk_dt = 0.0; }
  if (!std::isfinite(out.d2k_dsdt)) out.d2k_dsdt = 0.0;
  return out;
}

GramBundle build_gram(const KernelConfig& cfg, const Eigen::VectorXd& grid, double jitter) {
  check_cfg(cfg);
  const int n = static_cast<int>(grid.size());
  if (n == 0) throw DomainError("build_gram: empty grid");
  GramBundle g;
  g.grid = grid;
  g.cfg = cfg;
  g.k.resize(n, n);
  g.k_ds.resize(n, n);
  g.k_dt.resize(n, n);
  g.k_dsdt.resize(n, n);

  // uniform grids produce Toeplitz sections, so one row of kernel
  // evaluations is enough
  bool uniform = n >= 3;
  double step = (n >= 2) ? grid[1] - grid[0] : 0.0;
  double span = std::fabs(grid[n - 1] - grid[0]);
  for (int i = 2; i < n && uniform; i++) {
    if (std::fabs((grid[i] - grid[i - 1]) - step) > 1e-9 * std::max(1.0, span)) uniform = false;
  }
  if (uniform && step > 0.0) {
    std::vector<KernelDerivs> row(n);
    for (int d = 0; d < n; d++) row[d] = matern_cov_derivs(cfg, grid[0] + step * d, grid[0]);
    for (int i = 0; i < n; i++) {
      for (int j = 0; j < n; j++) {
        int d = std::abs(i - j);
        const KernelDerivs& kd = row[d];
        g.k(i, j) = kd.k;
        g.k_ds(i, j) = (i >= j) ? kd.dk_ds : -kd.dk_ds;
        g.k_dsdt(i, j) = kd.d2k_dsdt;
      }
    }
  } else {
    for (int i = 0; i < n; i++) {
      for (int j = 0; j <= i; j++) {
        KernelDerivs kd = matern_cov_derivs(cfg, grid[i], grid[j]);
        g.k(i, j) = kd.k;
        g.k(j, i) = kd.k;
        g.k_ds(i, j) = kd.dk_ds;
        g.k_ds(j, i) = -kd.dk_ds;
        g.k_dsdt(i, j) = kd.d2k_dsdt;
        g.k_dsdt(j, i) = kd.d2k_dsdt;
      }
    }
  }
  g.k_dt = g.k_ds.transpose();

  g.jitter_abs = jitter * g.k.diagonal().mean();
  g.k.diagonal().array() += g.jitter_abs;

  g.chol_k.compute(g.k);
  if (g.chol_k.info() != Eigen::Success)
    throw FactorizationError("build_gram: kernel matrix factorization failed");

  // Schur complement k_dsdt - k_ds k^{-1} k_dt via triangular solves
  Eigen::MatrixXd w = g.chol_k.matrixL().solve(g.k_dt);
  g.cond_cov = g.k_dsdt - w.transpose() * w;
  g.cond_cov = 0.5 * (g.cond_cov + g.cond_cov.transpose()).eval();
  g.deriv_gain = g.chol_k.solve(g.k_dt).transpose();

  Eigen::MatrixXd cj = g.cond_cov;
  cj.diagonal().array() += g.jitter_abs;
  g.chol_cond.compute(cj);
  if (g.chol_cond.info() != Eigen::Success)
    throw FactorizationError("build_gram: conditional covariance factorization failed");

  auto logdet = [](const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  };
  g.logdet_k = logdet(g.chol_k);
  g.logdet_cond = logdet(g.chol_cond);
  return g;
}

}  // namespace tvmagi
