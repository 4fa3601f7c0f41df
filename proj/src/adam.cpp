#include "tvmagi/adam.hpp"

#include <cmath>

namespace tvmagi {

AdamResult adam_minimize(const Objective& f, const Eigen::VectorXd& x0, const AdamConfig& cfg) {
  AdamResult res;
  const auto n = x0.size();
  Eigen::VectorXd x = x0, g(n);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n), v = Eigen::VectorXd::Zero(n);

  double fx = f(x, g);
  res.x = x;
  res.value = fx;
  if (cfg.record_trace) res.trace.push_back(fx);
  if (!std::isfinite(fx) || !g.allFinite()) {
    res.aborted_nonfinite = true;
    return res;
  }

  double prev = fx;
  int stall = 0;
  double b1p = 1.0, b2p = 1.0;
  for (int it = 1; it <= cfg.max_iters; it++) {
    b1p *= cfg.beta1;
    b2p *= cfg.beta2;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v.array().matrix() + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    double mc = 1.0 / (1.0 - b1p), vc = 1.0 / (1.0 - b2p);
    x -= cfg.lr * (m * mc).cwiseQuotient(((v * vc).cwiseSqrt().array() + cfg.eps).matrix());

    fx = f(x, g);
    res.iters = it;
    if (cfg.record_trace) res.trace.push_back(fx);
    if (!std::isfinite(fx) || !g.allFinite()) {
      res.aborted_nonfinite = true;
      return res;
    }
    if (fx < res.value) {
      res.value = fx;
      res.x = x;
    }
    // stall counting starts once two post-step values exist
    if (it >= 2) {
      if (std::fabs(fx - prev) < cfg.tol) {
        if (++stall >= cfg.stall_window) break;
      } else {
        stall = 0;
      }
    }
    prev = fx;
  }
  return res;
}

}  // namespace tvmagi
