#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace tvmagi {

// objective: returns value, writes gradient
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int max_iters = 1000;
  double tol = 1e-10;      // objective-change stall tolerance
  int stall_window = 50;   // consecutive stalled iterations before stopping
  bool record_trace = false;
};

struct AdamResult {
  Eigen::VectorXd x;       // best-seen iterate
  double value = 0.0;      // objective at best-seen
  int iters = 0;           // gradient steps taken
  bool aborted_nonfinite = false;
  std::vector<double> trace;
};

// Deterministic Adam with bias correction. Stops at max_iters, or once the
// objective change stays below tol for stall_window consecutive iterations,
// or aborts at the first non-finite objective/gradient keeping the best
// iterate seen so far.
AdamResult adam_minimize(const Objective& f, const Eigen::VectorXd& x0, const AdamConfig& cfg);

}  // namespace tvmagi
