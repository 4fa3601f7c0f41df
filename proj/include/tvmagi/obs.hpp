#pragma once

#include <Eigen/Dense>
#include <vector>

namespace tvmagi {

// per-component observation schedule and values, already on the scale the
// inference runs on
struct ObservationSet {
  std::vector<Eigen::VectorXd> times;
  std::vector<Eigen::VectorXd> values;

  int dim() const { return static_cast<int>(times.size()); }
  long total() const {
    long n = 0;
    for (const auto& t : times) n += t.size();
    return n;
  }
};

}  // namespace tvmagi
