#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "tvmagi/errors.hpp"

namespace tvmagi {

// piecewise-linear interpolant, clamped outside the knot range
class LinearInterp {
public:
  LinearInterp() = default;
  LinearInterp(Eigen::VectorXd x, Eigen::VectorXd y) : x_(std::move(x)), y_(std::move(y)) {
    if (x_.size() != y_.size() || x_.size() < 1) throw DomainError("LinearInterp: bad knots");
  }

  double operator()(double t) const {
    const auto n = x_.size();
    if (n == 1 || t <= x_[0]) return y_[0];
    if (t >= x_[n - 1]) return y_[n - 1];
    int lo = locate(t);
    double w = (t - x_[lo]) / (x_[lo + 1] - x_[lo]);
    return (1.0 - w) * y_[lo] + w * y_[lo + 1];
  }

private:
  int locate(double t) const {
    int lo = 0, hi = static_cast<int>(x_.size()) - 1;
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      (x_[mid] <= t ? lo : hi) = mid;
    }
    return lo;
  }
  Eigen::VectorXd x_, y_;
};

// monotone cubic interpolant with Fritsch-Carlson slope limiting, clamped
// outside the knot range
class Pchip {
public:
  Pchip() = default;
  Pchip(Eigen::VectorXd x, Eigen::VectorXd y) : x_(std::move(x)), y_(std::move(y)) {
    const auto n = x_.size();
    if (x_.size() != y_.size() || n < 2) throw DomainError("Pchip: bad knots");
    d_.resize(n);
    Eigen::VectorXd h(n - 1), s(n - 1);
    for (int i = 0; i + 1 < n; i++) {
      h[i] = x_[i + 1] - x_[i];
      if (!(h[i] > 0)) throw DomainError("Pchip: knots must increase");
      s[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    if (n == 2) {
      d_[0] = d_[1] = s[0];
    } else {
      d_[0] = edge_slope(h[0], h[1], s[0], s[1]);
      d_[n - 1] = edge_slope(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
      for (int i = 1; i + 1 < n; i++) {
        if (s[i - 1] * s[i] <= 0.0) {
          d_[i] = 0.0;
        } else {
          double w1 = 2.0 * h[i] + h[i - 1];
          double w2 = h[i] + 2.0 * h[i - 1];
          d_[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
        }
      }
    }
  }

  double operator()(double t) const {
    const auto n = x_.size();
    if (t <= x_[0]) return y_[0];
    if (t >= x_[n - 1]) return y_[n - 1];
    int lo = 0, hi = static_cast<int>(n) - 1;
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      (x_[mid] <= t ? lo : hi) = mid;
    }
    double h = x_[lo + 1] - x_[lo];
    double u = (t - x_[lo]) / h;
    double u2 = u * u, u3 = u2 * u;
    return y_[lo] * (2 * u3 - 3 * u2 + 1) + h * d_[lo] * (u3 - 2 * u2 + u) +
           y_[lo + 1] * (-2 * u3 + 3 * u2) + h * d_[lo + 1] * (u3 - u2);
  }

private:
  static double edge_slope(double h0, double h1, double s0, double s1) {
    double d = ((2 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if (d * s0 <= 0.0) return 0.0;
    if (s0 * s1 < 0.0 && std::fabs(d) > 3.0 * std::fabs(s0)) return 3.0 * s0;
    return d;
  }
  Eigen::VectorXd x_, y_, d_;
};

}  // namespace tvmagi
