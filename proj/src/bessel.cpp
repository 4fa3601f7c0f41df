#include "tvmagi/bessel.hpp"

#include <cmath>
#include <string>

#include "tvmagi/errors.hpp"

namespace tvmagi {

namespace {

constexpr double kPi = 3.141592653589793238462643383280;
constexpr double kEps = 1e-16;
constexpr int kMaxIter = 20000;

// gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu), gam2 = the average,
// gampl = 1/Gamma(1+mu), gammi = 1/Gamma(1-mu); |mu| <= 1/2.
void reciprocal_gamma_terms(double mu, double& gam1, double& gam2, double& gampl, double& gammi) {
  gampl = 1.0 / std::tgamma(1.0 + mu);
  gammi = 1.0 / std::tgamma(1.0 - mu);
  if (std::fabs(mu) < 1e-4) {
    // series for the cancellation-prone difference quotient:
    // 1/Gamma(1+mu) = 1 + g mu + a2 mu^2 + a3 mu^3 + ..., g = Euler's constant
    const double g = 0.57721566490153286060651209;
    const double a3 = g * g * g / 6.0 - g * kPi * kPi / 12.0 + 0.40068563438653142847;  // zeta(3)/3 term
    gam1 = -g - a3 * mu * mu;
  } else {
    gam1 = (gammi - gampl) / (2.0 * mu);
  }
  gam2 = 0.5 * (gammi + gampl);
}

// K_mu(x) and K_{mu+1}(x) for |mu| <= 1/2, 0 < x <= 2, by the small-x series.
void bessel_k_small(double x, double mu, double& kmu, double& kmup1) {
  double mu2 = mu * mu;
  double x2 = 0.5 * x;
  double pimu = kPi * mu;
  double fact = (std::fabs(pimu) < kEps) ? 1.0 : pimu / std::sin(pimu);
  double d = -std::log(x2);
  double e = mu * d;
  double fact2 = (std::fabs(e) < kEps) ? 1.0 : std::sinh(e) / e;
  double gam1, gam2, gampl, gammi;
  reciprocal_gamma_terms(mu, gam1, gam2, gampl, gammi);
  double ff = fact * (gam1 * std::cosh(e) + gam2 * fact2 * d);
  double sum = ff;
  e = std::exp(e);
  double p = 0.5 * e / gampl;
  double q = 0.5 / (e * gammi);
  double c = 1.0;
  d = x2 * x2;
  double sum1 = p;
  int i = 1;
  for (; i <= kMaxIter; i++) {
    ff = (i * ff + p + q) / (i * i - mu2);
    c *= d / i;
    p /= (i - mu);
    q /= (i + mu);
    double del = c * ff;
    sum += del;
    double del1 = c * (p - i * ff);
    sum1 += del1;
    if (std::fabs(del) < std::fabs(sum) * kEps) break;
  }
  if (i > kMaxIter) throw NonFiniteError("bessel_k series failed to converge");
  kmu = sum;
  kmup1 = sum1 * 2.0 / x;
}

// K_mu(x) and K_{mu+1}(x) for |mu| <= 1/2, x > 2, by Steed's continued
// fraction with the Thompson-Barnett sum for the normalization.
void bessel_k_large(double x, double mu, double& kmu, double& kmup1) {
  double mu2 = mu * mu;
  double b = 2.0 * (1.0 + x);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  double a1 = 0.25 - mu2;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  int i = 2;
  for (; i <= kMaxIter; i++) {
    a -= 2 * (i - 1);
    c = -a * c / i;
    double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    double dels = q * delh;
    s += dels;
    if (std::fabs(dels / s) < kEps) break;
  }
  if (i > kMaxIter) throw NonFiniteError("bessel_k continued fraction failed to converge");
  h = a1 * h;
  kmu = std::sqrt(kPi / (2.0 * x)) * std::exp(-x) / s;
  kmup1 = kmu * (mu + x + 0.5 - h) / x;
}

}  // namespace

double bessel_k(double nu, double z) {
  if (!std::isfinite(nu) || !std::isfinite(z)) throw DomainError("bessel_k: non-finite input");
  if (z <= 0.0) throw DomainError("bessel_k: requires z > 0, got z=" + std::to_string(z));
  nu = std::fabs(nu);  // K_{-nu} = K_nu
  int nl = static_cast<int>(nu + 0.5);
  double mu = nu - nl;  // |mu| <= 1/2
  double kmu, kp1;
  if (z <= 2.0) {
    bessel_k_small(z, mu, kmu, kp1);
  } else {
    bessel_k_large(z, mu, kmu, kp1);
  }
  for (int i = 1; i <= nl; i++) {
    double knext = (mu + i) * (2.0 / z) * kp1 + kmu;
    kmu = kp1;
    kp1 = knext;
  }
  return kmu;
}

}  // namespace tvmagi
