#pragma once

namespace tvmagi {

// Modified Bessel function of the second kind K_nu(z), real order, z > 0.
// Series expansion for z <= 2, continued fraction for z > 2, upward order
// recurrence K_{mu+1}(z) = K_{mu-1}(z) + (2 mu / z) K_mu(z).
// Symmetric in the order: K_{-nu} = K_nu. Throws DomainError for z <= 0 or
// non-finite inputs.
double bessel_k(double nu, double z);

}  // namespace tvmagi
