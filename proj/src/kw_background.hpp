#pragma once
// Pointwise pieces of the closed-form pole background.
//
// Per pole with multiplicity m at (s0, t0), with y = 2(cosh sig - cos tau),
// sig = 2pi(s - s0), tau = 2pi(t - t0), and G = log1p(y / 2pi) / 2pi:
//   u0 = m [ ln y + ln(G / y) - ln(1 + G^2) / 2 ]
// which is 2m ln|z - z0| + smooth near the pole and decays like -1/(2G^2).

#include "cylvortex/kw.hpp"

namespace cylvortex::detail {

struct PoleTerms {
  double u0 = 0;       // -inf at the pole
  double weight = 1;   // e^{u0}
  double defect = 0;   // Laplacian of u0 off the pole
  double psi_s = 0;    // d/ds of u0/2 - m ln|e^{2pi(z - z0)} - 1|
  double psi_t = 0;    // d/dt of the same (smooth through the pole)
};

PoleTerms pole_terms(const Vortex& p, double s, double t);
PoleTerms background_terms(const VortexSet& vs, double s, double t);

}  // namespace cylvortex::detail

namespace cylvortex::detail {
// Second t-derivative of the smooth phase potential; its s-second derivative
// follows from the Laplacian identity (Laplacian = defect / 2).
double psi_tt(const VortexSet& vs, double s, double t);
}  // namespace cylvortex::detail
