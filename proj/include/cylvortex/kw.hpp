#pragma once
// Singular (integro-)Kazdan-Warner problem on the truncated cylinder and the
// maps between vortex fields, the scalar w = ln|v|^2, and zero sets.

#include <stdexcept>
#include <string>
#include <vector>

#include "cylvortex/core.hpp"
#include "cylvortex/flow.hpp"

namespace cylvortex {

struct Vortex {
  double s = 0, t = 0;
  int m = 1;
};

// Unordered points with multiplicity; t is reduced mod 1 and coincident
// points are merged.
class VortexSet {
 public:
  VortexSet() = default;
  explicit VortexSet(std::vector<Vortex> pts);
  const std::vector<Vortex>& points() const { return pts_; }
  int N() const;
  bool empty() const { return pts_.empty(); }
  double max_abs_s() const;
  // same multiset up to |ds| <= tol_s and periodic |dt| <= tol_t
  bool matches(const VortexSet& other, double tol_s, double tol_t) const;
  bool operator==(const VortexSet& o) const { return matches(o, 1e-12, 1e-12); }
  VortexSet translated(double sigma, double tau) const;

 private:
  std::vector<Vortex> pts_;
};

// Periodic distance on R/Z.
double circle_dist(double a, double b);

struct KWGrid {
  double s_min = -8, s_max = 8;
  int n_s = 129, n_t = 64;
  double ds() const { return (s_max - s_min) / (n_s - 1); }
  double dt() const { return 1.0 / n_t; }
  double s(int i) const { return s_min + i * ds(); }
  double t(int j) const { return static_cast<double>(j) / n_t; }
  // symmetric [-L, L] at `cells_per_8` s-cells per 8 units; L grows with N
  // because each unit of flux occupies about 4 pi of cylinder area
  static KWGrid for_vortices(const VortexSet& vs, int cells_per_8 = 64, int n_t = 64);
};

struct KWProblem {
  VortexSet vortices;
  double r = 1.0;
  KWGrid grid;
  // throws std::invalid_argument on bad r or vortices outside (s_min + 1, s_max - 1)
  void validate() const;
};

// u0 and its smooth defect D = Delta u0 + 4 pi sum m delta on a grid.
struct Background {
  RMat u0;      // -inf exactly at grid nodes that coincide with a pole
  RMat weight;  // e^{u0}
  RMat defect;
};
Background singular_background(const VortexSet& vs, const KWGrid& grid);

// Closed-form u0 at one point, and the smooth part pieces used by reconstruction.
double background_value(const VortexSet& vs, double s, double t);

// w = u0 + u. u is finite; the poles live in u0.
struct ScalarFieldW {
  KWGrid grid;
  VortexSet vortices;
  double r = 1.0;
  RMat u;
  RMat u0;
  RMat weight;  // e^{u0}
  RMat defect;
  int newton_iterations = 0;
  double residual = 0;
  bool coarse_grid_warning = false;

  RMat w() const { return u0 + u; }
  RMat exp_w() const { return weight.cwiseProduct(u.array().exp().matrix()); }
  bool singular(int i, int j) const { return weight(i, j) == 0.0; }
};

class KWSolveError : public std::runtime_error {
 public:
  KWSolveError(const std::string& what, bool integro) : std::runtime_error(what), integro_(integro) {}
  bool integro() const { return integro_; }

 private:
  bool integro_;
};

// Damped Newton on u with Dirichlet w = 0 at the s-ends. `initial_u` seeds the
// interior (boundary rows are always reset).
ScalarFieldW solve_kw(const KWProblem& problem, double tol = 1e-8, const RMat* initial_u = nullptr,
                      int max_iter = 50);

// Discrete interior residual of the u-equation, L2 over interior nodes.
double kw_residual(const ScalarFieldW& w);

struct KWReport {
  double residual = 0;
  double flux = 0;   // (1/4pi) int (1 - e^w)
  double decay = 0;  // max |w| on the end rows
  double max_w = 0;  // over non-singular nodes
  bool negative = true;
};
KWReport verify_kw(const ScalarFieldW& w, const KWProblem& problem);

struct UniquenessReport {
  double max_pairwise_diff = 0;
  std::vector<int> iterations;
  bool pass = false;
};
UniquenessReport uniqueness_probe(const KWProblem& problem, int trials, double tol = 1e-8,
                                  unsigned seed = 1);

// w = ln|v|^2; nodes with |v| < 1e-14 are poles.
ScalarFieldW T_map(const CylinderField& field);

class InconsistentField : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Zeros of v with multiplicity (winding on small grid loops).
VortexSet J_map(const CylinderField& field);
// Poles of w with multiplicity (normal flux of w around each pole).
VortexSet J_map(const ScalarFieldW& w);

enum class ReconGauge { Radial, Coulomb };

struct Reconstruction {
  CylinderField field;
  double residual = 0;  // discrete L2 residual of the flow equations
};
// Radial: (v, eta) solving the r = 1 flow with t-dependent eta.
// Coulomb: eta t-constant, solving the homotopy flow at the solve's r.
Reconstruction reconstruct_field(const ScalarFieldW& w, ReconGauge gauge);
// Throws InconsistentField if the residual exceeds 1e-3.
CylinderField reconstruct(const ScalarFieldW& w, const VortexSet& vortices,
                          ReconGauge gauge = ReconGauge::Radial);

// Flow line of the homotopy flow at r between windings 0 and N, as a trajectory.
FlowTrajectory connect_via_kw(const VortexSet& vortices, double r, double tol = 1e-8);

}  // namespace cylvortex
