#pragma once
// Lagrange multiplier functionals F(x, v*) = f(x) + v*.h(x) on R^n x R^k, the
// tube/cutoff/warped-metric homotopy F_r, flow lines, Hessian indices, a
// Palais-Smale probe, and the Hopf system of the one-vortex model.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cylvortex/core.hpp"

namespace cylvortex {

struct ConstrainedSystem {
  std::string name;
  int n = 0, k = 0;
  std::function<double(const RVec&)> f;
  std::function<RVec(const RVec&)> grad_f;
  std::function<RMat(const RVec&)> hess_f;
  std::function<RVec(const RVec&)> h;
  std::function<RMat(const RVec&)> jac_h;                // k x n
  std::function<std::vector<RMat>(const RVec&)> hess_h;  // k matrices n x n
  // metric on R^n; empty means Euclidean
  std::function<RMat(const RVec&)> metric;
  bool constant_metric = true;
  // optional closed-form tube chart phi(x, v) and its projection with Jacobian
  std::function<RVec(const RVec&, const RVec&)> chart;
  std::function<RVec(const RVec&)> chart_proj;
  std::function<RMat(const RVec&)> chart_proj_jac;
  // sample points of h^{-1}(0)
  std::vector<RVec> constraint_samples;

  RMat metric_at(const RVec& x) const;
  // smallest singular value of Dh(x)
  double regularity(const RVec& x) const;
  // max f - min f over the samples
  double energy_constant() const;
  // throws if Dh degenerates at a sample
  void validate() const;
};

struct LagrangeState {
  RVec x;
  RVec vstar;
};

struct HomotopyParams {
  double delta = 0.5;
  double kappa = 0;
  // kappa = 32 C / delta^2
  static HomotopyParams for_system(const ConstrainedSystem& sys, double delta);
  void validate(const ConstrainedSystem& sys) const;
};

double smoothstep_cutoff(double rho, double delta);   // 1 on [0, d/2], 0 on [3d/4, inf)
double smoothstep_cutoff_d(double rho, double delta);

class TubeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// phi(x, v): flow of xi_v (Dh xi_v = v, xi_v normal in g_M) for unit time from x.
class TubularMap {
 public:
  TubularMap(const ConstrainedSystem& sys, double delta, int steps = 32);
  RVec xi(const RVec& y, const RVec& v) const;
  RMat xi_jac(const RVec& y, const RVec& v) const;  // d xi / dy
  RVec phi(const RVec& x, const RVec& v) const;
  // P(y) = pi_1 phi^{-1}(y), with DP when requested
  RVec project(const RVec& y, RMat* jac = nullptr) const;
  double delta() const { return delta_; }

 private:
  const ConstrainedSystem& sys_;
  double delta_;
  int steps_;
};

struct FrEval {
  double value = 0;
  RVec dx;  // differential of F_r in x
  RVec dv;  // = h(x)
  RMat g;   // g_{M,r}(x)
};

class Homotopy {
 public:
  Homotopy(const ConstrainedSystem& sys, const HomotopyParams& params, int tube_steps = 32);
  const ConstrainedSystem& system() const { return sys_; }
  const HomotopyParams& params() const { return params_; }
  const TubularMap& tube() const { return tube_; }

  double f_r(const RVec& x, double r) const;
  RVec df_r(const RVec& x, double r) const;
  RMat metric_r(const RVec& x, double r) const;
  double F_r(const LagrangeState& s, double r) const;
  FrEval eval(const LagrangeState& s, double r, bool with_metric = true) const;
  RMat hess_f_r(const RVec& x, double r) const;

 private:
  const ConstrainedSystem& sys_;
  HomotopyParams params_;
  TubularMap tube_;
};

struct LagrangeGrad {
  RVec x;  // g_{M,r}^{-1} (df_r + Dh^T v*)
  RVec v;  // h(x)
};
LagrangeGrad lagrange_grad(const Homotopy& hom, const LagrangeState& s, double r);
// g_r-norm squared of the gradient, dF^T g_r^{-1} dF
double lagrange_grad_norm2(const Homotopy& hom, const LagrangeState& s, double r);

enum class FlowStatus { Converged, MaxTime, Diverged };

struct MorseFlowOptions {
  double s_max = 20;
  double box = 1e3;  // |x|, |v*| guard
  int sample_every = 1;
};

struct MorseTrajectory {
  std::vector<double> s;
  std::vector<LagrangeState> states;
  std::vector<double> action;
  std::vector<double> grad_norm;
  std::vector<double> tube;  // |h(x)|
  FlowStatus status = FlowStatus::MaxTime;
  std::string message;
};

// RK4 on the negative g_r-gradient of F_r.
MorseTrajectory integrate_flow_line(const Homotopy& hom, double r, const LagrangeState& init, double ds,
                                    double stop_tol, const MorseFlowOptions& opts = MorseFlowOptions{});

struct NormalFormTrajectory {
  std::vector<double> s;
  std::vector<RVec> q, w, vstar;
};
// w = w0 e^{s/sqrt(kappa)} + w1 e^{-s/sqrt(kappa)}, v* = -kappa dw/ds; q follows
// the negative gradient of the restricted function (RK4).
NormalFormTrajectory normal_form_flow(double kappa, const RVec& q0, const RVec& w0, const RVec& w1,
                                      const std::function<RVec(const RVec&)>& grad_f_restricted,
                                      double s_end, double ds);

struct HessianIndex {
  RMat matrix;
  RVec eigenvalues;
  int index = 0;
  int kernel_dim = 0;
  bool ambiguous = false;  // an eigenvalue in (1e-8, 1e-6) in modulus
};
HessianIndex hessian_index(const Homotopy& hom, const LagrangeState& s, double r);
// plain symmetric-matrix inertia with the same thresholds
HessianIndex matrix_inertia(const RMat& m);

struct PSProbeReport {
  std::vector<double> r_values;
  std::vector<double> radius;   // per r: smallest certified K0 radius (NaN if none)
  std::vector<double> epsilon;  // per r: min ratio outside that K0
  double K0_radius = 0;         // max over r
  double epsilon_estimate = 0;  // min over r
  bool certified = false;
};
PSProbeReport palais_smale_probe(const Homotopy& hom, const std::vector<double>& radius_schedule,
                                 unsigned seed = 7, int samples = 400,
                                 const std::vector<double>& r_values = {0, 0.25, 0.5, 0.75, 1});

// --- fixtures ---

struct HopfReference {
  // Hopf projection (2 z1 conj z2, |z1|^2 - |z2|^2) as (Re, Im, height)
  static Eigen::Vector3d hopf(const RVec& x);
  // T^2 action (e^{i a} z1, e^{i (a + b)} z2)
  static RVec rotate(const RVec& x, double a, double b);
};
// f = -pi |z2|^2, h = (1 - |z1|^2 - |z2|^2)/2 on R^4 = C^2
ConstrainedSystem hopf_example();
// f(x) = x^T Q x / 2, h(x) = A x
ConstrainedSystem quadratic_system(const RMat& Q, const RMat& A);
// h = |x|^2 - 1 on R^2, f = x_2
ConstrainedSystem circle_system();
// flat chart: q in R^m, w in R^k, h(q, w) = w, f = f_q(q)
ConstrainedSystem flat_system(int m, int k, std::function<double(const RVec&)> fq,
                              std::function<RVec(const RVec&)> grad_fq, std::function<RMat(const RVec&)> hess_fq);
// ellipsoid constraint with a position-dependent metric
ConstrainedSystem warped_sphere_system();

struct ModuliReport {
  int count = 0;
  int trajectories = 0;
  int unconverged = 0;
  std::vector<int> class_sizes;
  double max_intra_distance = 0;
  double threshold = 0;
};
// Flow lines of F_1 from a mesh near the max circle to the min circle, counted
// modulo T^2 and s-shift.
ModuliReport moduli_count_hopf(const HomotopyParams& params, double rot_a = 0, double rot_b = 0,
                               int mesh = 4, double ds = 0.01);

}  // namespace cylvortex
