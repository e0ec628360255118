#pragma once
// Gradient flows of the action on the loop space, the Fourier window
// reduction and the per-mode ODE, plus empirical checks along trajectories.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cylvortex/core.hpp"

namespace cylvortex {

enum class FlowTag { FULL_L2, COULOMB_G0, HOMOTOPY_GR, AR_L2, WARPED };

struct FlowVariant {
  FlowTag tag = FlowTag::FULL_L2;
  double r = 1.0;

  static FlowVariant full() { return {FlowTag::FULL_L2, 1.0}; }
  static FlowVariant coulomb() { return {FlowTag::COULOMB_G0, 0.0}; }
  static FlowVariant homotopy(double r) { return {FlowTag::HOMOTOPY_GR, r}; }
  static FlowVariant ar(double r) { return {FlowTag::AR_L2, r}; }
  static FlowVariant warped() { return {FlowTag::WARPED, 1.0}; }
  static FlowVariant parse(const std::string& name, double r);
  std::string name() const;
  // eta stays t-constant along the flow
  bool coulomb_gauge() const { return tag == FlowTag::COULOMB_G0 || tag == FlowTag::HOMOTOPY_GR; }
  // the r at which `action` decreases along this flow
  double action_r() const { return tag == FlowTag::AR_L2 ? r : 1.0; }
};

// span{ e^{2 pi i j t} : mu <= j <= nu }
struct FourierWindow {
  int mu = 0, nu = 0;
  FourierWindow(int mu_, int nu_);
  bool contains(int k) const { return mu <= k && k <= nu; }
  // zero every FFT slot whose wavenumber is outside, Nyquist included
  CVec project(const CVec& modes) const;
  // sum of |v_k|^2 over k outside the window (equals the L2 norm squared of the remainder)
  double out_mass(const LoopConfig& cfg) const;
};

class FlowInstability : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FlowDiagnostics {
  double s = 0;
  double action = 0;
  double grad_norm = 0;    // L2 norm of the right-hand side
  double dissipation = 0;  // -dA/ds = -<grad A, rhs>
  double u = 0;            // (1/2) mean |v|^2
  double max_abs_v = 0;
  std::vector<double> mode_amp;  // |v_k| for k in [-kmax, kmax]
};

struct FlowTrajectory {
  std::vector<std::pair<double, LoopConfig>> samples;
  FlowVariant variant;
  std::vector<FlowDiagnostics> diagnostics;
  double ds = 0;
  int steps = 0;
  int rejections = 0;
  bool converged = false;
};

// Mean-zero x with dx/dt = r^2 (mu(v) - mean mu(v)).
RVec xi_v_solve(const CVec& v, double r);

// Right-hand side of d/ds (v, eta) = -grad A for the variant.
LoopTangent rhs(const LoopConfig& cfg, const FlowVariant& variant);

struct IntegrateOptions {
  std::optional<FourierWindow> window;  // Galerkin window; default is the full band
  int max_snapshots = 4096;
  int settle_steps = 10;  // consecutive steps below stop_tol
  int mode_diag_kmax = 4;
  double action_slack = 1e-9;
  int max_rejections = 40;
};

// Integrating-factor Heun stepping; exact for each Fourier mode at frozen eta_bar.
FlowTrajectory integrate(const LoopConfig& init, const FlowVariant& variant, double ds,
                         double s_max, double stop_tol = 1e-8,
                         const IntegrateOptions& opts = IntegrateOptions{});

// v_m exp((eta_bar + 2 pi m) ds)
cplx mode_ode_step(cplx v_m, int m, LieValue eta_bar, double ds);

// Winding read as the dominant Fourier mode; nullopt when no mode carries half the mass.
std::optional<int> dominant_mode(const LoopConfig& cfg);

struct ConfinementReport {
  double max_out_mass = 0;       // over all samples
  double terminal_out_mass = 0;  // at the last sample
  std::optional<int> m_start, m_end;
  bool pass = false;  // terminal_out_mass < tol
};
ConfinementReport check_mode_confinement(const FlowTrajectory& traj, const FourierWindow& window,
                                         double tol);

struct MaxPrincipleReport {
  double max_u = 0;
  double s_at_max = 0;
  bool pass = false;  // max_u <= 1/2 + 1e-6
};
MaxPrincipleReport max_principle_check(const FlowTrajectory& traj);

// Slices of a cylinder field as a trajectory; diagnostics filled in.
FlowTrajectory trajectory_from_field(const CylinderField& field, const FlowVariant& variant);

// meta.json, diagnostics.csv and snapshot_NNNNN.json in dir
void write_trajectory(const FlowTrajectory& traj, const std::string& dir);
// inverse of write_trajectory; diagnostics are recomputed
FlowTrajectory read_trajectory(const std::string& dir);

}  // namespace cylvortex
