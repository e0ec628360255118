#pragma once
// Loops on the circle R/Z, fields on the truncated cylinder, and the action
// functional with its moment-map term.

#include <Eigen/Dense>
#include <complex>
#include <string>
#include <utility>
#include <vector>

namespace cylvortex {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using RMat = Eigen::MatrixXd;

// Real coefficient a of a Lie algebra element a*i in iR.
using LieValue = double;

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// --- spectral helpers on the uniform periodic grid t_j = j / n ---

// Signed wavenumber of FFT slot j; the Nyquist slot maps to n/2.
int wavenumber(int j, int n);
bool is_nyquist(int j, int n);

// c_k = (1/n) sum_j x_j e^{-2 pi i k t_j}, FFT slot order.
CVec to_modes(const CVec& x);
CVec from_modes(const CVec& c);
CVec to_modes(const RVec& x);
RVec real_from_modes(const CVec& c);

// Spectral d/dt with the Nyquist mode dropped.
CVec dt_spectral(const CVec& x);
RVec dt_spectral(const RVec& x);
// Mean-zero y with dy/dt = x - mean(x).
RVec antiderivative(const RVec& x);
// x(t + tau), band-limited interpolation; Nyquist mode weighted by cos.
CVec shift_periodic(const CVec& x, double tau);
RVec shift_periodic(const RVec& x, double tau);

// Discrete L2 pairing dt * sum Re(conj(a) b).
double l2_inner(const CVec& a, const CVec& b);
double l2_inner(const RVec& a, const RVec& b);

// --- loops ---

// A point (v, eta) of the loop space. Both the grid samples and the Fourier
// coefficients of v are held; they are synchronized at construction.
class LoopConfig {
 public:
  LoopConfig() = default;
  explicit LoopConfig(int n_t);
  static LoopConfig from_grid(CVec v, RVec eta);
  static LoopConfig from_modes(const CVec& v_modes, RVec eta);

  int n_t() const { return static_cast<int>(v_.size()); }
  const CVec& v() const { return v_; }
  const CVec& modes() const { return modes_; }
  const RVec& eta() const { return eta_; }
  // coefficient of e^{2 pi i k t}; zero outside the representable band
  cplx mode(int k) const;
  double t(int j) const { return static_cast<double>(j) / n_t(); }
  double eta_bar() const { return eta_.mean(); }

 private:
  CVec v_, modes_;
  RVec eta_;
};

struct CriticalLoop {
  int m = 0;
  cplx v0 = 1.0;
  // (v0 e^{2 pi i m t}, eta = -2 pi m)
  LoopConfig loop(int n_t = 64) const;
};

// Flow line / vortex candidate on [s_min, s_max] x R/Z.
struct CylinderField {
  double s_min = -8, s_max = 8;
  int n_s = 0, n_t = 0;
  CMat v;    // n_s x n_t
  RMat eta;  // n_s x n_t

  CylinderField() = default;
  CylinderField(double s_min, double s_max, int n_s, int n_t);
  double ds() const { return (s_max - s_min) / (n_s - 1); }
  double dt() const { return 1.0 / n_t; }
  double s(int i) const { return s_min + i * ds(); }
  double t(int j) const { return static_cast<double>(j) / n_t; }
  LoopConfig slice(int i) const;
  void set_slice(int i, const LoopConfig& c);
};

// --- functionals ---

LieValue moment_map(cplx z);
RVec moment_map(const CVec& v);

// -pi sum_k k |v_k|^2
double floer_action(const LoopConfig& cfg);
// A_fl(v) + int < r mu(v) + (1-r) mean(mu), eta > dt
double action(const LoopConfig& cfg, double r = 1.0);

struct LoopTangent {
  CVec v;
  RVec eta;
};
LoopTangent operator+(const LoopTangent& a, const LoopTangent& b);
LoopTangent operator*(double c, const LoopTangent& a);
double l2_inner(const LoopTangent& a, const LoopTangent& b);
double l2_norm(const LoopTangent& a);

// L2 gradient of action(., r): (i dt v - (r eta + (1-r) eta_bar) v, r mu + (1-r) mu_bar)
LoopTangent action_gradient(const LoopConfig& cfg, double r = 1.0);

// (h v, eta - Im(conj(h) dt h)); throws std::invalid_argument if |h| != 1.
LoopConfig gauge_transform(const CVec& h, const LoopConfig& cfg);

struct CoulombResult {
  LoopConfig cfg;
  CVec h;
  RVec xi;  // h = exp(i xi)
};
CoulombResult coulomb_project(const LoopConfig& cfg);

struct EnergyReport {
  double energy = 0;      // A(start) - A(end)
  double flux = 0;        // energy / pi
  double grad_start = 0;  // L2 gradient norms at the ends
  double grad_end = 0;
  bool converged = false;
};
// samples ordered by increasing s
EnergyReport energy(const std::vector<std::pair<double, LoopConfig>>& samples, double r = 1.0,
                    double conv_tol = 1e-6);

// e^{i theta1} v(t + theta2 / 2pi), eta likewise shifted
LoopConfig t2_rotate(const LoopConfig& cfg, double theta1, double theta2);

// --- serialization ---
std::string loop_to_json(const LoopConfig& cfg);
LoopConfig loop_from_json(const std::string& text);
void write_field_csv(const CylinderField& f, const std::string& csv_path,
                     const std::string& meta_path);
CylinderField read_field_csv(const std::string& csv_path, const std::string& meta_path);

}  // namespace cylvortex
