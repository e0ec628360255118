#include "cylvortex/morse.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cylvortex {

namespace {

constexpr double kKernelTol = 1e-8;
constexpr double kAmbiguityTol = 1e-6;

RVec solve_spd(const RMat& g, const RVec& b) {
  Eigen::LDLT<RMat> ldlt(g);
  return ldlt.solve(b);
}

bool finite(const RVec& v) { return v.allFinite(); }

}  // namespace

// ---------------------------------------------------------------- system

RMat ConstrainedSystem::metric_at(const RVec& x) const {
  if (metric) return metric(x);
  return RMat::Identity(n, n);
}

double ConstrainedSystem::regularity(const RVec& x) const {
  Eigen::JacobiSVD<RMat> svd(jac_h(x));
  return svd.singularValues().minCoeff();
}

double ConstrainedSystem::energy_constant() const {
  if (constraint_samples.empty()) return 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& x : constraint_samples) {
    double v = f(x);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return hi - lo;
}

void ConstrainedSystem::validate() const {
  if (n <= 0 || k <= 0 || k > n) throw std::invalid_argument("ConstrainedSystem: bad dimensions");
  if (!f || !grad_f || !hess_f || !h || !jac_h || !hess_h)
    throw std::invalid_argument("ConstrainedSystem: missing evaluator");
  for (const auto& x : constraint_samples) {
    if (x.size() != n || !finite(x)) throw std::invalid_argument("ConstrainedSystem: bad sample");
    if (regularity(x) <= 1e-8) throw std::invalid_argument("ConstrainedSystem: 0 is not a regular value at a sample");
  }
}

HomotopyParams HomotopyParams::for_system(const ConstrainedSystem& sys, double delta) {
  if (!(delta > 0)) throw std::invalid_argument("HomotopyParams: delta must be positive");
  HomotopyParams p;
  p.delta = delta;
  double c = sys.energy_constant();
  p.kappa = c > 0 ? 32.0 * c / (delta * delta) : 1.0;
  return p;
}

void HomotopyParams::validate(const ConstrainedSystem& sys) const {
  if (!(delta > 0)) throw std::invalid_argument("HomotopyParams: delta must be positive");
  double c = sys.energy_constant();
  if (!(kappa > 16.0 * c / (delta * delta)) || !(kappa > 0))
    throw std::invalid_argument("HomotopyParams: kappa must exceed 16 C / delta^2");
}

double smoothstep_cutoff(double rho, double delta) {
  double a = 0.5 * delta, b = 0.75 * delta;
  if (rho <= a) return 1.0;
  if (rho >= b) return 0.0;
  double x = (rho - a) / (b - a);
  return 1.0 - x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
}

double smoothstep_cutoff_d(double rho, double delta) {
  double a = 0.5 * delta, b = 0.75 * delta;
  if (rho <= a || rho >= b) return 0.0;
  double x = (rho - a) / (b - a);
  return -30.0 * x * x * (1.0 - x) * (1.0 - x) / (b - a);
}

// ---------------------------------------------------------------- tube

TubularMap::TubularMap(const ConstrainedSystem& sys, double delta, int steps)
    : sys_(sys), delta_(delta), steps_(steps) {
  if (!(delta > 0)) throw std::invalid_argument("TubularMap: delta must be positive");
  if (steps < 1) throw std::invalid_argument("TubularMap: steps must be positive");
}

namespace {

struct XiParts {
  RMat ginv_jt;  // G^{-1} Dh^T
  RMat s_inv;    // (Dh G^{-1} Dh^T)^{-1}
  RMat jac;
  RMat g;
};

XiParts xi_parts(const ConstrainedSystem& sys, const RVec& y) {
  XiParts p;
  p.g = sys.metric_at(y);
  p.jac = sys.jac_h(y);
  Eigen::LDLT<RMat> gl(p.g);
  p.ginv_jt = gl.solve(p.jac.transpose());
  RMat s = p.jac * p.ginv_jt;
  Eigen::SelfAdjointEigenSolver<RMat> es(s);
  if (!y.allFinite() || !(es.eigenvalues().minCoeff() > 1e-16))
    throw TubeError("tubular map left the regular region; shrink delta");
  p.s_inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  return p;
}

}  // namespace

RVec TubularMap::xi(const RVec& y, const RVec& v) const {
  XiParts p = xi_parts(sys_, y);
  return p.ginv_jt * (p.s_inv * v);
}

RMat TubularMap::xi_jac(const RVec& y, const RVec& v) const {
  const int n = sys_.n;
  if (!sys_.constant_metric) {
    RMat d(n, n);
    const double eps = 1e-6;
    for (int j = 0; j < n; ++j) {
      RVec yp = y, ym = y;
      yp(j) += eps;
      ym(j) -= eps;
      d.col(j) = (xi(yp, v) - xi(ym, v)) / (2 * eps);
    }
    return d;
  }
  XiParts p = xi_parts(sys_, y);
  RVec a = p.s_inv * v;
  RVec x = p.ginv_jt * a;
  auto hs = sys_.hess_h(y);
  RMat A = RMat::Zero(n, n);
  RMat B(sys_.k, n);
  for (int i = 0; i < sys_.k; ++i) {
    A += a(i) * hs[i];
    B.row(i) = (hs[i] * x).transpose();
  }
  Eigen::LDLT<RMat> gl(p.g);
  RMat ginv_a = gl.solve(A);
  RMat m = B + p.jac * ginv_a;
  return ginv_a - p.ginv_jt * (p.s_inv * m);
}

RVec TubularMap::phi(const RVec& x, const RVec& v) const {
  if (sys_.chart) return sys_.chart(x, v);
  RVec z = x;
  const double hstep = 1.0 / steps_;
  for (int i = 0; i < steps_; ++i) {
    RVec k1 = xi(z, v);
    RVec k2 = xi(z + 0.5 * hstep * k1, v);
    RVec k3 = xi(z + 0.5 * hstep * k2, v);
    RVec k4 = xi(z + hstep * k3, v);
    z += hstep / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  if (!finite(z) || (sys_.h(z) - v).norm() > 1e-6 * std::max(1.0, v.norm()))
    throw TubeError("tubular map left the regular region; shrink delta");
  return z;
}

RVec TubularMap::project(const RVec& y, RMat* jac) const {
  if (sys_.chart_proj) {
    if (jac) *jac = sys_.chart_proj_jac(y);
    return sys_.chart_proj(y);
  }
  const int n = sys_.n;
  const RVec v = sys_.h(y);
  const RMat dv = sys_.jac_h(y);
  const double hstep = 1.0 / steps_;
  RVec z = y;
  RMat Z = RMat::Identity(n, n);
  // field F(z) = -xi_v(z); dF = -xi_jac dz - K dv with K = G^{-1}Dh^T S^{-1}
  auto stage = [&](const RVec& zi, const RMat& Zi, RVec& k, RMat& dk) {
    XiParts p = xi_parts(sys_, zi);
    RMat K = p.ginv_jt * p.s_inv;
    k = -(K * v);
    if (jac) dk = -(xi_jac(zi, v) * Zi) - K * dv;
  };
  RVec k1, k2, k3, k4;
  RMat d1, d2, d3, d4;
  for (int i = 0; i < steps_; ++i) {
    stage(z, Z, k1, d1);
    stage(z + 0.5 * hstep * k1, jac ? RMat(Z + 0.5 * hstep * d1) : Z, k2, d2);
    stage(z + 0.5 * hstep * k2, jac ? RMat(Z + 0.5 * hstep * d2) : Z, k3, d3);
    stage(z + hstep * k3, jac ? RMat(Z + hstep * d3) : Z, k4, d4);
    z += hstep / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    if (jac) Z += hstep / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4);
  }
  if (!finite(z) || sys_.h(z).norm() > 1e-6 * std::max(1.0, v.norm()))
    throw TubeError("projection left the regular region; shrink delta");
  if (jac) *jac = Z;
  return z;
}

// ---------------------------------------------------------------- homotopy

Homotopy::Homotopy(const ConstrainedSystem& sys, const HomotopyParams& params, int tube_steps)
    : sys_(sys), params_(params), tube_(sys, params.delta, tube_steps) {
  params_.validate(sys);
}

namespace {

struct TubeTerms {
  double beta = 0;
  RVec grad_beta;
  RVec p;    // projection
  RMat dp;   // its Jacobian
};

TubeTerms tube_terms(const Homotopy& hom, const RVec& x, bool with_jac) {
  const auto& sys = hom.system();
  TubeTerms t;
  RVec hx = sys.h(x);
  double rho = hx.norm();
  double delta = hom.params().delta;
  t.beta = smoothstep_cutoff(rho, delta);
  t.grad_beta = RVec::Zero(sys.n);
  if (t.beta == 0.0) return t;
  double db = smoothstep_cutoff_d(rho, delta);
  if (db != 0.0 && rho > 0) t.grad_beta = db * (sys.jac_h(x).transpose() * hx) / rho;
  t.p = hom.tube().project(x, with_jac ? &t.dp : nullptr);
  return t;
}

}  // namespace

double Homotopy::f_r(const RVec& x, double r) const {
  double f0 = sys_.f(x);
  if (r == 0) return f0;
  TubeTerms t = tube_terms(*this, x, false);
  double f1 = t.beta == 0 ? f0 : t.beta * sys_.f(t.p) + (1 - t.beta) * f0;
  return (1 - r) * f0 + r * f1;
}

RVec Homotopy::df_r(const RVec& x, double r) const {
  RVec g0 = sys_.grad_f(x);
  if (r == 0) return g0;
  TubeTerms t = tube_terms(*this, x, true);
  if (t.beta == 0) return g0;
  RVec g1 = t.beta * (t.dp.transpose() * sys_.grad_f(t.p)) + (1 - t.beta) * g0 +
            (sys_.f(t.p) - sys_.f(x)) * t.grad_beta;
  return (1 - r) * g0 + r * g1;
}

RMat Homotopy::metric_r(const RVec& x, double r) const {
  RMat g0 = sys_.metric_at(x);
  if (r == 0) return g0;
  TubeTerms t = tube_terms(*this, x, true);
  if (t.beta == 0) return g0;
  RMat j = sys_.jac_h(x);
  RMat g1 = t.beta * (t.dp.transpose() * sys_.metric_at(t.p) * t.dp + params_.kappa * j.transpose() * j) +
            (1 - t.beta) * g0;
  return (1 - r) * g0 + r * g1;
}

double Homotopy::F_r(const LagrangeState& s, double r) const { return f_r(s.x, r) + s.vstar.dot(sys_.h(s.x)); }

FrEval Homotopy::eval(const LagrangeState& s, double r, bool with_metric) const {
  FrEval e;
  const RVec& x = s.x;
  RVec hx = sys_.h(x);
  RMat j = sys_.jac_h(x);
  double f0 = sys_.f(x);
  RVec g0 = sys_.grad_f(x);
  RMat G = with_metric ? sys_.metric_at(x) : RMat();
  double fr = f0;
  RVec dfr = g0;
  RMat gr = G;
  if (r != 0) {
    TubeTerms t = tube_terms(*this, x, true);
    if (t.beta != 0) {
      double fp = sys_.f(t.p);
      double f1 = t.beta * fp + (1 - t.beta) * f0;
      RVec g1 = t.beta * (t.dp.transpose() * sys_.grad_f(t.p)) + (1 - t.beta) * g0 + (fp - f0) * t.grad_beta;
      fr = (1 - r) * f0 + r * f1;
      dfr = (1 - r) * g0 + r * g1;
      if (with_metric) {
        RMat m1 = t.beta * (t.dp.transpose() * sys_.metric_at(t.p) * t.dp + params_.kappa * j.transpose() * j) +
                  (1 - t.beta) * G;
        gr = (1 - r) * G + r * m1;
      }
    }
  }
  e.value = fr + s.vstar.dot(hx);
  e.dx = dfr + j.transpose() * s.vstar;
  e.dv = hx;
  e.g = gr;
  return e;
}

RMat Homotopy::hess_f_r(const RVec& x, double r) const {
  RMat h0 = sys_.hess_f(x);
  if (r == 0) return h0;
  const int n = sys_.n;
  const double eps = 1e-5;
  RMat d(n, n);
  for (int j = 0; j < n; ++j) {
    RVec xp = x, xm = x;
    xp(j) += eps;
    xm(j) -= eps;
    d.col(j) = (df_r(xp, r) - df_r(xm, r)) / (2 * eps);
  }
  return 0.5 * (d + d.transpose());
}

LagrangeGrad lagrange_grad(const Homotopy& hom, const LagrangeState& s, double r) {
  if (!(r >= 0 && r <= 1)) throw std::invalid_argument("lagrange_grad: r must lie in [0,1]");
  FrEval e = hom.eval(s, r);
  return {solve_spd(e.g, e.dx), e.dv};
}

double lagrange_grad_norm2(const Homotopy& hom, const LagrangeState& s, double r) {
  FrEval e = hom.eval(s, r);
  return e.dx.dot(solve_spd(e.g, e.dx)) + e.dv.squaredNorm();
}

// ---------------------------------------------------------------- flow lines

MorseTrajectory integrate_flow_line(const Homotopy& hom, double r, const LagrangeState& init, double ds,
                                    double stop_tol, const MorseFlowOptions& opts) {
  if (!(ds > 0)) throw std::invalid_argument("integrate_flow_line: ds must be positive");
  const int n = hom.system().n, k = hom.system().k;
  MorseTrajectory tr;
  auto split = [&](const RVec& z) { return LagrangeState{z.head(n), z.tail(k)}; };
  auto rhs = [&](const RVec& z) {
    LagrangeState st = split(z);
    FrEval e = hom.eval(st, r);
    RVec out(n + k);
    out.head(n) = -solve_spd(e.g, e.dx);
    out.tail(k) = -e.dv;
    return out;
  };
  auto record = [&](double s, const RVec& z) {
    LagrangeState st = split(z);
    FrEval e = hom.eval(st, r);
    double gn = std::sqrt(std::max(0.0, e.dx.dot(solve_spd(e.g, e.dx)) + e.dv.squaredNorm()));
    tr.s.push_back(s);
    tr.states.push_back(st);
    tr.action.push_back(e.value);
    tr.grad_norm.push_back(gn);
    tr.tube.push_back(e.dv.norm());
    return gn;
  };
  RVec z(n + k);
  z << init.x, init.vstar;
  double s = 0;
  double gn = record(s, z);
  long step = 0;
  while (true) {
    if (gn < stop_tol) {
      tr.status = FlowStatus::Converged;
      break;
    }
    if (s >= opts.s_max - 1e-12) {
      tr.status = FlowStatus::MaxTime;
      break;
    }
    RVec k1 = rhs(z);
    RVec k2 = rhs(z + 0.5 * ds * k1);
    RVec k3 = rhs(z + 0.5 * ds * k2);
    RVec k4 = rhs(z + ds * k3);
    z += ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    s += ds;
    ++step;
    if (!z.allFinite() || z.head(n).lpNorm<Eigen::Infinity>() > opts.box ||
        z.tail(k).lpNorm<Eigen::Infinity>() > opts.box) {
      std::ostringstream os;
      os << "left the compact box |.| <= " << opts.box << " at s = " << s << " (|x| = " << z.head(n).norm()
         << ", |v*| = " << z.tail(k).norm() << ")";
      tr.status = FlowStatus::Diverged;
      tr.message = os.str();
      if (z.allFinite()) record(s, z);
      break;
    }
    if (step % std::max(1, opts.sample_every) == 0) {
      gn = record(s, z);
    } else {
      LagrangeState st = split(z);
      gn = std::sqrt(std::max(0.0, lagrange_grad_norm2(hom, st, r)));
    }
  }
  if (tr.status != FlowStatus::Diverged && tr.s.back() != s) record(s, z);
  return tr;
}

NormalFormTrajectory normal_form_flow(double kappa, const RVec& q0, const RVec& w0, const RVec& w1,
                                      const std::function<RVec(const RVec&)>& grad_f_restricted, double s_end,
                                      double ds) {
  if (!(kappa > 0)) throw std::invalid_argument("normal_form_flow: kappa must be positive");
  if (!(ds > 0) || s_end < 0) throw std::invalid_argument("normal_form_flow: bad s grid");
  NormalFormTrajectory out;
  const double rk = std::sqrt(kappa);
  long steps = std::lround(s_end / ds);
  RVec q = q0;
  for (long i = 0; i <= steps; ++i) {
    double s = i * ds;
    double ep = std::exp(s / rk), em = std::exp(-s / rk);
    out.s.push_back(s);
    out.q.push_back(q);
    out.w.push_back(w0 * ep + w1 * em);
    out.vstar.push_back(-rk * (w0 * ep - w1 * em));
    if (i == steps) break;
    RVec k1 = -grad_f_restricted(q);
    RVec k2 = -grad_f_restricted(q + 0.5 * ds * k1);
    RVec k3 = -grad_f_restricted(q + 0.5 * ds * k2);
    RVec k4 = -grad_f_restricted(q + ds * k3);
    q += ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return out;
}

// ---------------------------------------------------------------- Hessians

HessianIndex matrix_inertia(const RMat& m) {
  HessianIndex out;
  out.matrix = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<RMat> es(out.matrix, Eigen::EigenvaluesOnly);
  out.eigenvalues = es.eigenvalues();
  for (int i = 0; i < out.eigenvalues.size(); ++i) {
    double a = std::abs(out.eigenvalues(i));
    if (a <= kKernelTol)
      ++out.kernel_dim;
    else if (out.eigenvalues(i) < 0)
      ++out.index;
    if (a > kKernelTol && a < kAmbiguityTol) out.ambiguous = true;
  }
  return out;
}

namespace {

RMat lagrange_hessian(const Homotopy& hom, const LagrangeState& s, double r) {
  const auto& sys = hom.system();
  const int n = sys.n, k = sys.k;
  RMat H = RMat::Zero(n + k, n + k);
  RMat top = hom.hess_f_r(s.x, r);
  auto hs = sys.hess_h(s.x);
  for (int i = 0; i < k; ++i) top += s.vstar(i) * hs[i];
  RMat j = sys.jac_h(s.x);
  H.topLeftCorner(n, n) = top;
  H.topRightCorner(n, k) = j.transpose();
  H.bottomLeftCorner(k, n) = j;
  return H;
}

}  // namespace

HessianIndex hessian_index(const Homotopy& hom, const LagrangeState& s, double r) {
  double gn = std::sqrt(std::max(0.0, lagrange_grad_norm2(hom, s, r)));
  if (!(gn < 1e-8)) {
    std::ostringstream os;
    os << "hessian_index: state is not critical (gradient norm " << gn << ")";
    throw std::invalid_argument(os.str());
  }
  return matrix_inertia(lagrange_hessian(hom, s, r));
}

// ---------------------------------------------------------------- Palais-Smale probe

PSProbeReport palais_smale_probe(const Homotopy& hom, const std::vector<double>& radius_schedule, unsigned seed,
                                 int samples, const std::vector<double>& r_values) {
  const auto& sys = hom.system();
  const int n = sys.n, k = sys.k;
  const double eps_floor = 1e-6;
  std::vector<double> radii = radius_schedule;
  std::sort(radii.begin(), radii.end());
  PSProbeReport rep;
  rep.r_values = r_values;
  rep.certified = !radii.empty();
  rep.epsilon_estimate = std::numeric_limits<double>::infinity();

  auto inside = [&](const LagrangeState& st, double R) {
    return st.x.norm() <= R && st.vstar.norm() <= R;
  };
  // ratio |grad|_g^2 / |grad|_PS; zero gradient gives 0
  auto ratio = [&](const LagrangeState& st, double r) {
    FrEval e = hom.eval(st, r);
    RVec gx = solve_spd(e.g, e.dx);
    double num = e.dx.dot(gx) + e.dv.squaredNorm();
    double ps = std::sqrt(std::max(0.0, gx.dot(sys.metric_at(st.x) * gx) + e.dv.squaredNorm()));
    if (!(ps > 0)) return 0.0;
    return num / ps;
  };

  for (double r : r_values) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0, 1);
    auto unit = [&](int dim) {
      RVec u(dim);
      for (int i = 0; i < dim; ++i) u(i) = nd(rng);
      return RVec(u / u.norm());
    };
    double found_radius = std::numeric_limits<double>::quiet_NaN();
    double found_eps = 0;
    for (double R : radii) {
      std::vector<std::pair<double, LagrangeState>> pool;
      for (int i = 0; i < samples; ++i) {
        LagrangeState st;
        int kind = i % 3;
        if (kind == 0 && !sys.constraint_samples.empty()) {
          // far field in v*, x near h^{-1}(0)
          const RVec& base = sys.constraint_samples[i % sys.constraint_samples.size()];
          st.x = base + 1e-3 * unit(n) * ud(rng);
          st.vstar = unit(k) * (R + 2 * R * ud(rng));
        } else if (kind == 1) {
          // far field in x
          st.x = unit(n) * (R + 2 * R * ud(rng));
          st.vstar = unit(k) * (3 * R * ud(rng));
        } else {
          st.x = unit(n) * (3 * R * ud(rng));
          st.vstar = unit(k) * (3 * R * ud(rng));
        }
        if (inside(st, R)) continue;
        pool.emplace_back(ratio(st, r), st);
      }
      std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      double eps = pool.empty() ? 0 : pool.front().first;
      // Newton refinement of the worst samples toward zeros of dF
      int refine = std::min<int>(8, static_cast<int>(pool.size()));
      for (int i = 0; i < refine && eps > 0; ++i) {
        LagrangeState st = pool[i].second;
        for (int it = 0; it < 40; ++it) {
          FrEval e = hom.eval(st, r, false);
          RVec g(n + k);
          g << e.dx, e.dv;
          if (g.norm() < 1e-12) break;
          RMat H = lagrange_hessian(hom, st, r);
          RVec step = H.completeOrthogonalDecomposition().solve(g);
          double len = step.norm();
          if (len > 1.0) step /= len;
          LagrangeState nx{st.x - step.head(n), st.vstar - step.tail(k)};
          if (!nx.x.allFinite() || !nx.vstar.allFinite() || inside(nx, R)) break;
          st = nx;
          eps = std::min(eps, ratio(st, r));
        }
      }
      if (eps > eps_floor) {
        found_radius = R;
        found_eps = eps;
        break;
      }
    }
    rep.radius.push_back(found_radius);
    rep.epsilon.push_back(found_eps);
    if (std::isnan(found_radius)) {
      rep.certified = false;
    } else {
      rep.K0_radius = std::max(rep.K0_radius, found_radius);
    }
    rep.epsilon_estimate = std::min(rep.epsilon_estimate, found_eps);
  }
  if (r_values.empty()) rep.epsilon_estimate = 0;
  return rep;
}

// ---------------------------------------------------------------- fixtures

Eigen::Vector3d HopfReference::hopf(const RVec& x) {
  cplx z1(x(0), x(1)), z2(x(2), x(3));
  cplx w = 2.0 * z1 * std::conj(z2);
  return {w.real(), w.imag(), std::norm(z1) - std::norm(z2)};
}

RVec HopfReference::rotate(const RVec& x, double a, double b) {
  cplx z1(x(0), x(1)), z2(x(2), x(3));
  z1 *= std::polar(1.0, a);
  z2 *= std::polar(1.0, a + b);
  RVec out(4);
  out << z1.real(), z1.imag(), z2.real(), z2.imag();
  return out;
}

ConstrainedSystem hopf_example() {
  ConstrainedSystem s;
  s.name = "hopf";
  s.n = 4;
  s.k = 1;
  s.f = [](const RVec& x) { return -kPi * (x(2) * x(2) + x(3) * x(3)); };
  s.grad_f = [](const RVec& x) {
    RVec g(4);
    g << 0, 0, -kTwoPi * x(2), -kTwoPi * x(3);
    return g;
  };
  s.hess_f = [](const RVec&) {
    RMat h = RMat::Zero(4, 4);
    h(2, 2) = h(3, 3) = -kTwoPi;
    return h;
  };
  s.h = [](const RVec& x) {
    RVec v(1);
    v(0) = 0.5 * (1.0 - x.squaredNorm());
    return v;
  };
  s.jac_h = [](const RVec& x) { return RMat(-x.transpose()); };
  s.hess_h = [](const RVec&) { return std::vector<RMat>{-RMat::Identity(4, 4)}; };
  // the normal flow is radial: phi(x, v) = x sqrt(1 - 2v)
  s.chart = [](const RVec& x, const RVec& v) {
    if (!(1.0 - 2.0 * v(0) > 0)) throw TubeError("hopf chart: v >= 1/2");
    return RVec(x * std::sqrt(1.0 - 2.0 * v(0)));
  };
  s.chart_proj = [](const RVec& y) {
    double r = y.norm();
    if (!(r > 0)) throw TubeError("hopf chart: projection of the origin");
    return RVec(y / r);
  };
  s.chart_proj_jac = [](const RVec& y) {
    double r = y.norm();
    if (!(r > 0)) throw TubeError("hopf chart: projection of the origin");
    RVec u = y / r;
    return RMat((RMat::Identity(4, 4) - u * u.transpose()) / r);
  };
  std::mt19937_64 rng(20240611);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 256; ++i) {
    RVec x(4);
    for (int j = 0; j < 4; ++j) x(j) = nd(rng);
    s.constraint_samples.push_back(x / x.norm());
  }
  for (int i = 0; i < 8; ++i) {
    double a = kTwoPi * i / 8;
    RVec p(4), q(4);
    p << std::cos(a), std::sin(a), 0, 0;
    q << 0, 0, std::cos(a), std::sin(a);
    s.constraint_samples.push_back(p);
    s.constraint_samples.push_back(q);
  }
  return s;
}

ConstrainedSystem quadratic_system(const RMat& Q, const RMat& A) {
  const int n = static_cast<int>(Q.rows()), k = static_cast<int>(A.rows());
  if (Q.cols() != n || A.cols() != n) throw std::invalid_argument("quadratic_system: shape mismatch");
  ConstrainedSystem s;
  s.name = "quadratic";
  s.n = n;
  s.k = k;
  RMat Qs = 0.5 * (Q + Q.transpose());
  s.f = [Qs](const RVec& x) { return 0.5 * x.dot(Qs * x); };
  s.grad_f = [Qs](const RVec& x) { return RVec(Qs * x); };
  s.hess_f = [Qs](const RVec&) { return Qs; };
  s.h = [A](const RVec& x) { return RVec(A * x); };
  s.jac_h = [A](const RVec&) { return A; };
  s.hess_h = [n, k](const RVec&) { return std::vector<RMat>(k, RMat::Zero(n, n)); };
  RMat pinv = A.transpose() * (A * A.transpose()).inverse();
  RMat proj = RMat::Identity(n, n) - pinv * A;
  s.chart = [pinv](const RVec& x, const RVec& v) { return RVec(x + pinv * v); };
  s.chart_proj = [proj](const RVec& y) { return RVec(proj * y); };
  s.chart_proj_jac = [proj](const RVec&) { return proj; };
  std::mt19937_64 rng(97);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 64; ++i) {
    RVec x(n);
    for (int j = 0; j < n; ++j) x(j) = nd(rng);
    s.constraint_samples.push_back(proj * x);
  }
  return s;
}

ConstrainedSystem circle_system() {
  ConstrainedSystem s;
  s.name = "circle";
  s.n = 2;
  s.k = 1;
  s.f = [](const RVec& x) { return x(1); };
  s.grad_f = [](const RVec&) {
    RVec g(2);
    g << 0, 1;
    return g;
  };
  s.hess_f = [](const RVec&) { return RMat(RMat::Zero(2, 2)); };
  s.h = [](const RVec& x) {
    RVec v(1);
    v(0) = x.squaredNorm() - 1.0;
    return v;
  };
  s.jac_h = [](const RVec& x) { return RMat(2.0 * x.transpose()); };
  s.hess_h = [](const RVec&) { return std::vector<RMat>{2.0 * RMat::Identity(2, 2)}; };
  for (int i = 0; i < 64; ++i) {
    double a = kTwoPi * i / 64;
    RVec x(2);
    x << std::cos(a), std::sin(a);
    s.constraint_samples.push_back(x);
  }
  return s;
}

ConstrainedSystem flat_system(int m, int k, std::function<double(const RVec&)> fq,
                              std::function<RVec(const RVec&)> grad_fq, std::function<RMat(const RVec&)> hess_fq) {
  ConstrainedSystem s;
  s.name = "flat";
  s.n = m + k;
  s.k = k;
  const int n = m + k;
  s.f = [fq, m](const RVec& x) { return fq(x.head(m)); };
  s.grad_f = [grad_fq, m, n](const RVec& x) {
    RVec g = RVec::Zero(n);
    g.head(m) = grad_fq(x.head(m));
    return g;
  };
  s.hess_f = [hess_fq, m, n](const RVec& x) {
    RMat h = RMat::Zero(n, n);
    h.topLeftCorner(m, m) = hess_fq(x.head(m));
    return h;
  };
  s.h = [m, k](const RVec& x) { return RVec(x.segment(m, k)); };
  s.jac_h = [m, k, n](const RVec&) {
    RMat j = RMat::Zero(k, n);
    j.rightCols(k).setIdentity();
    return j;
  };
  s.hess_h = [n, k](const RVec&) { return std::vector<RMat>(k, RMat::Zero(n, n)); };
  s.chart = [m, k](const RVec& x, const RVec& v) {
    RVec y = x;
    y.segment(m, k) += v;
    return y;
  };
  s.chart_proj = [m, k](const RVec& y) {
    RVec p = y;
    p.segment(m, k).setZero();
    return p;
  };
  s.chart_proj_jac = [m, n](const RVec&) {
    RMat d = RMat::Zero(n, n);
    d.topLeftCorner(m, m).setIdentity();
    return d;
  };
  for (int i = 0; i < 64; ++i) {
    RVec x = RVec::Zero(n);
    for (int j = 0; j < m; ++j) x(j) = -kPi + kTwoPi * ((i * (j + 1) * 37) % 64) / 64.0;
    s.constraint_samples.push_back(x);
  }
  return s;
}

ConstrainedSystem warped_sphere_system() {
  ConstrainedSystem s;
  s.name = "warped_sphere";
  s.n = 3;
  s.k = 1;
  s.f = [](const RVec& x) { return x(2) + 0.3 * x(0) * x(1); };
  s.grad_f = [](const RVec& x) {
    RVec g(3);
    g << 0.3 * x(1), 0.3 * x(0), 1.0;
    return g;
  };
  s.hess_f = [](const RVec&) {
    RMat h = RMat::Zero(3, 3);
    h(0, 1) = h(1, 0) = 0.3;
    return h;
  };
  s.h = [](const RVec& x) {
    RVec v(1);
    v(0) = 0.5 * (1.0 - x(0) * x(0) - x(1) * x(1) - 2.0 * x(2) * x(2));
    return v;
  };
  s.jac_h = [](const RVec& x) {
    RMat j(1, 3);
    j << -x(0), -x(1), -2.0 * x(2);
    return j;
  };
  s.hess_h = [](const RVec&) {
    RMat h = RMat::Zero(3, 3);
    h(0, 0) = h(1, 1) = -1.0;
    h(2, 2) = -2.0;
    return std::vector<RMat>{h};
  };
  s.metric = [](const RVec& x) {
    RMat g = RMat::Identity(3, 3);
    g(0, 0) += 0.5 * x(0) * x(0);
    g(1, 1) += 0.25 * x(2) * x(2);
    g(0, 2) = g(2, 0) = 0.1 * x(1);
    return g;
  };
  s.constant_metric = false;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 128; ++i) {
    RVec x(3);
    for (int j = 0; j < 3; ++j) x(j) = nd(rng);
    double q = x(0) * x(0) + x(1) * x(1) + 2.0 * x(2) * x(2);
    s.constraint_samples.push_back(x / std::sqrt(q));
  }
  return s;
}

// ---------------------------------------------------------------- moduli count

namespace {

// point on a trajectory where the action equals `level`, by cubic interpolation in s
std::optional<RVec> at_action_level(const MorseTrajectory& tr, double level) {
  const auto& a = tr.action;
  const int m = static_cast<int>(a.size());
  for (int i = 0; i + 1 < m; ++i) {
    if (!((a[i] - level) * (a[i + 1] - level) <= 0) || a[i] == a[i + 1]) continue;
    int i0 = std::clamp(i - 1, 0, std::max(0, m - 4));
    int cnt = std::min(4, m - i0);
    auto lag = [&](double s, auto get) {
      using T = std::decay_t<decltype(get(0))>;
      T acc = get(i0) * 0.0;
      for (int p = 0; p < cnt; ++p) {
        double w = 1;
        for (int q = 0; q < cnt; ++q)
          if (q != p) w *= (s - tr.s[i0 + q]) / (tr.s[i0 + p] - tr.s[i0 + q]);
        acc = acc + get(i0 + p) * w;
      }
      return acc;
    };
    auto act = [&](double s) { return lag(s, [&](int j) { return tr.action[j]; }); };
    double lo = tr.s[i], hi = tr.s[i + 1];
    double flo = act(lo) - level;
    for (int it = 0; it < 80; ++it) {
      double mid = 0.5 * (lo + hi);
      double fm = act(mid) - level;
      if ((fm < 0) == (flo < 0)) {
        lo = mid;
        flo = fm;
      } else {
        hi = mid;
      }
    }
    double s = 0.5 * (lo + hi);
    RVec x = lag(s, [&](int j) { return RVec(tr.states[j].x); });
    return x;
  }
  return std::nullopt;
}

double orbit_distance(const std::vector<RVec>& a, const std::vector<RVec>& b) {
  auto cost = [&](double t1, double t2) {
    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, (HopfReference::rotate(a[i], t1, t2) - b[i]).norm());
    return worst;
  };
  const int grid = 64;
  double best = std::numeric_limits<double>::infinity(), bt1 = 0, bt2 = 0;
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) {
      double t1 = kTwoPi * i / grid, t2 = kTwoPi * j / grid;
      double c = cost(t1, t2);
      if (c < best) {
        best = c;
        bt1 = t1;
        bt2 = t2;
      }
    }
  // pattern search refinement
  for (double step = kTwoPi / grid; step > 1e-12; step *= 0.5) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (auto [d1, d2] : {std::pair{step, 0.0}, {-step, 0.0}, {0.0, step}, {0.0, -step}}) {
        double c = cost(bt1 + d1, bt2 + d2);
        if (c < best) {
          best = c;
          bt1 += d1;
          bt2 += d2;
          moved = true;
        }
      }
    }
  }
  return best;
}

}  // namespace

ModuliReport moduli_count_hopf(const HomotopyParams& params, double rot_a, double rot_b, int mesh, double ds) {
  ConstrainedSystem sys = hopf_example();
  Homotopy hom(sys, params);
  ModuliReport rep;
  rep.threshold = 1e-5;
  std::vector<double> levels;
  const int nl = 7;
  for (int i = 0; i < nl; ++i) levels.push_back(-kPi * (0.2 + 0.6 * i / (nl - 1)));

  std::vector<std::vector<RVec>> reps;
  MorseFlowOptions opts;
  opts.s_max = 40;
  for (double eps : {1e-3, 1e-2}) {
    for (int i = 0; i < mesh; ++i)
      for (int j = 0; j < mesh; ++j) {
        double a = kTwoPi * (i + 0.25) / mesh, b = kTwoPi * (j + 0.5) / mesh;
        RVec x(4);
        x << std::cos(eps) * std::cos(a), std::cos(eps) * std::sin(a), std::sin(eps) * std::cos(b),
            std::sin(eps) * std::sin(b);
        x = HopfReference::rotate(x, rot_a, rot_b);
        LagrangeState init{x, RVec::Zero(1)};
        MorseTrajectory tr = integrate_flow_line(hom, 1.0, init, ds, 1e-9, opts);
        ++rep.trajectories;
        const RVec& xe = tr.states.back().x;
        bool reached_min = std::hypot(xe(0), xe(1)) < 1e-6 && std::abs(xe.norm() - 1.0) < 1e-6;
        if (tr.status != FlowStatus::Converged || !reached_min) {
          ++rep.unconverged;
          continue;
        }
        std::vector<RVec> pts;
        bool ok = true;
        for (double L : levels) {
          auto p = at_action_level(tr, L);
          if (!p) {
            ok = false;
            break;
          }
          pts.push_back(*p);
        }
        if (!ok) {
          ++rep.unconverged;
          continue;
        }
        int cls = -1;
        for (size_t c = 0; c < reps.size(); ++c) {
          double d = orbit_distance(reps[c], pts);
          if (d < rep.threshold) {
            cls = static_cast<int>(c);
            rep.max_intra_distance = std::max(rep.max_intra_distance, d);
            break;
          }
        }
        if (cls < 0) {
          reps.push_back(pts);
          rep.class_sizes.push_back(1);
        } else {
          ++rep.class_sizes[cls];
        }
      }
  }
  rep.count = static_cast<int>(reps.size());
  return rep;
}

}  // namespace cylvortex
