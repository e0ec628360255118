// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cylvortex/core.hpp"
#include "cylvortex/flow.hpp"
#include "cylvortex/kw.hpp"
#include "cylvortex/morse.hpp"

using namespace cylvortex;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// N vortices with |s| <= 3 and pairwise cylinder distance >= min_sep
VortexSet random_vortices(std::mt19937_64& rng, int n, double min_sep) {
  std::uniform_real_distribution<double> us(-3, 3), ut(0, 1);
  std::vector<Vortex> pts;
  while (static_cast<int>(pts.size()) < n) {
    Vortex v{us(rng), ut(rng), 1};
    bool ok = true;
    for (const auto& p : pts) ok &= std::hypot(p.s - v.s, circle_dist(p.t, v.t)) >= min_sep;
    if (ok) pts.push_back(v);
  }
  return VortexSet(pts);
}

KWProblem problem_for(const VortexSet& vs, double r = 1.0) { return {vs, r, KWGrid::for_vortices(vs)}; }

// 1
Outcome flux_quantization() {
  std::mt19937_64 rng(101);
  double worst = 0, slowest = 0;
  for (int n = 1; n <= 3; ++n) {
    VortexSet vs = random_vortices(rng, n, 0.5);
    KWProblem p = problem_for(vs);
    auto t0 = std::chrono::steady_clock::now();
    ScalarFieldW w = solve_kw(p);
    KWReport rep = verify_kw(w, p);
    slowest = std::max(slowest, seconds_since(t0));
    worst = std::max(worst, std::abs(rep.flux - n));
  }
  return {worst < 1e-3 && slowest < 60, fmt("max |flux - N| = %.2e, slowest solve %.2f s", worst, slowest)};
}

// 2
Outcome energy_identity() {
  VortexSet vs({{0.4, 0.3, 1}});
  KWProblem p = problem_for(vs);
  ScalarFieldW w = solve_kw(p);
  CylinderField f = reconstruct(w, vs, ReconGauge::Radial);
  FlowTrajectory traj = trajectory_from_field(f, FlowVariant::full());
  double e = traj.diagnostics.front().action - traj.diagnostics.back().action;
  // flux quadrature of (1 - |v|^2) over the cylinder as the second witness
  double flux = verify_kw(w, p).flux;
  double rel = std::abs(e - kPi) / kPi, rel_flux = std::abs(e - kPi * flux) / kPi;
  return {rel < 0.01 && rel_flux < 0.01,
          fmt("E = %.8f, |E - pi|/pi = %.2e, |E - pi * flux|/pi = %.2e", e, rel, rel_flux)};
}

// 3
Outcome roundtrip() {
  std::mt19937_64 rng(303);
  int ok = 0;
  double worst_s = 0;
  for (int i = 0; i < 20; ++i) {
    VortexSet vs = random_vortices(rng, 1 + i % 3, 1.0);
    KWProblem p = problem_for(vs);
    ScalarFieldW w = solve_kw(p);
    CylinderField f = reconstruct(w, vs, ReconGauge::Radial);
    VortexSet back = J_map(f);
    bool match = back.matches(vs, p.grid.ds(), p.grid.dt());
    ok += match;
    if (match)
      for (const auto& q : back.points()) {
        double best = HUGE_VAL;
        for (const auto& pt : vs.points()) best = std::min(best, std::abs(q.s - pt.s));
        worst_s = std::max(worst_s, best);
      }
  }
  return {ok == 20, fmt("%.0f/20 fixtures recovered within one cell, worst s-offset %.3f", ok, worst_s)};
}

// 4
Outcome uniqueness() {
  std::mt19937_64 rng(404);
  double worst = 0;
  std::vector<VortexSet> fixtures = {VortexSet(std::vector<Vortex>{}), random_vortices(rng, 1, 0.5),
                                     random_vortices(rng, 2, 1.0), VortexSet({{0.5, 0.5, 2}}),
                                     random_vortices(rng, 3, 1.0)};
  for (const auto& vs : fixtures) {
    UniquenessReport u = uniqueness_probe(problem_for(vs), 3, 1e-8, 9);
    worst = std::max(worst, u.max_pairwise_diff);
  }
  return {worst < 1e-6, fmt("max pairwise sup difference %.2e over %.0f fixtures", worst, fixtures.size())};
}

// 5 and 6 share the trajectories
struct FlowSet {
  std::vector<std::pair<double, FlowTrajectory>> items;
  std::vector<int> n;
};

const FlowSet& flows() {
  static FlowSet set = [] {
    FlowSet s;
    std::vector<VortexSet> fixtures = {VortexSet({{0.2, 0.4, 1}}), VortexSet({{-0.8, 0.1, 1}, {0.9, 0.6, 1}})};
    for (const auto& vs : fixtures)
      for (double r : {0.0, 0.5, 1.0}) {
        s.items.push_back({r, connect_via_kw(vs, r)});
        s.n.push_back(vs.N());
      }
    return s;
  }();
  return set;
}

Outcome max_principle() {
  double worst = 0;
  bool all = true;
  for (const auto& [r, traj] : flows().items) {
    MaxPrincipleReport m = max_principle_check(traj);
    worst = std::max(worst, m.max_u);
    all &= m.pass;
  }
  return {all, fmt("max u(s) = %.12f over r in {0, 0.5, 1}, N in {1, 2}", worst)};
}

Outcome mode_confinement() {
  double worst = 0;
  bool all = true;
  int count = 0;
  for (size_t i = 0; i < flows().items.size(); ++i) {
    const auto& [r, traj] = flows().items[i];
    if (r != 0.0) continue;
    const int n = flows().n[i];
    ConfinementReport c = check_mode_confinement(traj, FourierWindow(0, n), 1e-6);
    all &= c.pass && c.m_start == 0 && c.m_end == n;
    worst = std::max(worst, c.terminal_out_mass);
    ++count;
  }
  return {all && count > 0, fmt("terminal out-of-window mass %.2e on %.0f r = 0 lines (windings 0 -> N)", worst, count)};
}

// 7
Outcome index_formula() {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(707);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> mag(0.1, 2.0);
  int ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    int n = std::uniform_int_distribution<int>(2, 10)(rng);
    int k = std::uniform_int_distribution<int>(1, std::min(3, n - 1))(rng);
    int m = n - k;
    RMat R(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) R(i, j) = nd(rng);
    RMat O = Eigen::HouseholderQR<RMat>(R).householderQ();
    RMat block = RMat::Zero(n, n);
    int neg = 0, zero = 0;
    for (int i = 0; i < m; ++i) {
      int kind = std::uniform_int_distribution<int>(0, 2)(rng);
      block(i, i) = kind == 0 ? 0.0 : (kind == 1 ? -mag(rng) : mag(rng));
      neg += kind == 1;
      zero += kind == 0;
    }
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) block(i, m + j) = block(m + j, i) = nd(rng);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j <= i; ++j) block(m + i, m + j) = block(m + j, m + i) = nd(rng);
    RMat Q = O * block * O.transpose();
    RMat L(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) L(i, j) = nd(rng) + (i == j ? 3.0 : 0.0);
    RMat A = L * O.rightCols(k).transpose();
    ConstrainedSystem sys = quadratic_system(Q, A);
    Homotopy hom(sys, HomotopyParams{1.0, 1e6});
    HessianIndex hf = hessian_index(hom, {RVec::Zero(n), RVec::Zero(k)}, 0.0);
    // restricted Hessian on an orthonormal basis of ker A, independent of the construction
    Eigen::FullPivLU<RMat> lu(A);
    RMat Z = lu.kernel();
    RMat Zo = Eigen::HouseholderQR<RMat>(Z).householderQ() * RMat::Identity(n, Z.cols());
    HessianIndex hr = matrix_inertia(Zo.transpose() * Q * Zo);
    ok += hf.index == hr.index + k && hf.kernel_dim == hr.kernel_dim && hr.index == neg && hr.kernel_dim == zero;
  }
  double t = seconds_since(t0);
  return {ok == 100 && t < 5, fmt("%.0f/100 instances with ind_F = ind + k and equal kernels, %.3f s", ok, t)};
}

// 8
Outcome closed_form() {
  auto fq = [](const RVec& q) { return 0.01 * std::sin(q(0)); };
  auto gq = [](const RVec& q) { return RVec(RVec::Constant(1, 0.01 * std::cos(q(0)))); };
  auto hq = [](const RVec& q) { return RMat(RMat::Constant(1, 1, -0.01 * std::sin(q(0)))); };
  ConstrainedSystem flat = flat_system(1, 1, fq, gq, hq);
  double worst = 0;
  for (double kappa : {1.0, 10.0, 100.0}) {
    Homotopy hom(flat, HomotopyParams{1.0, kappa});
    const double w0 = 1e-3, w1 = 0.1, rk = std::sqrt(kappa);
    RVec x0(2);
    x0 << 0.4, w0 + w1;
    MorseFlowOptions opts;
    opts.s_max = 3.0;
    MorseTrajectory tr = integrate_flow_line(hom, 1.0, {x0, RVec::Constant(1, -rk * (w0 - w1))}, 1e-3, 0.0, opts);
    NormalFormTrajectory nf =
        normal_form_flow(kappa, RVec::Constant(1, 0.4), RVec::Constant(1, w0), RVec::Constant(1, w1), gq, 3.0, 1e-3);
    if (tr.s.size() != nf.s.size()) return {false, "sample grids differ"};
    for (size_t i = 0; i < tr.s.size(); ++i) {
      worst = std::max(worst, std::abs(tr.states[i].x(1) - nf.w[i](0)));
      worst = std::max(worst, std::abs(tr.states[i].vstar(0) - nf.vstar[i](0)));
      worst = std::max(worst, std::abs(tr.states[i].x(0) - nf.q[i](0)));
    }
  }
  return {worst < 1e-6, fmt("sup error %.2e on s in [0, 3], kappa in {1, 10, 100}", worst)};
}

// 9
Outcome tube_confinement() {
  ConstrainedSystem s = hopf_example();
  HomotopyParams params = HomotopyParams::for_system(s, 0.5);
  Homotopy hom(s, params);
  const double rk = std::sqrt(params.kappa);
  double tube = 0, terminal = 0;
  bool converged = true;
  auto track = [&](const MorseTrajectory& tr) {
    for (double t : tr.tube) tube = std::max(tube, t);
  };
  // generic starts on the stable normal branch, bounded window
  std::mt19937_64 rng(909);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 4; ++i) {
    RVec x(4);
    for (int j = 0; j < 4; ++j) x(j) = nd(rng);
    x /= x.norm();
    double c = 0.05 * (i + 1);
    MorseFlowOptions opts;
    opts.s_max = 60;
    track(integrate_flow_line(hom, 1.0, {hom.tube().phi(x, RVec::Constant(1, c)), RVec::Constant(1, rk * c)}, 0.01,
                              1e-9, opts));
  }
  // finite-energy lines: normal offsets over both critical circles, and
  // constrained lines from the top circle to the bottom one
  std::vector<std::pair<RVec, double>> starts;
  RVec top(4), bottom(4);
  top << std::cos(0.7), std::sin(0.7), 0, 0;
  bottom << 0, 0, std::cos(0.7), std::sin(0.7);
  starts.push_back({top, 0.02});
  starts.push_back({bottom, 0.02});
  for (double e : {1e-3, 1e-2}) {
    RVec x(4);
    x << std::cos(e), 0, std::sin(e) * std::cos(1.0), std::sin(e) * std::sin(1.0);
    starts.push_back({x, 0.0});
  }
  for (const auto& [x, c] : starts) {
    MorseFlowOptions opts;
    opts.s_max = 600;
    MorseTrajectory tr = integrate_flow_line(hom, 1.0, {hom.tube().phi(x, RVec::Constant(1, c)), RVec::Constant(1, rk * c)},
                                             c > 0 ? 0.05 : 0.01, c > 0 ? 2e-8 : 1e-9, opts);
    track(tr);
    converged &= tr.status == FlowStatus::Converged;
    terminal = std::max(terminal, std::abs(s.h(tr.states.back().x)(0)));
    terminal = std::max(terminal, std::abs(tr.states.back().vstar(0)));
  }
  bool pass = converged && tube <= params.delta / 2 + 1e-6 && terminal < 1e-6;
  return {pass, fmt("max tube coordinate %.4f (bound %.4f), terminal |(w, v*)| %.2e", tube, params.delta / 2 + 1e-6,
                    terminal)};
}

// 10
Outcome moduli_count() {
  ConstrainedSystem s = hopf_example();
  HomotopyParams params = HomotopyParams::for_system(s, 0.5);
  ModuliReport base = moduli_count_hopf(params);
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> ang(0, kTwoPi);
  bool rotated_ok = true;
  for (int i = 0; i < 2; ++i) {
    ModuliReport rot = moduli_count_hopf(params, ang(rng), ang(rng));
    rotated_ok &= rot.count == 1 && rot.unconverged == 0;
  }
  return {base.count == 1 && base.unconverged == 0 && rotated_ok,
          fmt("count %.0f from %.0f trajectories, ", base.count, base.trajectories) +
              (rotated_ok ? "rotated reruns 1, 1" : "rotated reruns differ")};
}

// 11
Outcome palais_smale() {
  ConstrainedSystem s = hopf_example();
  Homotopy hom(s, HomotopyParams::for_system(s, 0.5));
  PSProbeReport rep = palais_smale_probe(hom, {1, 2, 3, 5, 7, 10}, 7, 300);
  return {rep.certified && rep.epsilon_estimate > 0,
          fmt("eps = %.3e outside K0 of radius %.1f for r in {0, .25, .5, .75, 1}", rep.epsilon_estimate,
              rep.K0_radius)};
}

// 12
LoopTangent fd_gradient(const LoopConfig& c, double r, double h) {
  const int n = c.n_t();
  LoopTangent g{CVec::Zero(n), RVec::Zero(n)};
  auto eval = [&](const CVec& v, const RVec& e) { return action(LoopConfig::from_grid(v, e), r); };
  for (int j = 0; j < n; ++j) {
    for (cplx dir : {cplx(1, 0), cplx(0, 1)}) {
      CVec vp = c.v(), vm = c.v();
      vp[j] += h * dir;
      vm[j] -= h * dir;
      g.v[j] += dir * (eval(vp, c.eta()) - eval(vm, c.eta())) / (2 * h) * double(n);
    }
    RVec ep = c.eta(), em = c.eta();
    ep[j] += h;
    em[j] -= h;
    g.eta[j] = (eval(c.v(), ep) - eval(c.v(), em)) / (2 * h) * double(n);
  }
  return g;
}

LoopConfig random_loop(std::mt19937_64& rng, bool eta_varies) {
  const int n = 64, kmax = 5;
  std::normal_distribution<double> nd;
  CVec modes = CVec::Zero(n);
  for (int k = -kmax; k <= kmax; ++k) modes[(k + n) % n] = cplx(nd(rng), nd(rng)) / (1.0 + k * k);
  RVec eta = RVec::Constant(n, 0.5 * nd(rng));
  if (eta_varies) {
    const double a = nd(rng), b = nd(rng), c = nd(rng);
    for (int j = 0; j < n; ++j) {
      const double t = double(j) / n;
      eta[j] += 0.5 * a * std::cos(kTwoPi * t) + 0.5 * b * std::sin(kTwoPi * t) + 0.3 * c * std::cos(6 * kPi * t);
    }
  }
  return LoopConfig::from_modes(modes, eta);
}

Outcome gradients() {
  const double h = 1e-6;
  double worst_flow = 0, worst_morse = 0;
  std::mt19937_64 rng(1212);
  // flow right-hand sides against the L2 gradient of the action
  for (int i = 0; i < 50; ++i) {
    LoopConfig c = random_loop(rng, true);
    LoopTangent g1 = fd_gradient(c, 1.0, h);
    worst_flow = std::max(worst_flow, l2_norm(rhs(c, FlowVariant::full()) + g1) / l2_norm(g1));
    LoopTangent gh = fd_gradient(c, 0.5, h);
    worst_flow = std::max(worst_flow, l2_norm(rhs(c, FlowVariant::ar(0.5)) + gh) / l2_norm(gh));
    LoopTangent g0 = fd_gradient(c, 0.0, h);
    worst_flow = std::max(worst_flow, l2_norm(rhs(c, FlowVariant::ar(0.0)) + g0) / l2_norm(g0));
    // Coulomb slice: v-block
    LoopConfig cc = coulomb_project(c).cfg;
    LoopTangent gc = fd_gradient(cc, 1.0, h);
    worst_flow = std::max(worst_flow, (rhs(cc, FlowVariant::coulomb()).v + gc.v).norm() / gc.v.norm());
  }
  // Lagrange gradients against differences of F_r
  RMat A(1, 3);
  A << 1, -1, 2;
  RMat Q(3, 3);
  Q << 1, 0.5, 0, 0.5, -2, 0.3, 0, 0.3, 0.7;
  std::vector<ConstrainedSystem> systems = {hopf_example(), circle_system(), warped_sphere_system(), quadratic_system(Q, A)};
  for (const auto& sys : systems) {
    Homotopy hom(sys, HomotopyParams::for_system(sys, 0.5));
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(-0.45, 0.45);
    for (double r : {0.0, 0.5, 1.0})
      for (int i = 0; i < 50; ++i) {
        RVec x = sys.constraint_samples[(i * 13) % sys.constraint_samples.size()];
        LagrangeState st{hom.tube().phi(x, RVec::Constant(sys.k, ud(rng))), RVec::Constant(sys.k, nd(rng))};
        for (int j = 0; j < sys.n; ++j) st.x(j) += 1e-3 * nd(rng);
        LagrangeGrad g = lagrange_grad(hom, st, r);
        RVec dx(sys.n), dv(sys.k);
        for (int j = 0; j < sys.n; ++j) {
          LagrangeState p = st, m = st;
          p.x(j) += h;
          m.x(j) -= h;
          dx(j) = (hom.F_r(p, r) - hom.F_r(m, r)) / (2 * h);
        }
        for (int j = 0; j < sys.k; ++j) {
          LagrangeState p = st, m = st;
          p.vstar(j) += h;
          m.vstar(j) -= h;
          dv(j) = (hom.F_r(p, r) - hom.F_r(m, r)) / (2 * h);
        }
        RVec gx = hom.metric_r(st.x, r) * g.x;
        worst_morse = std::max(worst_morse, (gx - dx).norm() / std::max(1.0, dx.norm()));
        worst_morse = std::max(worst_morse, (g.v - dv).norm() / std::max(1.0, dv.norm()));
      }
  }
  return {worst_flow < 1e-5 && worst_morse < 1e-5,
          fmt("flow rhs rel. error %.2e, lagrange_grad rel. error %.2e (h = 1e-6, 50 states each)", worst_flow,
              worst_morse)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  std::vector<Criterion> list = {
      {1, "flux quantization", flux_quantization},
      {2, "energy identity E = pi N", energy_identity},
      {3, "roundtrip bijection", roundtrip},
      {4, "uniqueness", uniqueness},
      {5, "maximum principle", max_principle},
      {6, "mode confinement", mode_confinement},
      {7, "index formula", index_formula},
      {8, "closed-form flow", closed_form},
      {9, "tube confinement and reduction", tube_confinement},
      {10, "Hopf moduli count", moduli_count},
      {11, "Palais-Smale probe", palais_smale},
      {12, "gradient correctness", gradients},
  };
  int failed = 0;
  for (const auto& c : list) {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(list.size()) - failed, list.size());
  return failed == 0 ? 0 : 1;
}
