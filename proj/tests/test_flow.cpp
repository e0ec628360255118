#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "cylvortex/flow.hpp"

using namespace cylvortex;

namespace {

LoopConfig random_loop(std::mt19937& rng, int kmax, double amp, double eta0, bool eta_varies, int n = 64) {
  std::normal_distribution<double> nd;
  CVec modes = CVec::Zero(n);
  for (int k = -kmax; k <= kmax; ++k) modes[(k + n) % n] = amp * cplx(nd(rng), nd(rng)) / (1.0 + k * k);
  RVec eta = RVec::Constant(n, eta0);
  if (eta_varies) {
    const double a = nd(rng), b = nd(rng), c = nd(rng);
    for (int j = 0; j < n; ++j) {
      const double t = double(j) / n;
      eta[j] += 0.5 * a * std::cos(kTwoPi * t) + 0.5 * b * std::sin(kTwoPi * t) + 0.3 * c * std::cos(6 * kPi * t);
    }
  }
  return LoopConfig::from_modes(modes, eta);
}

// Central-difference L2 gradient of action(., r) in grid coordinates.
LoopTangent fd_gradient(const LoopConfig& c, double r, double h = 1e-6) {
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

double rel(const LoopTangent& a, const LoopTangent& b) {
  return l2_norm(a + (-1.0) * b) / std::max(1e-300, l2_norm(b));
}

}  // namespace

TEST_CASE("xi_v solve") {
  std::mt19937 rng(2);
  auto c = random_loop(rng, 3, 0.8, 0.0, false);
  CHECK(xi_v_solve(c.v(), 0.0).norm() == 0.0);
  CVec flat(64);
  for (int j = 0; j < 64; ++j) flat[j] = std::polar(1.3, 0.4 * j);
  CHECK(xi_v_solve(flat, 1.0).cwiseAbs().maxCoeff() < 1e-13);
  CVec v(64);
  for (int j = 0; j < 64; ++j) v[j] = std::sqrt(1 + std::cos(kTwoPi * j / 64.0));
  RVec xi = xi_v_solve(v, 1.0);
  for (int j = 0; j < 64; ++j) CHECK(xi[j] == doctest::Approx(-std::sin(kTwoPi * j / 64.0) / (4 * kPi)).epsilon(1e-10));
}

TEST_CASE("rhs at special points") {
  for (int m : {-2, 0, 1})
    for (auto var : {FlowVariant::full(), FlowVariant::coulomb(), FlowVariant::homotopy(0.5), FlowVariant::ar(0.3),
                     FlowVariant::warped()})
      CHECK(l2_norm(rhs(CriticalLoop{m, std::polar(1.0, 1.1)}.loop(), var)) < 1e-10);
  auto zero = LoopConfig::from_grid(CVec::Zero(64), RVec::Zero(64));
  auto f = rhs(zero, FlowVariant::full());
  CHECK(f.v.norm() == 0.0);
  for (int j = 0; j < 64; ++j) CHECK(f.eta[j] == doctest::Approx(-0.5));
  CHECK_THROWS_AS(rhs(zero, FlowVariant::warped()), std::domain_error);
}

TEST_CASE("rhs is minus the finite-difference gradient") {
  std::mt19937 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    auto c = random_loop(rng, 5, 1.0, 0.4, true);
    auto g = fd_gradient(c, 1.0);
    auto f = rhs(c, FlowVariant::full());
    CHECK(rel((-1.0) * f, g) < 1e-5);
    CHECK(std::abs(l2_inner(f, g) + l2_inner(g, g)) < 1e-5 * l2_inner(g, g));
    for (double r : {0.0, 0.25, 0.7}) CHECK(rel((-1.0) * rhs(c, FlowVariant::ar(r)), fd_gradient(c, r)) < 1e-5);
  }
  // Coulomb slice: v-gradient plus derivative along constant eta
  for (int trial = 0; trial < 5; ++trial) {
    auto c = random_loop(rng, 5, 1.0, -0.6, false);
    auto f = rhs(c, FlowVariant::coulomb());
    auto g = fd_gradient(c, 1.0);
    CHECK((f.v + g.v).norm() < 1e-5 * g.v.norm());
    const double h = 1e-6;
    auto up = LoopConfig::from_grid(c.v(), (c.eta().array() + h).matrix());
    auto dn = LoopConfig::from_grid(c.v(), (c.eta().array() - h).matrix());
    const double d_eta = (action(up, 1.0) - action(dn, 1.0)) / (2 * h);
    CHECK(f.eta[0] == doctest::Approx(-d_eta).epsilon(1e-6));
  }
}

TEST_CASE("variant coincidences") {
  std::mt19937 rng(17);
  auto c = coulomb_project(random_loop(rng, 4, 0.9, 0.2, true)).cfg;
  auto a = rhs(c, FlowVariant::homotopy(0.0)), b = rhs(c, FlowVariant::coulomb());
  CHECK((a.v - b.v).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((a.eta - b.eta).cwiseAbs().maxCoeff() < 1e-14);
  auto d = random_loop(rng, 4, 0.9, 0.2, true);
  auto e = rhs(d, FlowVariant::ar(1.0)), f = rhs(d, FlowVariant::full());
  CHECK((e.v - f.v).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((e.eta - f.eta).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("rhs commutes with T2 rotation") {
  std::mt19937 rng(19);
  auto c = random_loop(rng, 6, 0.9, 0.1, true);
  for (auto var : {FlowVariant::full(), FlowVariant::ar(0.4), FlowVariant::warped()}) {
    auto lhs = rhs(t2_rotate(c, 0.7, 2.3), var);
    auto f = rhs(c, var);
    auto rot = t2_rotate(LoopConfig::from_grid(f.v, f.eta), 0.7, 2.3);
    CHECK((lhs.v - rot.v()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((lhs.eta - rot.eta()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("integrate from a critical loop is stationary") {
  auto traj = integrate(CriticalLoop{1, 1.0}.loop(), FlowVariant::full(), 1e-3, 1.0, 1e-8);
  CHECK(traj.steps == 0);
  CHECK(traj.converged);
}

TEST_CASE("energy identity and monotonicity") {
  std::mt19937 rng(23);
  IntegrateOptions opt;
  opt.window = FourierWindow(-2, 2);
  for (auto var : {FlowVariant::full(), FlowVariant::coulomb(), FlowVariant::homotopy(0.5), FlowVariant::ar(0.5),
                   FlowVariant::warped()}) {
    auto c = random_loop(rng, 2, 0.7, -kTwoPi * 2 - 1.0, true);
    auto traj = integrate(c, var, 1e-3, 0.3, 1e-10, opt);
    double diss = 0;
    for (std::size_t i = 1; i < traj.diagnostics.size(); ++i) {
      const auto &a = traj.diagnostics[i - 1], &b = traj.diagnostics[i];
      diss += 0.5 * (a.dissipation + b.dissipation) * (b.s - a.s);
      CHECK(b.action <= a.action + 1e-9);
    }
    const double drop = traj.diagnostics.front().action - traj.diagnostics.back().action;
    INFO(var.name());
    CHECK(drop > 0);
    CHECK(std::abs(diss - drop) < 0.01 * drop);
    if (var.tag == FlowTag::FULL_L2 || var.tag == FlowTag::AR_L2 || var.tag == FlowTag::COULOMB_G0)
      for (const auto& d : traj.diagnostics) CHECK(d.dissipation == doctest::Approx(d.grad_norm * d.grad_norm).epsilon(1e-9));
  }
}

TEST_CASE("perturbed zero loop: eta_bar falls and the constant mode decays") {
  CVec v = CVec::Zero(64);
  RVec eta(64);
  for (int j = 0; j < 64; ++j) {
    const double t = j / 64.0;
    v[j] = 1e-3 * (1.0 + 0.5 * std::polar(1.0, -kTwoPi * t));
    eta[j] = 1e-3 * std::cos(kTwoPi * t);
  }
  IntegrateOptions opt;
  opt.window = FourierWindow(-3, 0);
  auto traj = integrate(LoopConfig::from_grid(v, eta), FlowVariant::full(), 1e-3, 2.0, 1e-12, opt);
  const auto& end = traj.samples.back().second;
  CHECK(end.eta_bar() < -0.9);
  CHECK(std::abs(end.mode(0)) < 1e-3 * 0.9);
  CHECK(traj.diagnostics.back().action < traj.diagnostics.front().action);
}

TEST_CASE("mode ODE") {
  const cplx v0(0.3, -0.2);
  CHECK(mode_ode_step(v0, 2, -kTwoPi * 2, 0.7) == v0);
  CHECK(std::abs(mode_ode_step(v0, 0, -1.0, 1.0) - v0 * std::exp(-1.0)) < 1e-15);
  // generic integrator on dv/ds = (eta + 2 pi m) v, Heun with small steps: O(ds^2)
  for (double h : {1e-2, 5e-3}) {
    cplx y = v0;
    for (int i = 0; i < int(std::round(1.0 / h)); ++i) {
      const cplx k1 = -1.0 * y, k2 = -1.0 * (y + h * k1);
      y += 0.5 * h * (k1 + k2);
    }
    CHECK(std::abs(y - mode_ode_step(v0, 0, -1.0, 1.0)) < 0.2 * h * h);
  }
  // Coulomb flow of a small loop against per-mode exact stepping with averaged eta_bar
  CVec modes = CVec::Zero(64);
  for (int k = -2; k <= 2; ++k) modes[(k + 64) % 64] = 1e-4 * cplx(1.0 + 0.3 * k, 0.2 * k);
  const double eb0 = -3.0, S = 0.01;
  auto c = LoopConfig::from_modes(modes, RVec::Constant(64, eb0));
  auto traj = integrate(c, FlowVariant::coulomb(), 1e-4, S, 0.0);
  const auto& end = traj.samples.back().second;
  const double mu_bar = moment_map(c.v()).mean();
  for (int k = -2; k <= 2; ++k) {
    const cplx exact = mode_ode_step(c.mode(k), k, eb0 - 0.5 * mu_bar * S, S);
    CHECK(std::abs(end.mode(k) - exact) < 1e-8 * std::abs(c.mode(k)) + 1e-14);
  }
}

TEST_CASE("FULL_L2 commutes with constant gauge") {
  std::mt19937 rng(29);
  auto c = random_loop(rng, 3, 0.8, -0.5, true);
  IntegrateOptions opt;
  opt.window = FourierWindow(-4, 4);
  const CVec h = CVec::Constant(64, std::polar(1.0, 0.9));
  auto a = integrate(c, FlowVariant::full(), 1e-3, 0.1, 0.0, opt).samples.back().second;
  auto b = integrate(gauge_transform(h, c), FlowVariant::full(), 1e-3, 0.1, 0.0, opt).samples.back().second;
  auto ga = gauge_transform(h, a);
  CHECK((ga.v() - b.v()).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((ga.eta() - b.eta()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("mode confinement checks") {
  // support in [0, 1] stays there exactly under the Coulomb flow
  CVec modes = CVec::Zero(64);
  modes[0] = 0.6;
  modes[1] = 0.3;
  auto c = LoopConfig::from_modes(modes, RVec::Constant(64, -1.0));
  auto traj = integrate(c, FlowVariant::coulomb(), 1e-3, 0.2, 0.0);
  auto rep = check_mode_confinement(traj, FourierWindow(0, 1), 1e-6);
  CHECK(rep.max_out_mass == 0.0);
  CHECK(rep.pass);
  // injected mode 3 grows when eta_bar + 2 pi 3 > 0
  FlowTrajectory inj;
  CVec m2 = modes;
  m2[3] = 1e-4;
  for (int i = 0; i <= 10; ++i) {
    const double s = 0.03 * i;
    CVec mm = m2;
    for (int k : {0, 1, 3}) mm[k] = mode_ode_step(m2[k], k, -kTwoPi * 0.5, s);
    inj.samples.push_back({s, LoopConfig::from_modes(mm, RVec::Constant(64, -kPi))});
  }
  auto bad = check_mode_confinement(inj, FourierWindow(0, 1), 1e-6);
  CHECK_FALSE(bad.pass);
  CHECK(bad.terminal_out_mass == doctest::Approx(1e-8 * std::exp(2 * (kTwoPi * 3 - kPi) * 0.3)));
  CHECK(bad.m_end == 1);
  CHECK_THROWS_AS(check_mode_confinement(traj, FourierWindow(3, 5), 1e-6), std::invalid_argument);
}

TEST_CASE("max principle check") {
  FlowTrajectory vac;
  for (int i = 0; i < 5; ++i) vac.samples.push_back({double(i), CriticalLoop{0, 1.0}.loop()});
  auto rep = max_principle_check(vac);
  CHECK(rep.max_u == doctest::Approx(0.5));
  CHECK(rep.pass);
  FlowTrajectory zero;
  zero.samples.push_back({0.0, LoopConfig(64)});
  CHECK(max_principle_check(zero).max_u == 0.0);
  CHECK(max_principle_check(zero).pass);
  FlowTrajectory big;
  big.samples.push_back({0.0, LoopConfig::from_grid(CVec::Constant(64, 1.01), RVec::Zero(64))});
  CHECK_FALSE(max_principle_check(big).pass);
}
