#include "cylvortex/flow.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

namespace cylvortex {

FlowVariant FlowVariant::parse(const std::string& name, double r) {
  if (name == "FULL_L2") return full();
  if (name == "COULOMB_G0") return coulomb();
  if (name == "HOMOTOPY_GR") return homotopy(r);
  if (name == "AR_L2") return ar(r);
  if (name == "WARPED") return warped();
  throw std::invalid_argument("unknown flow variant: " + name);
}

std::string FlowVariant::name() const {
  switch (tag) {
    case FlowTag::FULL_L2: return "FULL_L2";
    case FlowTag::COULOMB_G0: return "COULOMB_G0";
    case FlowTag::HOMOTOPY_GR: return "HOMOTOPY_GR";
    case FlowTag::AR_L2: return "AR_L2";
    case FlowTag::WARPED: return "WARPED";
  }
  return "?";
}

FourierWindow::FourierWindow(int mu_, int nu_) : mu(mu_), nu(nu_) {
  if (mu > nu) throw std::invalid_argument("FourierWindow: mu > nu");
}

CVec FourierWindow::project(const CVec& modes) const {
  const int n = static_cast<int>(modes.size());
  CVec out = modes;
  for (int j = 0; j < n; ++j)
    if (is_nyquist(j, n) || !contains(wavenumber(j, n))) out[j] = 0;
  return out;
}

double FourierWindow::out_mass(const LoopConfig& cfg) const {
  const int n = cfg.n_t();
  double m = 0;
  for (int j = 0; j < n; ++j)
    if (is_nyquist(j, n) || !contains(wavenumber(j, n))) m += std::norm(cfg.modes()[j]);
  return m;
}

RVec xi_v_solve(const CVec& v, double r) {
  if (r == 0.0) return RVec::Zero(v.size());
  return r * r * antiderivative(moment_map(v));
}

LoopTangent rhs(const LoopConfig& cfg, const FlowVariant& var) {
  const CVec& v = cfg.v();
  const int n = cfg.n_t();
  const CVec lin = cplx(0, -1) * dt_spectral(v);
  const RVec mu = moment_map(v);
  LoopTangent out;
  switch (var.tag) {
    case FlowTag::FULL_L2:
      out.v = lin + CVec(cfg.eta().cast<cplx>().cwiseProduct(v));
      out.eta = -mu;
      break;
    case FlowTag::COULOMB_G0:
      out.v = lin + cfg.eta_bar() * v;
      out.eta = RVec::Constant(n, -mu.mean());
      break;
    case FlowTag::HOMOTOPY_GR: {
      const RVec x = xi_v_solve(v, var.r);
      out.v = lin + cfg.eta_bar() * v;
      for (int j = 0; j < n; ++j) out.v[j] -= cplx(0, x[j]) * v[j];
      out.eta = RVec::Constant(n, -mu.mean());
      break;
    }
    case FlowTag::AR_L2: {
      const double r = var.r, eb = cfg.eta_bar();
      const RVec eta_r = (r * cfg.eta().array() + (1 - r) * eb).matrix();
      out.v = lin + CVec(eta_r.cast<cplx>().cwiseProduct(v));
      out.eta = (-r * mu.array() - (1 - r) * mu.mean()).matrix();
      break;
    }
    case FlowTag::WARPED: {
      if (v.cwiseAbs().maxCoeff() < 1e-8)
        throw std::domain_error("WARPED flow: |v| vanishes on the loop (singular metric)");
      out.v = lin + CVec(cfg.eta().cast<cplx>().cwiseProduct(v));
      out.eta = -(v.cwiseAbs2().cwiseProduct(mu));
      break;
    }
  }
  return out;
}

cplx mode_ode_step(cplx v_m, int m, LieValue eta_bar, double ds) {
  return v_m * std::exp((eta_bar + kTwoPi * m) * ds);
}

std::optional<int> dominant_mode(const LoopConfig& cfg) {
  const int n = cfg.n_t();
  const double total = cfg.modes().squaredNorm();
  if (total == 0) return std::nullopt;
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (std::norm(cfg.modes()[j]) > std::norm(cfg.modes()[best])) best = j;
  if (std::norm(cfg.modes()[best]) < 0.5 * total) return std::nullopt;
  return wavenumber(best, n);
}

namespace {

FlowDiagnostics diagnose(double s, const LoopConfig& cfg, const LoopTangent& f,
                         const FlowVariant& var, int kmax) {
  FlowDiagnostics d;
  d.s = s;
  const double ra = var.action_r();
  d.action = action(cfg, ra);
  d.grad_norm = l2_norm(f);
  d.dissipation = -l2_inner(action_gradient(cfg, ra), f);
  d.u = 0.5 * cfg.v().cwiseAbs2().mean();
  d.max_abs_v = cfg.v().cwiseAbs().maxCoeff();
  for (int k = -kmax; k <= kmax; ++k) d.mode_amp.push_back(std::abs(cfg.mode(k)));
  return d;
}

// v-part of the right-hand side minus the linear part 2 pi k + eta_bar0, in
// Fourier slots. The Coulomb flow is diagonal in modes, so it is formed there
// directly and empty modes stay exactly empty.
CVec nonlinear_modes(const LoopConfig& c, const LoopTangent& f, const FlowVariant& var, double eb0) {
  if (var.tag == FlowTag::COULOMB_G0) return CVec((c.eta_bar() - eb0) * c.modes());
  return to_modes(CVec(f.v - (cplx(0, -1) * dt_spectral(c.v()) + eb0 * c.v())));
}

// One integrating-factor Heun step; exact per mode when eta_bar is constant.
LoopConfig heun_step(const LoopConfig& y, const LoopTangent& f0, const FlowVariant& var, double h,
                     const FourierWindow& win) {
  const int n = y.n_t();
  const double eb0 = y.eta_bar();
  CVec fac(n);
  for (int j = 0; j < n; ++j) fac[j] = std::exp((kTwoPi * wavenumber(j, n) + eb0) * h);
  const CVec n0 = win.project(nonlinear_modes(y, f0, var, eb0));
  const CVec y0 = win.project(y.modes());
  LoopConfig pred = LoopConfig::from_modes((y0 + h * n0).cwiseProduct(fac), y.eta() + h * f0.eta);
  const LoopTangent f1 = rhs(pred, var);
  const CVec n1 = win.project(nonlinear_modes(pred, f1, var, eb0));
  CVec next = (y0 + 0.5 * h * n0).cwiseProduct(fac) + 0.5 * h * n1;
  return LoopConfig::from_modes(next, y.eta() + 0.5 * h * (f0.eta + f1.eta));
}

bool finite(const LoopConfig& c) { return c.v().allFinite() && c.eta().allFinite(); }

}  // namespace

FlowTrajectory integrate(const LoopConfig& init, const FlowVariant& var, double ds, double s_max,
                         double stop_tol, const IntegrateOptions& opts) {
  if (!(ds > 0)) throw std::invalid_argument("integrate: ds must be positive");
  if (!finite(init)) throw std::invalid_argument("integrate: non-finite initial data");
  const int n = init.n_t();
  const FourierWindow win = opts.window.value_or(FourierWindow(-(n / 2) + 1, n / 2 - 1));

  LoopConfig y = var.coulomb_gauge() ? coulomb_project(init).cfg : init;
  y = LoopConfig::from_modes(win.project(y.modes()), y.eta());

  FlowTrajectory traj;
  traj.variant = var;
  traj.ds = ds;
  const double est_steps = std::ceil(s_max / ds);
  const long keep_every = std::max<long>(1, static_cast<long>(std::ceil(est_steps / opts.max_snapshots)));

  double s = 0;
  LoopTangent f = rhs(y, var);
  traj.samples.push_back({s, y});
  traj.diagnostics.push_back(diagnose(s, y, f, var, opts.mode_diag_kmax));
  if (traj.diagnostics.back().grad_norm < stop_tol) {
    traj.converged = true;
    return traj;
  }

  double h = ds;
  int below = 0;
  while (s < s_max - 1e-14) {
    h = std::min(h, s_max - s);
    int rejected = 0;
    LoopConfig next;
    double a_next = 0;
    const double a_now = traj.diagnostics.back().action;
    for (;;) {
      next = heun_step(y, f, var, h, win);
      if (finite(next)) {
        a_next = action(next, var.action_r());
        if (a_next <= a_now + opts.action_slack) break;
      }
      ++traj.rejections;
      if (++rejected >= opts.max_rejections) {
        std::ostringstream msg;
        msg << "integrate: " << rejected << " step rejections at s = " << s;
        throw FlowInstability(msg.str());
      }
      h *= 0.5;
    }
    s += h;
    y = std::move(next);
    f = rhs(y, var);
    ++traj.steps;
    traj.diagnostics.push_back(diagnose(s, y, f, var, opts.mode_diag_kmax));
    below = traj.diagnostics.back().grad_norm < stop_tol ? below + 1 : 0;
    const bool done = below >= opts.settle_steps || s >= s_max - 1e-14;
    if (done || traj.steps % keep_every == 0) traj.samples.push_back({s, y});
    if (below >= opts.settle_steps) {
      traj.converged = true;
      break;
    }
    h = std::min(ds, 2 * h);
  }
  return traj;
}

ConfinementReport check_mode_confinement(const FlowTrajectory& traj, const FourierWindow& window,
                                         double tol) {
  if (traj.samples.empty()) throw std::invalid_argument("check_mode_confinement: empty trajectory");
  ConfinementReport rep;
  rep.m_start = dominant_mode(traj.samples.front().second);
  rep.m_end = dominant_mode(traj.samples.back().second);
  for (const auto& m : {rep.m_start, rep.m_end})
    if (m && !window.contains(*m)) {
      std::ostringstream msg;
      msg << "check_mode_confinement: asymptotic winding " << *m << " outside window ["
          << window.mu << ", " << window.nu << "]";
      throw std::invalid_argument(msg.str());
    }
  for (const auto& [s, cfg] : traj.samples) rep.max_out_mass = std::max(rep.max_out_mass, window.out_mass(cfg));
  rep.terminal_out_mass = window.out_mass(traj.samples.back().second);
  rep.pass = rep.terminal_out_mass < tol;
  return rep;
}

MaxPrincipleReport max_principle_check(const FlowTrajectory& traj) {
  MaxPrincipleReport rep;
  bool first = true;
  for (const auto& [s, cfg] : traj.samples) {
    const double u = 0.5 * cfg.v().cwiseAbs2().mean();
    if (first || u > rep.max_u) {
      rep.max_u = u;
      rep.s_at_max = s;
      first = false;
    }
  }
  rep.pass = rep.max_u <= 0.5 + 1e-6;
  return rep;
}

FlowTrajectory trajectory_from_field(const CylinderField& field, const FlowVariant& var) {
  FlowTrajectory traj;
  traj.variant = var;
  traj.ds = field.ds();
  traj.steps = field.n_s - 1;
  for (int i = 0; i < field.n_s; ++i) {
    LoopConfig c = field.slice(i);
    traj.diagnostics.push_back(diagnose(field.s(i), c, rhs(c, var), var, 4));
    traj.samples.push_back({field.s(i), std::move(c)});
  }
  return traj;
}

void write_trajectory(const FlowTrajectory& traj, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json meta{{"variant", traj.variant.name()},
                      {"r", traj.variant.r},
                      {"ds", traj.ds},
                      {"steps", traj.steps},
                      {"rejections", traj.rejections},
                      {"converged", traj.converged},
                      {"n_t", traj.samples.empty() ? 0 : traj.samples.front().second.n_t()},
                      {"snapshots", traj.samples.size()}};
  std::ofstream(fs::path(dir) / "meta.json") << meta.dump(2) << '\n';
  std::ofstream diag(fs::path(dir) / "diagnostics.csv");
  diag.precision(12);
  diag << "s,action,grad_norm,u,max_abs_v\n";
  for (const auto& d : traj.diagnostics)
    diag << d.s << ',' << d.action << ',' << d.grad_norm << ',' << d.u << ',' << d.max_abs_v << '\n';
  for (std::size_t i = 0; i < traj.samples.size(); ++i) {
    std::ostringstream name;
    name << "snapshot_" << std::setw(5) << std::setfill('0') << i << ".json";
    nlohmann::json snap = nlohmann::json::parse(loop_to_json(traj.samples[i].second));
    snap["s"] = traj.samples[i].first;
    std::ofstream(fs::path(dir) / name.str()) << snap.dump() << '\n';
  }
}

FlowTrajectory read_trajectory(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw std::runtime_error("read_trajectory: missing meta.json in " + dir);
  const nlohmann::json meta = nlohmann::json::parse(mf);
  FlowTrajectory traj;
  traj.variant = FlowVariant::parse(meta.at("variant").get<std::string>(), meta.at("r").get<double>());
  traj.ds = meta.at("ds").get<double>();
  traj.steps = meta.at("steps").get<int>();
  traj.rejections = meta.at("rejections").get<int>();
  traj.converged = meta.at("converged").get<bool>();
  const std::size_t count = meta.at("snapshots").get<std::size_t>();
  for (std::size_t i = 0; i < count; ++i) {
    std::ostringstream name;
    name << "snapshot_" << std::setw(5) << std::setfill('0') << i << ".json";
    std::ifstream in(fs::path(dir) / name.str());
    if (!in) throw std::runtime_error("read_trajectory: missing " + name.str());
    std::stringstream text;
    text << in.rdbuf();
    const nlohmann::json snap = nlohmann::json::parse(text.str());
    LoopConfig c = loop_from_json(text.str());
    const double s = snap.at("s").get<double>();
    traj.diagnostics.push_back(diagnose(s, c, rhs(c, traj.variant), traj.variant, 4));
    traj.samples.push_back({s, std::move(c)});
  }
  return traj;
}

}  // namespace cylvortex
