#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include "cylvortex/kw.hpp"
#include "kw_background.hpp"

namespace cylvortex {

ScalarFieldW T_map(const CylinderField& field) {
  ScalarFieldW out;
  out.grid = KWGrid{field.s_min, field.s_max, field.n_s, field.n_t};
  out.r = 1.0;
  out.u = RMat::Zero(field.n_s, field.n_t);
  out.u0 = RMat::Zero(field.n_s, field.n_t);
  out.weight = RMat::Ones(field.n_s, field.n_t);
  out.defect = RMat::Zero(field.n_s, field.n_t);
  for (int i = 0; i < field.n_s; ++i)
    for (int j = 0; j < field.n_t; ++j) {
      const double a = std::abs(field.v(i, j));
      if (a < 1e-14) {
        out.u0(i, j) = -HUGE_VAL;
        out.weight(i, j) = 0.0;
      } else {
        out.u(i, j) = 2 * std::log(a);
      }
    }
  return out;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); }
  void join(int a, int b) { parent[find(a)] = find(b); }
};

int wrapi(int j, int n) { return ((j % n) + n) % n; }
int circ_gap(int a, int b, int n) {
  const int d = std::abs(a - b) % n;
  return std::min(d, n - d);
}

// Stationary point of a least-squares quadratic through the 3x3 stencil of
// f around node (i, j), in cell units. Falls back to (0, 0).
std::pair<double, double> quadratic_refine(const std::function<double(int, int)>& f, double ds, double dt) {
  Eigen::Matrix<double, 9, 6> A;
  Eigen::Matrix<double, 9, 1> b;
  int k = 0;
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj) {
      const double x = di * ds, y = dj * dt;
      A.row(k) << 1, x, y, x * x, y * y, x * y;
      b[k] = f(di, dj);
      ++k;
    }
  const Eigen::Matrix<double, 6, 1> c = A.colPivHouseholderQr().solve(b);
  Eigen::Matrix2d H;
  H << 2 * c[3], c[5], c[5], 2 * c[4];
  if (!(H.determinant() > 0) || !(H(0, 0) > 0)) return {0.0, 0.0};
  const Eigen::Vector2d p = H.ldlt().solve(Eigen::Vector2d(-c[1], -c[2]));
  const double pi = p[0] / ds, pj = p[1] / dt;
  if (!std::isfinite(pi) || !std::isfinite(pj) || std::abs(pi) > 1 || std::abs(pj) > 1) return {0.0, 0.0};
  return {pi, pj};
}

double field_flux(const CylinderField& f) {
  double flux = 0;
  for (int i = 0; i < f.n_s; ++i) {
    const double wt = (i == 0 || i == f.n_s - 1) ? 0.5 : 1.0;
    flux += wt * (1.0 - f.v.row(i).cwiseAbs2().array()).sum();
  }
  return flux * f.ds() * f.dt() / (4 * kPi);
}

}  // namespace

VortexSet J_map(const CylinderField& f) {
  const int ns = f.n_s, nt = f.n_t;
  // only exact zeros; |v| can be far below 1e-14 inside a multi-vortex tube
  auto zero = [&](int i, int j) { return f.v(i, wrapi(j, nt)) == cplx(0.0); };
  auto edge = [&](int i0, int j0, int i1, int j1) {
    return std::arg(f.v(i1, wrapi(j1, nt)) / f.v(i0, wrapi(j0, nt)));
  };

  // items: nonzero-winding plaquettes (lower-left corner) and exact zeros at nodes
  struct Item {
    int i, j;
  };
  std::vector<Item> items;
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j)
      if (zero(i, j)) items.push_back({i, j});
  for (int i = 0; i + 1 < ns; ++i)
    for (int j = 0; j < nt; ++j) {
      if (zero(i, j) || zero(i + 1, j) || zero(i + 1, j + 1) || zero(i, j + 1)) continue;
      const double wsum = edge(i, j, i + 1, j) + edge(i + 1, j, i + 1, j + 1) + edge(i + 1, j + 1, i, j + 1) +
                          edge(i, j + 1, i, j);
      if (std::lround(wsum / kTwoPi) != 0) items.push_back({i, j});
    }

  UnionFind uf(static_cast<int>(items.size()));
  for (std::size_t a = 0; a < items.size(); ++a)
    for (std::size_t b = a + 1; b < items.size(); ++b)
      if (std::abs(items[a].i - items[b].i) <= 2 && circ_gap(items[a].j, items[b].j, nt) <= 2)
        uf.join(static_cast<int>(a), static_cast<int>(b));
  std::map<int, std::vector<Item>> clusters;
  for (std::size_t a = 0; a < items.size(); ++a) clusters[uf.find(static_cast<int>(a))].push_back(items[a]);

  std::vector<Vortex> found;
  for (const auto& [root, its] : clusters) {
    // unwrap j relative to the first item
    int i0 = its[0].i, i1 = its[0].i, j0 = its[0].j, j1 = its[0].j;
    for (const auto& it : its) {
      int j = it.j;
      if (j - its[0].j > nt / 2) j -= nt;
      if (its[0].j - j > nt / 2) j += nt;
      i0 = std::min(i0, it.i);
      i1 = std::max(i1, it.i);
      j0 = std::min(j0, j);
      j1 = std::max(j1, j);
    }
    // enclosing rectangle of nodes
    int a0 = i0 - 1, a1 = i1 + 2, b0 = j0 - 1, b1 = j1 + 2;
    if (a0 < 0 || a1 > ns - 1) throw InconsistentField("J_map: zero touches the s-boundary");
    std::vector<std::pair<int, int>> loop;
    for (int i = a0; i < a1; ++i) loop.push_back({i, b0});
    for (int j = b0; j < b1; ++j) loop.push_back({a1, j});
    for (int i = a1; i > a0; --i) loop.push_back({i, b1});
    for (int j = b1; j > b0; --j) loop.push_back({a0, j});
    double wsum = 0;
    for (std::size_t k = 0; k < loop.size(); ++k) {
      const auto [ia, ja] = loop[k];
      const auto [ib, jb] = loop[(k + 1) % loop.size()];
      if (zero(ia, ja)) throw InconsistentField("J_map: zeros are not isolated at grid resolution");
      wsum += edge(ia, ja, ib, jb);
    }
    const long m = std::lround(wsum / kTwoPi);
    if (m == 0) continue;
    if (m < 0) throw InconsistentField("J_map: negative winding");

    // node of smallest |v| inside the rectangle
    int bi = a0 + 1, bj = b0 + 1;
    double best = HUGE_VAL;
    for (int i = a0 + 1; i < a1; ++i)
      for (int j = b0 + 1; j < b1; ++j) {
        const double a = std::abs(f.v(i, wrapi(j, nt)));
        if (a < best) {
          best = a;
          bi = i;
          bj = j;
        }
      }
    double pi = 0, pj = 0;
    if (best > 0 && bi > 0 && bi < ns - 1) {
      const double inv = 2.0 / static_cast<double>(m);
      std::tie(pi, pj) = quadratic_refine(
          [&](int di, int dj) { return std::pow(std::abs(f.v(bi + di, wrapi(bj + dj, nt))), inv); }, f.ds(),
          f.dt());
    }
    found.push_back({f.s(bi) + pi * f.ds(), (bj + pj) * f.dt(), static_cast<int>(m)});
  }
  VortexSet vs(found);
  const double flux = field_flux(f);
  if (std::lround(flux) != vs.N()) {
    std::ostringstream msg;
    msg << "J_map: total winding " << vs.N() << " does not match flux " << flux;
    throw InconsistentField(msg.str());
  }
  return vs;
}

VortexSet J_map(const ScalarFieldW& wf) {
  const KWGrid& g = wf.grid;
  const int ns = g.n_s, nt = g.n_t;
  const RMat w = wf.w();
  // box half-widths of about half a unit in each direction
  const int hi = std::max(2, static_cast<int>(std::lround(0.5 / g.ds())));
  const int hj = std::max(2, static_cast<int>(std::lround(0.5 / g.dt())));
  auto W = [&](int i, int j) { return w(i, wrapi(j, nt)); };

  std::vector<std::pair<int, int>> cand;
  for (int i = 1; i < ns - 1; ++i)
    for (int j = 0; j < nt; ++j) {
      bool is_min = true;
      for (int di = -1; di <= 1 && is_min; ++di)
        for (int dj = -1; dj <= 1 && is_min; ++dj)
          if ((di || dj) && W(i + di, j + dj) < W(i, j)) is_min = false;
      if (is_min) cand.push_back({i, j});
    }
  // the smooth part has no interior minima in practice; filter by flux
  std::vector<Vortex> found;
  std::vector<std::pair<int, int>> used;
  std::sort(cand.begin(), cand.end(), [&](auto a, auto b) { return W(a.first, a.second) < W(b.first, b.second); });
  for (const auto& [ci, cj] : cand) {
    bool covered = false;
    for (const auto& [ui, uj] : used)
      if (std::abs(ui - ci) <= hi && circ_gap(uj, cj, nt) <= hj) covered = true;
    if (covered) continue;
    const int a0 = ci - hi, a1 = ci + hi, b0 = cj - hj, b1 = cj + hj;
    if (a0 < 0 || a1 > ns - 1) continue;
    // outward normal flux by centered differences across the box faces
    double flux = 0;
    for (int j = b0; j < b1; ++j) {
      const double wlo = 0.5 * ((W(a0, j) - W(a0 + 1, j)) + (W(a0, j + 1) - W(a0 + 1, j + 1)));
      const double whi = 0.5 * ((W(a1, j) - W(a1 - 1, j)) + (W(a1, j + 1) - W(a1 - 1, j + 1)));
      flux += (wlo + whi) / g.ds() * g.dt();
    }
    for (int i = a0; i < a1; ++i) {
      const double wlo = 0.5 * ((W(i, b0) - W(i, b0 + 1)) + (W(i + 1, b0) - W(i + 1, b0 + 1)));
      const double whi = 0.5 * ((W(i, b1) - W(i, b1 - 1)) + (W(i + 1, b1) - W(i + 1, b1 - 1)));
      flux += (wlo + whi) / g.dt() * g.ds();
    }
    // remove the smooth source: Laplacian of w is e^w - 1 away from poles
    const RMat ew = wf.exp_w();
    double area = 0;
    for (int i = a0 + 1; i < a1; ++i)
      for (int j = b0 + 1; j < b1; ++j) area += ew(i, wrapi(j, nt)) - 1.0;
    area *= g.ds() * g.dt();
    const long m = std::lround((flux - area) / (4 * kPi));
    if (m <= 0) continue;
    used.push_back({ci, cj});
    double pi = 0, pj = 0;
    if (!wf.singular(ci, wrapi(cj, nt))) {
      const double inv = 1.0 / static_cast<double>(m);
      std::tie(pi, pj) = quadratic_refine([&](int di, int dj) { return std::exp(inv * W(ci + di, cj + dj)); },
                                          g.ds(), g.dt());
    }
    found.push_back({g.s(ci) + pi * g.ds(), (cj + pj) * g.dt(), static_cast<int>(m)});
  }
  VortexSet vs(found);
  const RMat ew = wf.exp_w();
  double total = 0;
  for (int i = 0; i < ns; ++i) total += ((i == 0 || i == ns - 1) ? 0.5 : 1.0) * (1.0 - ew.row(i).array()).sum();
  total *= g.ds() * g.dt() / (4 * kPi);
  if (std::lround(total) != vs.N()) {
    std::ostringstream msg;
    msg << "J_map: pole count " << vs.N() << " does not match flux " << total;
    throw InconsistentField(msg.str());
  }
  return vs;
}

namespace {

// arg(e^{2pi(z - z0)} - 1) without overflow
double arg_E(const Vortex& p, double s, double t) {
  const double sg = kTwoPi * (s - p.s), ta = kTwoPi * (t - p.t);
  if (sg > 0) return std::atan2(std::sin(ta), std::cos(ta) - std::exp(-sg));
  const double e = std::exp(sg);
  return std::atan2(e * std::sin(ta), e * std::cos(ta) - 1.0);
}

// d/ds on rows: second-order central inside, second-order one-sided at the ends
RMat s_derivative(const RMat& u, double ds) {
  const int n = static_cast<int>(u.rows());
  RMat d(u.rows(), u.cols());
  for (int i = 1; i < n - 1; ++i) d.row(i) = (u.row(i + 1) - u.row(i - 1)) / (2 * ds);
  d.row(0) = (-3 * u.row(0) + 4 * u.row(1) - u.row(2)) / (2 * ds);
  d.row(n - 1) = (3 * u.row(n - 1) - 4 * u.row(n - 2) + u.row(n - 3)) / (2 * ds);
  return d;
}

}  // namespace

Reconstruction reconstruct_field(const ScalarFieldW& wf, ReconGauge gauge) {
  const KWGrid& g = wf.grid;
  const int ns = g.n_s, nt = g.n_t;
  const double r = wf.r;
  if (gauge == ReconGauge::Radial && r != 1.0)
    throw std::invalid_argument("reconstruct: radial gauge needs r = 1");
  const VortexSet& vs = wf.vortices;

  // phi = w/2 - sum m ln|E_j| = u/2 + psi, psi smooth and known in closed form
  RMat psi_s(ns, nt), psi_t(ns, nt), psi_ss(ns, nt), phase(ns, nt);
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j) {
      const auto q = detail::background_terms(vs, g.s(i), g.t(j));
      const double ptt = detail::psi_tt(vs, g.s(i), g.t(j));
      psi_s(i, j) = q.psi_s;
      psi_t(i, j) = q.psi_t;
      psi_ss(i, j) = 0.5 * q.defect - ptt;
      double ph = 0;
      for (const auto& p : vs.points()) ph += p.m * arg_E(p, g.s(i), g.t(j));
      phase(i, j) = ph;
    }
  const RMat phi_s = 0.5 * s_derivative(wf.u, g.ds()) + psi_s;
  const RMat ew = wf.exp_w();

  Reconstruction out;
  out.field = CylinderField(g.s_min, g.s_max, ns, nt);
  RMat x_coul(ns, nt);
  RVec eta_bar(ns);
  for (int i = 0; i < ns; ++i) {
    const RVec row = phi_s.row(i).transpose();
    eta_bar[i] = row.mean();
    const RVec theta = antiderivative(row);
    CVec v(nt);
    for (int j = 0; j < nt; ++j) v[j] = std::sqrt(ew(i, j)) * std::polar(1.0, theta[j] + phase(i, j));
    out.field.v.row(i) = v.transpose();
    out.field.eta.row(i).setConstant(eta_bar[i]);
    x_coul.row(i) = xi_v_solve(v, r).transpose();
  }

  // log-derivative residual, interior rows:
  //   v-part  (phi_s - theta_t - eta_bar) + i (theta_s + phi_t + x)
  //   eta-part d/ds eta_bar + mean mu
  const double ds = g.ds();
  double acc = 0;
  for (int i = 1; i < ns - 1; ++i) {
    RVec u_ss = (wf.u.row(i + 1) - 2 * wf.u.row(i) + wf.u.row(i - 1)).transpose() / (ds * ds);
    RVec phi_ss = 0.5 * u_ss + psi_ss.row(i).transpose();
    const double ebar_s = phi_ss.mean();
    const RVec theta_s = antiderivative(phi_ss);
    const RVec phi_t = 0.5 * dt_spectral(RVec(wf.u.row(i).transpose())) + psi_t.row(i).transpose();
    const RVec imag = theta_s + phi_t + x_coul.row(i).transpose();
    const RVec mu = (0.5 * (1.0 - ew.row(i).array())).transpose();
    const double re_eta = ebar_s + mu.mean();
    for (int j = 0; j < nt; ++j) acc += ew(i, j) * imag[j] * imag[j] + re_eta * re_eta;
  }
  out.residual = std::sqrt(acc * ds * g.dt());

  if (gauge == ReconGauge::Radial) {
    // v -> e^{i th} v with d th/ds = x, eta = eta_bar - d th/dt
    RVec th = RVec::Zero(nt);
    for (int i = 0; i < ns; ++i) {
      if (i > 0) th += 0.5 * ds * (x_coul.row(i - 1) + x_coul.row(i)).transpose();
      const RVec th_t = dt_spectral(th);
      for (int j = 0; j < nt; ++j) {
        out.field.v(i, j) *= std::polar(1.0, th[j]);
        out.field.eta(i, j) = eta_bar[i] - th_t[j];
      }
    }
  }
  return out;
}

CylinderField reconstruct(const ScalarFieldW& w, const VortexSet& vortices, ReconGauge gauge) {
  if (!(vortices == w.vortices)) throw std::invalid_argument("reconstruct: vortex set differs from the solve");
  Reconstruction rec = reconstruct_field(w, gauge);
  if (rec.residual > 1e-3) {
    std::ostringstream msg;
    msg << "reconstruct: flow-equation residual " << rec.residual << " above 1e-3";
    throw InconsistentField(msg.str());
  }
  return std::move(rec.field);
}

FlowTrajectory connect_via_kw(const VortexSet& vortices, double r, double tol) {
  KWProblem p{vortices, r, KWGrid::for_vortices(vortices)};
  const ScalarFieldW w = solve_kw(p, tol);
  const CylinderField f = reconstruct(w, vortices, ReconGauge::Coulomb);
  FlowTrajectory traj = trajectory_from_field(f, FlowVariant::homotopy(r));
  const auto& d = traj.diagnostics;
  traj.converged = d.front().grad_norm < 1e-6 && d.back().grad_norm < 1e-6;
  return traj;
}

}  // namespace cylvortex
