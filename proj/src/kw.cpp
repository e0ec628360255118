#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "cylvortex/kw.hpp"
#include "kw_background.hpp"

namespace cylvortex {

double circle_dist(double a, double b) {
  double d = std::fmod(std::abs(a - b), 1.0);
  return std::min(d, 1.0 - d);
}

namespace {
double wrap01(double t) {
  double x = std::fmod(t, 1.0);
  if (x < 0) x += 1.0;
  if (x >= 1.0) x -= 1.0;
  return x;
}
}  // namespace

VortexSet::VortexSet(std::vector<Vortex> pts) {
  for (auto& p : pts) {
    if (p.m < 0) throw std::invalid_argument("VortexSet: negative multiplicity");
    if (p.m == 0) continue;
    p.t = wrap01(p.t);
    auto same = std::find_if(pts_.begin(), pts_.end(), [&](const Vortex& q) {
      return std::abs(q.s - p.s) < 1e-12 && circle_dist(q.t, p.t) < 1e-12;
    });
    if (same != pts_.end())
      same->m += p.m;
    else
      pts_.push_back(p);
  }
  std::sort(pts_.begin(), pts_.end(), [](const Vortex& a, const Vortex& b) {
    return a.s != b.s ? a.s < b.s : a.t < b.t;
  });
}

int VortexSet::N() const {
  int n = 0;
  for (const auto& p : pts_) n += p.m;
  return n;
}

double VortexSet::max_abs_s() const {
  double m = 0;
  for (const auto& p : pts_) m = std::max(m, std::abs(p.s));
  return m;
}

bool VortexSet::matches(const VortexSet& other, double tol_s, double tol_t) const {
  // expand to unit points and search for a bijection (N is small)
  auto expand = [](const VortexSet& vs) {
    std::vector<Vortex> out;
    for (const auto& p : vs.points())
      for (int k = 0; k < p.m; ++k) out.push_back({p.s, p.t, 1});
    return out;
  };
  const auto a = expand(*this), b = expand(other);
  if (a.size() != b.size()) return false;
  std::vector<int> perm(b.size());
  std::iota(perm.begin(), perm.end(), 0);
  do {
    bool ok = true;
    for (std::size_t i = 0; i < a.size() && ok; ++i)
      ok = std::abs(a[i].s - b[perm[i]].s) <= tol_s && circle_dist(a[i].t, b[perm[i]].t) <= tol_t;
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

VortexSet VortexSet::translated(double sigma, double tau) const {
  std::vector<Vortex> out = pts_;
  for (auto& p : out) {
    p.s += sigma;
    p.t += tau;
  }
  return VortexSet(out);
}

KWGrid KWGrid::for_vortices(const VortexSet& vs, int cells_per_8, int n_t) {
  double half = 8.0;
  if (vs.N() > 0) half = std::max(half, std::ceil(vs.max_abs_s() + kTwoPi * vs.N() + 10.0));
  KWGrid g;
  g.s_min = -half;
  g.s_max = half;
  g.n_s = static_cast<int>(std::lround(2 * half * cells_per_8 / 8.0)) + 1;
  g.n_t = n_t;
  return g;
}

void KWProblem::validate() const {
  if (!(r >= 0 && r <= 1)) throw std::invalid_argument("KWProblem: r must lie in [0, 1]");
  if (grid.n_s < 3 || grid.n_t < 8 || !(grid.s_min < grid.s_max))
    throw std::invalid_argument("KWProblem: bad grid");
  for (const auto& p : vortices.points())
    if (!(p.s > grid.s_min + 1 && p.s < grid.s_max - 1))
      throw std::invalid_argument("KWProblem: vortex too close to the s-boundary");
}

// --- background ---

namespace detail {

namespace {
constexpr double kC = kTwoPi;           // scale inside the log
constexpr double kAlpha = 1.0 / kTwoPi;  // G = alpha log1p(y / c)

// h(e) = log1p(e) / e and its first two derivatives
void h_terms(double e, double& h, double& hp, double& hpp) {
  if (std::abs(e) < 1e-3) {
    h = 1 - e / 2 + e * e / 3 - e * e * e / 4;
    hp = -0.5 + 2 * e / 3 - 0.75 * e * e;
    hpp = 2.0 / 3 - 1.5 * e + 2.4 * e * e;
  } else {
    h = std::log1p(e) / e;
    hp = (1 / (1 + e) - h) / e;
    hpp = (-1 / ((1 + e) * (1 + e)) - 2 * hp) / e;
  }
}
}  // namespace

PoleTerms pole_terms(const Vortex& p, double s, double t) {
  const double sg = kTwoPi * (s - p.s), ta = kTwoPi * (t - p.t);
  const double ch = std::cosh(sg), sh = std::sinh(sg), ct = std::cos(ta), st = std::sin(ta);
  // 2(cosh - cos) without cancellation near the pole
  const double y = 4 * (std::sinh(0.5 * sg) * std::sinh(0.5 * sg) + std::sin(0.5 * ta) * std::sin(0.5 * ta));
  const double ys = 2 * kTwoPi * sh, yt = 2 * kTwoPi * st;
  const double lap_y = 2 * kTwoPi * kTwoPi * (ch + ct);
  const double grad_y2 = ys * ys + yt * yt;

  const double e = y / kC;
  double h, hp, hpp;
  h_terms(e, h, hp, hpp);
  // g = h / c, q = ln g
  const double qp = hp / (h * kC);
  const double qpp = hpp / (h * kC * kC) - qp * qp;
  const double G = kAlpha * std::log1p(e);
  const double Gp = kAlpha / (kC * (1 + e));
  const double Gpp = -kAlpha / (kC * kC * (1 + e) * (1 + e));
  const double psip = -G / (1 + G * G);
  const double psipp = -(1 - G * G) / ((1 + G * G) * (1 + G * G));

  const double m = p.m;
  PoleTerms out;
  const double lng = std::log(kAlpha * h / kC);
  out.u0 = y > 0 ? m * (std::log(y) + lng - 0.5 * std::log1p(G * G)) : -HUGE_VAL;
  out.weight = std::pow(y * kAlpha * h / kC, m) * std::pow(1 + G * G, -0.5 * m);
  const double lap_q = qp * lap_y + qpp * grad_y2;
  const double lap_G = Gp * lap_y + Gpp * grad_y2;
  const double grad_G2 = Gp * Gp * grad_y2;
  out.defect = m * (lap_q + psip * lap_G + psipp * grad_G2);
  // u0/2 - m ln|E| = (m/2)(q - ln(1+G^2)/2 - sig) + const
  const double dy_coef = qp + psip * Gp;
  out.psi_s = 0.5 * m * (dy_coef * ys - kTwoPi);
  out.psi_t = 0.5 * m * dy_coef * yt;
  return out;
}

double psi_tt(const VortexSet& vs, double s, double t) {
  double acc = 0;
  for (const auto& p : vs.points()) {
    const double sg = kTwoPi * (s - p.s), ta = kTwoPi * (t - p.t);
    const double y = 4 * (std::sinh(0.5 * sg) * std::sinh(0.5 * sg) + std::sin(0.5 * ta) * std::sin(0.5 * ta));
    const double yt = 2 * kTwoPi * std::sin(ta), ytt = 2 * kTwoPi * kTwoPi * std::cos(ta);
    const double e = y / kC;
    double h, hp, hpp;
    h_terms(e, h, hp, hpp);
    const double qp = hp / (h * kC);
    const double qpp = hpp / (h * kC * kC) - qp * qp;
    const double G = kAlpha * std::log1p(e);
    const double Gp = kAlpha / (kC * (1 + e));
    const double Gpp = -kAlpha / (kC * kC * (1 + e) * (1 + e));
    const double psip = -G / (1 + G * G);
    const double psipp = -(1 - G * G) / ((1 + G * G) * (1 + G * G));
    const double first = qp + psip * Gp;
    const double second = qpp + psipp * Gp * Gp + psip * Gpp;
    acc += 0.5 * p.m * (second * yt * yt + first * ytt);
  }
  return acc;
}

PoleTerms background_terms(const VortexSet& vs, double s, double t) {
  PoleTerms acc;
  for (const auto& p : vs.points()) {
    const PoleTerms q = pole_terms(p, s, t);
    acc.u0 += q.u0;
    acc.weight *= q.weight;
    acc.defect += q.defect;
    acc.psi_s += q.psi_s;
    acc.psi_t += q.psi_t;
  }
  return acc;
}

}  // namespace detail

double background_value(const VortexSet& vs, double s, double t) {
  return detail::background_terms(vs, s, t).u0;
}

Background singular_background(const VortexSet& vs, const KWGrid& g) {
  Background b{RMat::Zero(g.n_s, g.n_t), RMat::Ones(g.n_s, g.n_t), RMat::Zero(g.n_s, g.n_t)};
  for (const auto& p : vs.points())
    if (!(p.s > g.s_min + 1 && p.s < g.s_max - 1))
      throw std::invalid_argument("singular_background: vortex too close to the s-boundary");
  if (vs.empty()) return b;
  for (int i = 0; i < g.n_s; ++i)
    for (int j = 0; j < g.n_t; ++j) {
      const auto q = detail::background_terms(vs, g.s(i), g.t(j));
      b.u0(i, j) = q.u0;
      b.weight(i, j) = q.weight;
      b.defect(i, j) = q.defect;
    }
  return b;
}

// --- Newton solver ---

namespace {

struct Workspace {
  const KWGrid& g;
  double r2;
  const RMat& weight;
  const RMat& defect;

  // residual on interior rows, (n_s - 2) x n_t
  RMat residual(const RMat& u) const {
    const int ns = g.n_s, nt = g.n_t;
    const double ids2 = 1 / (g.ds() * g.ds()), idt2 = 1 / (g.dt() * g.dt());
    RMat F(ns - 2, nt);
    for (int i = 1; i < ns - 1; ++i) {
      double mean = 0;
      for (int j = 0; j < nt; ++j) mean += weight(i, j) * std::exp(u(i, j));
      mean /= nt;
      for (int j = 0; j < nt; ++j) {
        const int jm = (j + nt - 1) % nt, jp = (j + 1) % nt;
        const double lap = (u(i - 1, j) - 2 * u(i, j) + u(i + 1, j)) * ids2 +
                           (u(i, jm) - 2 * u(i, j) + u(i, jp)) * idt2;
        F(i - 1, j) = -lap + r2 * weight(i, j) * std::exp(u(i, j)) + (1 - r2) * mean - 1 - defect(i, j);
      }
    }
    return F;
  }

  double norm(const RMat& F) const { return std::sqrt(F.squaredNorm() * g.ds() * g.dt()); }

  // Newton correction: solve J delta = F by block tridiagonal elimination.
  RMat newton_direction(const RMat& u, const RMat& F) const {
    const int M = g.n_s - 2, nt = g.n_t;
    const double ids2 = 1 / (g.ds() * g.ds()), idt2 = 1 / (g.dt() * g.dt());
    std::vector<RMat> Cinv(M);
    std::vector<RVec> rhs(M);
    for (int b = 0; b < M; ++b) {
      const int i = b + 1;
      RMat A = RMat::Zero(nt, nt);
      RVec ew(nt);
      for (int j = 0; j < nt; ++j) ew[j] = weight(i, j) * std::exp(u(i, j));
      for (int j = 0; j < nt; ++j) {
        A(j, j) = 2 * ids2 + 2 * idt2 + r2 * ew[j];
        A(j, (j + 1) % nt) -= idt2;
        A(j, (j + nt - 1) % nt) -= idt2;
      }
      if (r2 < 1) A.rowwise() += ((1 - r2) / nt) * ew.transpose();
      RVec g_b = F.row(b).transpose();
      if (b > 0) {
        A -= (ids2 * ids2) * Cinv[b - 1];
        g_b += ids2 * (Cinv[b - 1] * rhs[b - 1]);
      }
      Cinv[b] = A.partialPivLu().inverse();
      rhs[b] = std::move(g_b);
    }
    RMat delta(M, nt);
    RVec next = Cinv[M - 1] * rhs[M - 1];
    delta.row(M - 1) = next.transpose();
    for (int b = M - 2; b >= 0; --b) {
      next = Cinv[b] * (rhs[b] + ids2 * next);
      delta.row(b) = next.transpose();
    }
    return delta;
  }
};

}  // namespace

double kw_residual(const ScalarFieldW& w) {
  Workspace ws{w.grid, w.r * w.r, w.weight, w.defect};
  return ws.norm(ws.residual(w.u));
}

ScalarFieldW solve_kw(const KWProblem& problem, double tol, const RMat* initial_u, int max_iter) {
  problem.validate();
  const KWGrid& g = problem.grid;
  Background bg = singular_background(problem.vortices, g);

  ScalarFieldW out;
  out.grid = g;
  out.vortices = problem.vortices;
  out.r = problem.r;
  out.coarse_grid_warning = problem.vortices.N() > 0 && (g.ds() > 0.05 || g.dt() > 0.05);
  out.u0 = std::move(bg.u0);
  out.weight = std::move(bg.weight);
  out.defect = std::move(bg.defect);
  out.u = RMat::Zero(g.n_s, g.n_t);
  if (initial_u) {
    if (initial_u->rows() != g.n_s || initial_u->cols() != g.n_t)
      throw std::invalid_argument("solve_kw: initial guess has wrong shape");
    out.u = *initial_u;
  }
  // w = 0 on the end rows
  out.u.row(0) = -out.u0.row(0);
  out.u.row(g.n_s - 1) = -out.u0.row(g.n_s - 1);

  if (problem.vortices.empty() && !initial_u) {
    out.residual = 0;
    return out;
  }

  Workspace ws{g, problem.r * problem.r, out.weight, out.defect};
  RMat F = ws.residual(out.u);
  double res = ws.norm(F);
  int it = 0;
  const bool integro = problem.r < 1;
  while (res >= tol) {
    if (it >= max_iter) {
      std::ostringstream msg;
      msg << "solve_kw: no convergence after " << max_iter << " Newton steps (residual " << res << ")"
          << (integro ? " [integro Jacobian]" : "");
      throw KWSolveError(msg.str(), integro);
    }
    const RMat delta = ws.newton_direction(out.u, F);
    // Armijo backtracking on 1/2 |F|^2
    double lambda = 1.0;
    const double merit0 = 0.5 * res * res;
    for (;;) {
      RMat trial = out.u;
      trial.middleRows(1, g.n_s - 2) -= lambda * delta;
      RMat Ft = ws.residual(trial);
      const double rt = ws.norm(Ft);
      if (std::isfinite(rt) && 0.5 * rt * rt <= (1 - 2e-4 * lambda) * merit0) {
        out.u = std::move(trial);
        F = std::move(Ft);
        res = rt;
        break;
      }
      lambda *= 0.5;
      if (lambda < 1e-6) {
        std::ostringstream msg;
        msg << "solve_kw: line search stalled at residual " << res << (integro ? " [integro Jacobian]" : "");
        throw KWSolveError(msg.str(), integro);
      }
    }
    ++it;
  }
  out.newton_iterations = it;
  out.residual = res;
  return out;
}

KWReport verify_kw(const ScalarFieldW& w, const KWProblem& problem) {
  KWReport rep;
  const KWGrid& g = w.grid;
  rep.residual = kw_residual(w);
  const RMat ew = w.exp_w();
  double flux = 0;
  for (int i = 0; i < g.n_s; ++i) {
    const double wt = (i == 0 || i == g.n_s - 1) ? 0.5 : 1.0;
    flux += wt * (1.0 - ew.row(i).array()).sum();
  }
  rep.flux = flux * g.ds() * g.dt() / (4 * kPi);
  const RMat wf = w.w();
  rep.decay = std::max(wf.row(0).cwiseAbs().maxCoeff(), wf.row(g.n_s - 1).cwiseAbs().maxCoeff());
  rep.max_w = -HUGE_VAL;
  const bool strict = problem.vortices.N() > 0;
  for (int i = 1; i < g.n_s - 1; ++i)
    for (int j = 0; j < g.n_t; ++j) {
      if (w.singular(i, j)) continue;
      rep.max_w = std::max(rep.max_w, wf(i, j));
      if (strict ? !(wf(i, j) < 0) : wf(i, j) > 1e-14) rep.negative = false;
    }
  return rep;
}

UniquenessReport uniqueness_probe(const KWProblem& problem, int trials, double tol, unsigned seed) {
  if (trials < 2) throw std::invalid_argument("uniqueness_probe: need at least 2 trials");
  const KWGrid& g = problem.grid;
  std::mt19937 rng(seed);
  std::normal_distribution<double> nd;
  const Background bg = singular_background(problem.vortices, g);
  std::vector<RMat> sols;
  UniquenessReport rep;
  for (int k = 0; k < trials; ++k) {
    RMat init = RMat::Zero(g.n_s, g.n_t);
    if (k % 3 == 1) {
      // smooth random bump vanishing at the ends
      const double len = g.s_max - g.s_min;
      for (int a = 1; a <= 3; ++a)
        for (int b = 0; b <= 2; ++b) {
          const double ca = nd(rng) / (a * (b + 1)), cb = nd(rng) / (a * (b + 1));
          for (int i = 0; i < g.n_s; ++i)
            for (int j = 0; j < g.n_t; ++j)
              init(i, j) += std::sin(kPi * a * (g.s(i) - g.s_min) / len) *
                            (ca * std::cos(kTwoPi * b * g.t(j)) + cb * std::sin(kTwoPi * b * g.t(j)));
        }
    } else if (k % 3 == 2) {
      // start from w = u0 / 2
      init = -0.5 * bg.u0.cwiseMax(-40.0);
    }
    if (k >= 3) init *= 1.0 + 0.5 * (k / 3);
    const ScalarFieldW sol = solve_kw(problem, tol, &init);
    rep.iterations.push_back(sol.newton_iterations);
    sols.push_back(sol.u);
  }
  for (std::size_t a = 0; a < sols.size(); ++a)
    for (std::size_t b = a + 1; b < sols.size(); ++b)
      rep.max_pairwise_diff = std::max(rep.max_pairwise_diff, (sols[a] - sols[b]).cwiseAbs().maxCoeff());
  rep.pass = rep.max_pairwise_diff < 10 * tol;
  return rep;
}

}  // namespace cylvortex
