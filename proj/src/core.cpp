#include "cylvortex/core.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <unsupported/Eigen/FFT>

namespace cylvortex {

namespace {
thread_local Eigen::FFT<double> g_fft;
}

int wavenumber(int j, int n) { return j <= n / 2 ? j : j - n; }
bool is_nyquist(int j, int n) { return n % 2 == 0 && j == n / 2; }

CVec to_modes(const CVec& x) {
  CVec out;
  g_fft.fwd(out, x);
  return out / static_cast<double>(x.size());
}

CVec to_modes(const RVec& x) { return to_modes(CVec(x.cast<cplx>())); }

CVec from_modes(const CVec& c) {
  CVec out;
  g_fft.inv(out, c);
  return out * static_cast<double>(c.size());
}

RVec real_from_modes(const CVec& c) { return from_modes(c).real(); }

CVec dt_spectral(const CVec& x) {
  const int n = static_cast<int>(x.size());
  CVec c = to_modes(x);
  for (int j = 0; j < n; ++j)
    c[j] = is_nyquist(j, n) ? cplx(0) : c[j] * cplx(0, kTwoPi * wavenumber(j, n));
  return from_modes(c);
}

RVec dt_spectral(const RVec& x) { return dt_spectral(CVec(x.cast<cplx>())).real(); }

RVec antiderivative(const RVec& x) {
  const int n = static_cast<int>(x.size());
  CVec c = to_modes(x);
  c[0] = 0;
  for (int j = 1; j < n; ++j)
    c[j] = is_nyquist(j, n) ? cplx(0) : c[j] / cplx(0, kTwoPi * wavenumber(j, n));
  return real_from_modes(c);
}

CVec shift_periodic(const CVec& x, double tau) {
  const int n = static_cast<int>(x.size());
  CVec c = to_modes(x);
  for (int j = 0; j < n; ++j) {
    if (is_nyquist(j, n))
      c[j] *= std::cos(kPi * n * tau);
    else
      c[j] *= std::polar(1.0, kTwoPi * wavenumber(j, n) * tau);
  }
  return from_modes(c);
}

RVec shift_periodic(const RVec& x, double tau) {
  return shift_periodic(CVec(x.cast<cplx>()), tau).real();
}

double l2_inner(const CVec& a, const CVec& b) {
  return (a.conjugate().cwiseProduct(b)).real().sum() / static_cast<double>(a.size());
}

double l2_inner(const RVec& a, const RVec& b) { return a.dot(b) / static_cast<double>(a.size()); }

// --- LoopConfig ---

LoopConfig::LoopConfig(int n_t)
    : v_(CVec::Zero(n_t)), modes_(CVec::Zero(n_t)), eta_(RVec::Zero(n_t)) {
  if (n_t < 8) throw std::invalid_argument("LoopConfig: n_t must be >= 8");
}

LoopConfig LoopConfig::from_grid(CVec v, RVec eta) {
  if (v.size() != eta.size()) throw std::invalid_argument("LoopConfig: size mismatch");
  LoopConfig c(static_cast<int>(v.size()));
  c.modes_ = to_modes(v);
  c.v_ = std::move(v);
  c.eta_ = std::move(eta);
  return c;
}

LoopConfig LoopConfig::from_modes(const CVec& v_modes, RVec eta) {
  if (v_modes.size() != eta.size()) throw std::invalid_argument("LoopConfig: size mismatch");
  LoopConfig c(static_cast<int>(v_modes.size()));
  c.modes_ = v_modes;
  c.v_ = cylvortex::from_modes(v_modes);
  c.eta_ = std::move(eta);
  return c;
}

cplx LoopConfig::mode(int k) const {
  const int n = n_t();
  if (k <= -(n / 2) || k >= n / 2) return 0.0;
  return modes_[k >= 0 ? k : k + n];
}

LoopConfig CriticalLoop::loop(int n_t) const {
  CVec v(n_t);
  for (int j = 0; j < n_t; ++j) v[j] = v0 * std::polar(1.0, kTwoPi * m * j / n_t);
  return LoopConfig::from_grid(std::move(v), RVec::Constant(n_t, -kTwoPi * m));
}

CylinderField::CylinderField(double s_min_, double s_max_, int n_s_, int n_t_)
    : s_min(s_min_), s_max(s_max_), n_s(n_s_), n_t(n_t_),
      v(CMat::Zero(n_s_, n_t_)), eta(RMat::Zero(n_s_, n_t_)) {
  if (!(s_min < s_max) || n_s < 2 || n_t < 8)
    throw std::invalid_argument("CylinderField: bad geometry");
}

LoopConfig CylinderField::slice(int i) const {
  return LoopConfig::from_grid(v.row(i).transpose(), eta.row(i).transpose());
}

void CylinderField::set_slice(int i, const LoopConfig& c) {
  v.row(i) = c.v().transpose();
  eta.row(i) = c.eta().transpose();
}

// --- functionals ---

LieValue moment_map(cplx z) { return 0.5 * (1.0 - std::norm(z)); }

RVec moment_map(const CVec& v) { return 0.5 * (1.0 - v.cwiseAbs2().array()).matrix(); }

double floer_action(const LoopConfig& cfg) {
  const int n = cfg.n_t();
  double a = 0;
  for (int j = 0; j < n; ++j)
    if (!is_nyquist(j, n)) a += wavenumber(j, n) * std::norm(cfg.modes()[j]);
  return -kPi * a;
}

double action(const LoopConfig& cfg, double r) {
  const RVec mu = moment_map(cfg.v());
  const double mu_bar = mu.mean();
  const RVec weight = (r * mu.array() + (1 - r) * mu_bar).matrix();
  return floer_action(cfg) + l2_inner(weight, cfg.eta());
}

LoopTangent operator+(const LoopTangent& a, const LoopTangent& b) {
  return {a.v + b.v, a.eta + b.eta};
}
LoopTangent operator*(double c, const LoopTangent& a) { return {c * a.v, c * a.eta}; }
double l2_inner(const LoopTangent& a, const LoopTangent& b) {
  return l2_inner(a.v, b.v) + l2_inner(a.eta, b.eta);
}
double l2_norm(const LoopTangent& a) { return std::sqrt(l2_inner(a, a)); }

LoopTangent action_gradient(const LoopConfig& cfg, double r) {
  const RVec mu = moment_map(cfg.v());
  const RVec eta_r = (r * cfg.eta().array() + (1 - r) * cfg.eta_bar()).matrix();
  LoopTangent g;
  g.v = cplx(0, 1) * dt_spectral(cfg.v()) - CVec(eta_r.cast<cplx>().cwiseProduct(cfg.v()));
  g.eta = (r * mu.array() + (1 - r) * mu.mean()).matrix();
  return g;
}

LoopConfig gauge_transform(const CVec& h, const LoopConfig& cfg) {
  if (h.size() != cfg.n_t()) throw std::invalid_argument("gauge_transform: size mismatch");
  for (int j = 0; j < h.size(); ++j)
    if (std::abs(std::abs(h[j]) - 1.0) > 1e-9)
      throw std::invalid_argument("gauge_transform: h is not unit-valued");
  const RVec darg = (h.conjugate().cwiseProduct(dt_spectral(h))).imag();
  return LoopConfig::from_grid(h.cwiseProduct(cfg.v()), cfg.eta() - darg);
}

CoulombResult coulomb_project(const LoopConfig& cfg) {
  const int n = cfg.n_t();
  if ((cfg.eta().array() == cfg.eta()[0]).all()) return {cfg, CVec::Ones(n), RVec::Zero(n)};
  RVec xi = antiderivative(cfg.eta());
  CVec h(n);
  for (int j = 0; j < n; ++j) h[j] = std::polar(1.0, xi[j]);
  // gauge_transform would re-differentiate h; the result is known exactly
  LoopConfig out = LoopConfig::from_grid(h.cwiseProduct(cfg.v()), RVec::Constant(n, cfg.eta_bar()));
  return {std::move(out), std::move(h), std::move(xi)};
}

EnergyReport energy(const std::vector<std::pair<double, LoopConfig>>& samples, double r,
                    double conv_tol) {
  EnergyReport rep;
  if (samples.empty()) return rep;
  const LoopConfig& a = samples.front().second;
  const LoopConfig& b = samples.back().second;
  rep.energy = action(a, r) - action(b, r);
  rep.flux = rep.energy / kPi;
  rep.grad_start = l2_norm(action_gradient(a, r));
  rep.grad_end = l2_norm(action_gradient(b, r));
  rep.converged = rep.grad_start <= conv_tol && rep.grad_end <= conv_tol;
  return rep;
}

LoopConfig t2_rotate(const LoopConfig& cfg, double theta1, double theta2) {
  const double tau = theta2 / kTwoPi;
  CVec v = std::polar(1.0, theta1) * shift_periodic(cfg.v(), tau);
  return LoopConfig::from_grid(std::move(v), shift_periodic(cfg.eta(), tau));
}

// --- serialization ---

std::string loop_to_json(const LoopConfig& cfg) {
  nlohmann::json j;
  j["n_t"] = cfg.n_t();
  std::vector<double> re(cfg.n_t()), im(cfg.n_t()), eta(cfg.n_t());
  for (int k = 0; k < cfg.n_t(); ++k) {
    re[k] = cfg.v()[k].real();
    im[k] = cfg.v()[k].imag();
    eta[k] = cfg.eta()[k];
  }
  j["v_re"] = re;
  j["v_im"] = im;
  j["eta"] = eta;
  return j.dump();
}

LoopConfig loop_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const int n = j.at("n_t").get<int>();
  const auto re = j.at("v_re").get<std::vector<double>>();
  const auto im = j.at("v_im").get<std::vector<double>>();
  const auto eta = j.at("eta").get<std::vector<double>>();
  if (static_cast<int>(re.size()) != n || static_cast<int>(im.size()) != n ||
      static_cast<int>(eta.size()) != n)
    throw std::invalid_argument("loop json: array length != n_t");
  CVec v(n);
  RVec e(n);
  for (int k = 0; k < n; ++k) {
    v[k] = {re[k], im[k]};
    e[k] = eta[k];
  }
  return LoopConfig::from_grid(std::move(v), std::move(e));
}

void write_field_csv(const CylinderField& f, const std::string& csv_path,
                     const std::string& meta_path) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write " + csv_path);
  out.precision(17);
  out << "s,t,v_re,v_im,eta\n";
  for (int i = 0; i < f.n_s; ++i)
    for (int j = 0; j < f.n_t; ++j)
      out << f.s(i) << ',' << f.t(j) << ',' << f.v(i, j).real() << ',' << f.v(i, j).imag() << ','
          << f.eta(i, j) << '\n';
  nlohmann::json meta{{"s_min", f.s_min}, {"s_max", f.s_max}, {"n_s", f.n_s}, {"n_t", f.n_t}};
  std::ofstream m(meta_path);
  if (!m) throw std::runtime_error("cannot write " + meta_path);
  m << meta.dump(2) << '\n';
}

CylinderField read_field_csv(const std::string& csv_path, const std::string& meta_path) {
  std::ifstream m(meta_path);
  if (!m) throw std::runtime_error("cannot read " + meta_path);
  const auto meta = nlohmann::json::parse(m);
  CylinderField f(meta.at("s_min").get<double>(), meta.at("s_max").get<double>(),
                  meta.at("n_s").get<int>(), meta.at("n_t").get<int>());
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot read " + csv_path);
  std::string line;
  std::getline(in, line);
  for (int i = 0; i < f.n_s; ++i)
    for (int j = 0; j < f.n_t; ++j) {
      if (!std::getline(in, line)) throw std::runtime_error("field csv truncated");
      std::stringstream ss(line);
      std::string cell;
      double vals[5];
      for (double& x : vals) {
        std::getline(ss, cell, ',');
        x = std::stod(cell);
      }
      f.v(i, j) = {vals[2], vals[3]};
      f.eta(i, j) = vals[4];
    }
  return f;
}

}  // namespace cylvortex
