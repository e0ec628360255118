// Scenario runner: solve-kw, flow, morse-lab, verify.
// Exit codes: 0 all checks pass, 1 a check failed, 2 bad config or arguments,
// 3 solver failure or flow instability, 4 Palais-Smale probe failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "cylvortex/core.hpp"
#include "cylvortex/flow.hpp"
#include "cylvortex/kw.hpp"
#include "cylvortex/morse.hpp"

using namespace cylvortex;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Exit { kPass = 0, kCheckFailed = 1, kBadConfig = 2, kSolverFailed = 3, kProbeFailed = 4 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string out = "out";
  unsigned seed = 1;
  int workers = 1;
  std::string format = "csv";
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw ConfigError("config root must be an object");
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

VortexSet parse_vortices(const json& cfg) {
  std::vector<Vortex> pts;
  if (!cfg.contains("vortices")) return VortexSet(pts);
  if (!cfg["vortices"].is_array()) throw ConfigError("'vortices' must be an array");
  for (const auto& v : cfg["vortices"]) {
    Vortex p;
    p.s = get_or(v, "s", 0.0);
    p.t = get_or(v, "t", 0.0);
    p.m = get_or(v, "m", 1);
    pts.push_back(p);
  }
  try {
    return VortexSet(pts);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json vortices_json(const VortexSet& vs) {
  json a = json::array();
  for (const auto& p : vs.points()) a.push_back({{"s", p.s}, {"t", p.t}, {"m", p.m}});
  return a;
}

// results land at their index, so output order never depends on scheduling
template <class F>
void parallel_for(int count, int workers, F&& body) {
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Checks {
  json items = json::object();
  bool all = true;
  void add(const std::string& name, bool pass, json value) {
    items[name] = {{"pass", pass}, {"value", std::move(value)}};
    all = all && pass;
  }
};

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  out << std::setprecision(17) << j.dump(2) << '\n';
}

void write_summary(const fs::path& dir, const std::string& command, const Checks& checks, int exit_code,
                   const std::string& error = "") {
  json s{{"command", command}, {"pass", checks.all && exit_code == kPass}, {"exit_code", exit_code},
         {"checks", checks.items}};
  if (!error.empty()) s["error"] = error;
  write_json(dir / "summary.json", s);
  std::cout << command << ": " << (s["pass"].get<bool>() ? "PASS" : "FAIL") << '\n';
  for (auto it = checks.items.begin(); it != checks.items.end(); ++it)
    std::cout << "  " << std::left << std::setw(36) << it.key() << (it.value()["pass"].get<bool>() ? "PASS" : "FAIL")
              << "  " << it.value()["value"].dump() << '\n';
  if (!error.empty()) std::cout << "  error: " << error << '\n';
}

// rows of numbers/strings as csv, whitespace table or json records
void write_table(const fs::path& base, const std::string& format, const std::vector<std::string>& header,
                 const std::vector<std::vector<json>>& rows) {
  if (format == "json") {
    json a = json::array();
    for (const auto& r : rows) {
      json o;
      for (size_t c = 0; c < header.size(); ++c) o[header[c]] = r[c];
      a.push_back(o);
    }
    write_json(base.string() + ".json", a);
    return;
  }
  const bool csv = format == "csv";
  std::ofstream out(base.string() + (csv ? ".csv" : ".dat"));
  out << std::setprecision(12);
  if (!csv) out << "# ";
  for (size_t c = 0; c < header.size(); ++c) out << (c ? (csv ? "," : " ") : "") << header[c];
  out << '\n';
  for (const auto& r : rows) {
    for (size_t c = 0; c < r.size(); ++c) {
      if (c) out << (csv ? "," : " ");
      if (r[c].is_string())
        out << r[c].get<std::string>();
      else if (r[c].is_boolean())
        out << (r[c].get<bool>() ? 1 : 0);
      else
        out << r[c].get<double>();
    }
    out << '\n';
  }
}

json num_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

// ---------------------------------------------------------------- solve-kw

int cmd_solve_kw(const Common& c) {
  const fs::path dir = c.out;
  fs::create_directories(dir);
  Checks checks;
  json cfg = load_config(c.config);
  VortexSet vs = parse_vortices(cfg);
  const double r = get_or(cfg, "r", 1.0);
  const double tol = get_or(cfg, "tol", 1e-8);
  const int trials = get_or(cfg, "uniqueness_trials", 0);
  KWGrid grid = KWGrid::for_vortices(vs, get_or(cfg, "cells_per_8", 64), get_or(cfg, "n_t", 64));
  if (cfg.contains("grid")) {
    const json& g = cfg["grid"];
    grid = KWGrid{get_or(g, "s_min", grid.s_min), get_or(g, "s_max", grid.s_max), get_or(g, "n_s", grid.n_s),
                  get_or(g, "n_t", grid.n_t)};
  }
  KWProblem problem{vs, r, grid};
  try {
    problem.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const std::string gauge_name = get_or<std::string>(cfg, "gauge", r == 1.0 ? "radial" : "coulomb");
  if (gauge_name != "radial" && gauge_name != "coulomb") throw ConfigError("gauge must be radial or coulomb");
  if (gauge_name == "radial" && r != 1.0) throw ConfigError("radial reconstruction needs r = 1");
  const ReconGauge gauge = gauge_name == "radial" ? ReconGauge::Radial : ReconGauge::Coulomb;

  auto t0 = std::chrono::steady_clock::now();
  ScalarFieldW w;
  try {
    w = solve_kw(problem, tol);
  } catch (const KWSolveError& e) {
    write_summary(dir, "solve-kw", checks, kSolverFailed, e.what());
    return kSolverFailed;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  KWReport rep = verify_kw(w, problem);

  const RMat wf = w.w();
  std::vector<std::vector<json>> rows;
  for (int i = 0; i < grid.n_s; ++i)
    for (int j = 0; j < grid.n_t; ++j) rows.push_back({grid.s(i), grid.t(j), num_or_null(wf(i, j))});
  if (c.format != "json")
    for (auto& row : rows)
      if (row[2].is_null()) row[2] = "-inf";
  write_table(dir / "w", c.format, {"s", "t", "w"}, rows);

  const int n = vs.N();
  checks.add("flux", std::abs(rep.flux - n) < 1e-3, rep.flux);
  checks.add("residual", rep.residual < 1e-6, rep.residual);
  checks.add("w_nonpositive", rep.negative, rep.max_w);
  checks.add("decay", rep.decay < 1e-6, rep.decay);

  json report{{"vortices", vortices_json(vs)},
              {"r", r},
              {"grid", {{"s_min", grid.s_min}, {"s_max", grid.s_max}, {"n_s", grid.n_s}, {"n_t", grid.n_t}}},
              {"newton_iterations", w.newton_iterations},
              {"seconds", seconds},
              {"residual", rep.residual},
              {"flux", rep.flux},
              {"decay", rep.decay},
              {"max_w", rep.max_w},
              {"coarse_grid_warning", w.coarse_grid_warning}};

  if (n == 0) {
    checks.add("w_zero", rep.max_w == 0.0 && wf.cwiseAbs().maxCoeff() == 0.0, wf.cwiseAbs().maxCoeff());
  } else {
    VortexSet found = J_map(w);
    bool match = found.matches(vs, grid.ds(), grid.dt());
    report["recovered"] = vortices_json(found);
    checks.add("positions", match, vortices_json(found));
    try {
      Reconstruction rec = reconstruct_field(w, gauge);
      CylinderField field = reconstruct(w, vs, gauge);
      write_field_csv(field, (dir / "field.csv").string(), (dir / "field.meta.json").string());
      VortexSet from_field = J_map(field);
      report["reconstruction"] = {{"gauge", gauge_name}, {"residual", rec.residual}};
      checks.add("field_positions", from_field.matches(vs, grid.ds(), grid.dt()), vortices_json(from_field));
      if (gauge == ReconGauge::Radial) {
        FlowTrajectory traj = trajectory_from_field(field, FlowVariant::full());
        EnergyReport e = energy(traj.samples, 1.0);
        report["energy"] = {{"energy", e.energy}, {"flux", e.flux}};
        checks.add("energy", std::abs(e.energy - kPi * n) < 0.01 * kPi * n, e.energy);
      }
    } catch (const InconsistentField& e) {
      checks.add("reconstruction", false, e.what());
    }
  }
  if (trials > 1) {
    UniquenessReport u = uniqueness_probe(problem, trials, tol, c.seed);
    report["uniqueness"] = {{"max_pairwise_diff", u.max_pairwise_diff}, {"iterations", u.iterations}};
    checks.add("uniqueness", u.max_pairwise_diff < 1e-6, u.max_pairwise_diff);
  }
  write_json(dir / "report.json", report);
  const int code = checks.all ? kPass : kCheckFailed;
  write_summary(dir, "solve-kw", checks, code);
  return code;
}

// ---------------------------------------------------------------- flow

struct SweepRow {
  double r = 0;
  MaxPrincipleReport mp;
  ConfinementReport conf;
  VortexSet zeros;
  double energy = 0;
};

int cmd_flow(const Common& c) {
  const fs::path dir = c.out;
  fs::create_directories(dir);
  Checks checks;
  json cfg = load_config(c.config);
  const std::string start = get_or<std::string>(cfg, "start", "kw");
  const bool sweep = get_or(cfg, "r_sweep", false);
  const double r = get_or(cfg, "r", 0.0);
  if (!(r >= 0 && r <= 1)) throw ConfigError("r must lie in [0,1]");
  const double tol = get_or(cfg, "tol", 1e-8);
  json report;

  try {
    if (start == "kw" || sweep) {
      VortexSet vs = parse_vortices(cfg);
      if (vs.N() == 0) throw ConfigError("kw start needs at least one vortex");
      const FourierWindow window(0, vs.N());
      std::vector<double> rs = sweep ? std::vector<double>{0, 0.25, 0.5, 0.75, 1} : std::vector<double>{r};
      std::vector<SweepRow> out(rs.size());
      std::vector<FlowTrajectory> trajs(rs.size());
      parallel_for(static_cast<int>(rs.size()), c.workers, [&](int i) {
        KWProblem p{vs, rs[i], KWGrid::for_vortices(vs)};
        ScalarFieldW w = solve_kw(p, tol);
        CylinderField f = reconstruct(w, vs, ReconGauge::Coulomb);
        trajs[i] = trajectory_from_field(f, FlowVariant::homotopy(rs[i]));
        out[i].r = rs[i];
        out[i].mp = max_principle_check(trajs[i]);
        out[i].conf = check_mode_confinement(trajs[i], window, 1e-6);
        out[i].zeros = J_map(f);
        out[i].energy = energy(trajs[i].samples, 1.0).energy;
      });
      std::vector<std::vector<json>> rows;
      json rep_rows = json::array();
      for (size_t i = 0; i < rs.size(); ++i) {
        const auto& row = out[i];
        std::ostringstream tag;
        tag << "r=" << row.r;
        checks.add("max_principle " + tag.str(), row.mp.pass, row.mp.max_u);
        checks.add("energy " + tag.str(), std::abs(row.energy - kPi * vs.N()) < 0.01 * kPi * vs.N(), row.energy);
        if (row.r == 0.0) checks.add("mode_confinement r=0", row.conf.pass, row.conf.terminal_out_mass);
        for (const auto& z : row.zeros.points())
          rows.push_back({row.r, z.s, z.t, static_cast<double>(z.m), row.mp.max_u, row.conf.terminal_out_mass});
        rep_rows.push_back({{"r", row.r},
                            {"max_u", row.mp.max_u},
                            {"terminal_out_mass", row.conf.terminal_out_mass},
                            {"max_out_mass", row.conf.max_out_mass},
                            {"m_start", row.conf.m_start.value_or(-999)},
                            {"m_end", row.conf.m_end.value_or(-999)},
                            {"energy", row.energy},
                            {"zeros", vortices_json(row.zeros)}});
        std::ostringstream sub;
        sub << "trajectory_r" << std::fixed << std::setprecision(2) << row.r;
        write_trajectory(trajs[i], (dir / sub.str()).string());
      }
      write_table(dir / "sweep", c.format, {"r", "s", "t", "m", "max_u", "terminal_out_mass"}, rows);
      report = {{"vortices", vortices_json(vs)}, {"window", {0, vs.N()}}, {"rows", rep_rows}};
    } else if (start == "critical" || start == "loop") {
      LoopConfig init(64);
      if (start == "critical") {
        const int m = get_or(cfg, "m", 0);
        const double phase = get_or(cfg, "phase", 0.0);
        init = CriticalLoop{m, std::polar(1.0, phase)}.loop(get_or(cfg, "n_t", 64));
      } else {
        if (!cfg.contains("loop")) throw ConfigError("loop start needs a 'loop' object");
        init = loop_from_json(cfg["loop"].dump());
      }
      const std::string vname = get_or<std::string>(cfg, "variant", "FULL_L2");
      FlowVariant var;
      try {
        var = FlowVariant::parse(vname, r);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      IntegrateOptions opts;
      if (cfg.contains("window")) {
        auto wv = cfg["window"].get<std::vector<int>>();
        if (wv.size() != 2 || wv[0] > wv[1]) throw ConfigError("window must be [mu, nu] with mu <= nu");
        opts.window = FourierWindow(wv[0], wv[1]);
      }
      const double ds = get_or(cfg, "ds", 1e-3);
      const double s_max = get_or(cfg, "s_max", 1.0);
      const double stop_tol = get_or(cfg, "stop_tol", 1e-8);
      FlowTrajectory traj = integrate(init, var, ds, s_max, stop_tol, opts);
      write_trajectory(traj, (dir / "trajectory").string());
      MaxPrincipleReport mp = max_principle_check(traj);
      bool monotone = true;
      for (size_t i = 1; i < traj.diagnostics.size(); ++i)
        monotone = monotone && traj.diagnostics[i].action <= traj.diagnostics[i - 1].action + 1e-9;
      checks.add("action_monotone", monotone, traj.diagnostics.back().action - traj.diagnostics.front().action);
      if (start == "critical") checks.add("stationary", traj.steps == 0, traj.steps);
      report = {{"variant", var.name()}, {"steps", traj.steps},     {"rejections", traj.rejections},
                {"converged", traj.converged}, {"max_u", mp.max_u}, {"final_action", traj.diagnostics.back().action}};
    } else {
      throw ConfigError("start must be kw, critical or loop");
    }
  } catch (const FlowInstability& e) {
    write_summary(dir, "flow", checks, kSolverFailed, e.what());
    return kSolverFailed;
  } catch (const KWSolveError& e) {
    write_summary(dir, "flow", checks, kSolverFailed, e.what());
    return kSolverFailed;
  } catch (const InconsistentField& e) {
    write_summary(dir, "flow", checks, kSolverFailed, e.what());
    return kSolverFailed;
  }
  write_json(dir / "report.json", report);
  const int code = checks.all ? kPass : kCheckFailed;
  write_summary(dir, "flow", checks, code);
  return code;
}

// ---------------------------------------------------------------- morse-lab

RMat matrix_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw ConfigError(std::string(what) + " must be a nested array");
  const int rows = static_cast<int>(j.size()), cols = static_cast<int>(j[0].size());
  RMat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols) throw ConfigError(std::string(what) + " is ragged");
    for (int k = 0; k < cols; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

// random quadratic system with a prescribed restricted Hessian diag(d)
struct QuadraticCase {
  RMat Q, A;
  int neg = 0, zero = 0;
};

QuadraticCase random_quadratic(std::mt19937_64& rng, int n_max, int k_max) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> mag(0.1, 2.0);
  QuadraticCase qc;
  const int n = std::uniform_int_distribution<int>(2, n_max)(rng);
  const int k = std::uniform_int_distribution<int>(1, std::min(k_max, n - 1))(rng);
  const int m = n - k;
  RMat R(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) R(i, j) = nd(rng);
  RMat O = Eigen::HouseholderQR<RMat>(R).householderQ();
  RMat block = RMat::Zero(n, n);
  for (int i = 0; i < m; ++i) {
    int kind = std::uniform_int_distribution<int>(0, 2)(rng);
    block(i, i) = kind == 0 ? 0.0 : (kind == 1 ? -mag(rng) : mag(rng));
    qc.neg += kind == 1;
    qc.zero += kind == 0;
  }
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) block(i, m + j) = block(m + j, i) = nd(rng);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j <= i; ++j) block(m + i, m + j) = block(m + j, m + i) = nd(rng);
  qc.Q = O * block * O.transpose();
  RMat L(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) L(i, j) = nd(rng) + (i == j ? 3.0 : 0.0);
  qc.A = L * O.rightCols(k).transpose();
  return qc;
}

int restricted_inertia(const RMat& Q, const RMat& A, int* kernel) {
  Eigen::FullPivLU<RMat> lu(A);
  RMat Z = lu.kernel();
  Eigen::HouseholderQR<RMat> qr(Z);
  RMat Zo = qr.householderQ() * RMat::Identity(Z.rows(), Z.cols());
  HessianIndex h = matrix_inertia(Zo.transpose() * Q * Zo);
  *kernel = h.kernel_dim;
  return h.index;
}

int cmd_morse_lab(const Common& c) {
  const fs::path dir = c.out;
  fs::create_directories(dir);
  Checks checks;
  json cfg = load_config(c.config);
  const std::string fixture = get_or<std::string>(cfg, "fixture", "all");
  const std::vector<std::string> known = {"all", "quadratic", "custom_quadratic", "hopf", "norlag"};
  if (std::find(known.begin(), known.end(), fixture) == known.end()) throw ConfigError("unknown fixture " + fixture);
  const bool all = fixture == "all";
  json report = json::object();
  bool probe_failed = false;

  if (all || fixture == "quadratic") {
    const int trials = get_or(cfg, "trials", 100);
    const int n_max = get_or(cfg, "n_max", 10), k_max = get_or(cfg, "k_max", 3);
    if (n_max < 2 || k_max < 1) throw ConfigError("need n_max >= 2 and k_max >= 1");
    std::mt19937_64 rng(c.seed);
    std::vector<QuadraticCase> cases;
    for (int i = 0; i < trials; ++i) cases.push_back(random_quadratic(rng, n_max, k_max));
    std::vector<std::vector<json>> rows(trials);
    std::vector<int> ok(trials, 0);
    parallel_for(trials, c.workers, [&](int i) {
      const auto& qc = cases[i];
      ConstrainedSystem sys = quadratic_system(qc.Q, qc.A);
      Homotopy hom(sys, HomotopyParams{1.0, 1e6});
      HessianIndex hf = hessian_index(hom, {RVec::Zero(sys.n), RVec::Zero(sys.k)}, 0.0);
      int ker_r = 0;
      int ind_r = restricted_inertia(qc.Q, qc.A, &ker_r);
      ok[i] = hf.index == ind_r + sys.k && hf.kernel_dim == ker_r && ind_r == qc.neg && ker_r == qc.zero;
      rows[i] = {static_cast<double>(i), static_cast<double>(sys.n), static_cast<double>(sys.k),
                 static_cast<double>(ind_r), static_cast<double>(hf.index), static_cast<double>(ker_r),
                 static_cast<double>(hf.kernel_dim), static_cast<bool>(ok[i])};
    });
    int good = static_cast<int>(std::count(ok.begin(), ok.end(), 1));
    write_table(dir / "index_table", c.format, {"case", "n", "k", "ind_restricted", "ind_F", "ker_restricted", "ker_F", "ok"},
                rows);
    checks.add("index_relation", good == trials, good);
    report["quadratic"] = {{"trials", trials}, {"matching", good}};
  }

  if (fixture == "custom_quadratic") {
    RMat Q = matrix_from_json(cfg.value("Q", json()), "Q");
    RMat A = matrix_from_json(cfg.value("A", json()), "A");
    if (Q.rows() != Q.cols() || A.cols() != Q.rows()) throw ConfigError("Q must be n x n and A k x n");
    ConstrainedSystem sys = quadratic_system(Q, A);
    Homotopy hom(sys, HomotopyParams{1.0, 1e6});
    HessianIndex hf = hessian_index(hom, {RVec::Zero(sys.n), RVec::Zero(sys.k)}, 0.0);
    int ker_r = 0;
    int ind_r = restricted_inertia(Q, A, &ker_r);
    checks.add("index_relation", hf.index == ind_r + sys.k && hf.kernel_dim == ker_r,
               {{"ind_F", hf.index}, {"ind_restricted", ind_r}, {"k", sys.k}});
    report["custom_quadratic"] = {{"ind_F", hf.index}, {"ker_F", hf.kernel_dim}, {"ind_restricted", ind_r},
                                  {"ker_restricted", ker_r}, {"ambiguous", hf.ambiguous}};
  }

  if (all || fixture == "norlag") {
    std::vector<double> kappas = get_or(cfg, "kappas", std::vector<double>{1, 10, 100});
    const double w0 = get_or(cfg, "w0", 1e-3), w1 = get_or(cfg, "w1", 0.1), s_end = get_or(cfg, "s_end", 3.0);
    auto fq = [](const RVec& q) { return 0.01 * std::sin(q(0)); };
    auto gq = [](const RVec& q) { return RVec(RVec::Constant(1, 0.01 * std::cos(q(0)))); };
    auto hq = [](const RVec& q) { return RMat(RMat::Constant(1, 1, -0.01 * std::sin(q(0)))); };
    ConstrainedSystem flat = flat_system(1, 1, fq, gq, hq);
    json rows = json::array();
    double worst = 0;
    for (double kappa : kappas) {
      Homotopy hom(flat, HomotopyParams{1.0, kappa});
      const double rk = std::sqrt(kappa);
      RVec x0(2), v0(1);
      x0 << 0.4, w0 + w1;
      v0 << -rk * (w0 - w1);
      MorseFlowOptions opts;
      opts.s_max = s_end;
      MorseTrajectory tr = integrate_flow_line(hom, 1.0, {x0, v0}, 1e-3, 0.0, opts);
      NormalFormTrajectory nf =
          normal_form_flow(kappa, RVec::Constant(1, 0.4), RVec::Constant(1, w0), RVec::Constant(1, w1), gq, s_end, 1e-3);
      double sup = 0;
      for (size_t i = 0; i < std::min(tr.s.size(), nf.s.size()); ++i) {
        sup = std::max(sup, std::abs(tr.states[i].x(0) - nf.q[i](0)));
        sup = std::max(sup, std::abs(tr.states[i].x(1) - nf.w[i](0)));
        sup = std::max(sup, std::abs(tr.states[i].vstar(0) - nf.vstar[i](0)));
      }
      if (tr.s.size() != nf.s.size()) sup = HUGE_VAL;
      worst = std::max(worst, sup);
      rows.push_back({{"kappa", kappa}, {"sup_error", num_or_null(sup)}});
    }
    checks.add("closed_form", worst < 1e-6, num_or_null(worst));
    report["norlag"] = rows;
  }

  if (all || fixture == "hopf") {
    ConstrainedSystem sys = hopf_example();
    const double delta = get_or(cfg, "delta", 0.5);
    HomotopyParams params = HomotopyParams::for_system(sys, delta);
    if (cfg.contains("kappa")) params.kappa = cfg["kappa"].get<double>();
    try {
      params.validate(sys);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    Homotopy hom(sys, params);
    json idx = json::array();
    bool stable = true;
    for (double r : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      RVec top(4), bottom(4);
      top << 1, 0, 0, 0;
      bottom << 0, 0, 1, 0;
      HessianIndex a = hessian_index(hom, {top, RVec::Zero(1)}, r);
      HessianIndex b = hessian_index(hom, {bottom, RVec::Constant(1, -(1 - r) * kTwoPi)}, r);
      stable = stable && a.index == 3 && b.index == 1 && a.kernel_dim == 1 && b.kernel_dim == 1;
      idx.push_back({{"r", r}, {"index_max", a.index}, {"index_min", b.index}, {"kernel_max", a.kernel_dim},
                     {"kernel_min", b.kernel_dim}});
    }
    checks.add("index_difference", stable, 2);

    std::vector<double> schedule = get_or(cfg, "radius_schedule", std::vector<double>{1, 2, 3, 5, 7, 10});
    PSProbeReport ps = palais_smale_probe(hom, schedule, c.seed, get_or(cfg, "ps_samples", 300));
    json ps_json{{"r", ps.r_values}, {"K0_radius", ps.K0_radius}, {"epsilon_estimate", ps.epsilon_estimate},
                 {"certified", ps.certified}};
    json per_r = json::array();
    for (size_t i = 0; i < ps.r_values.size(); ++i)
      per_r.push_back({{"r", ps.r_values[i]}, {"radius", num_or_null(ps.radius[i])}, {"epsilon", ps.epsilon[i]}});
    ps_json["per_r"] = per_r;
    checks.add("palais_smale", ps.certified, {{"K0_radius", ps.K0_radius}, {"epsilon", ps.epsilon_estimate}});
    probe_failed = !ps.certified;

    const int mesh = get_or(cfg, "mesh", 4);
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> ang(0, kTwoPi);
    const double ra = ang(rng), rb = ang(rng);
    std::vector<ModuliReport> mr(2);
    parallel_for(2, c.workers, [&](int i) {
      mr[i] = i == 0 ? moduli_count_hopf(params, 0, 0, mesh) : moduli_count_hopf(params, ra, rb, mesh);
    });
    checks.add("moduli_count", mr[0].count == 1 && mr[0].unconverged == 0, mr[0].count);
    checks.add("moduli_count_rotated", mr[1].count == 1 && mr[1].unconverged == 0, mr[1].count);
    auto mj = [](const ModuliReport& m) {
      return json{{"count", m.count}, {"trajectories", m.trajectories}, {"unconverged", m.unconverged},
                  {"class_sizes", m.class_sizes}, {"max_intra_distance", m.max_intra_distance},
                  {"threshold", m.threshold}};
    };
    report["hopf"] = {{"delta", params.delta}, {"kappa", params.kappa}, {"C", sys.energy_constant()},
                      {"indices", idx},        {"palais_smale", ps_json}, {"moduli", mj(mr[0])},
                      {"moduli_rotated", mj(mr[1])}, {"rotation", {ra, rb}}};
  }

  write_json(dir / "report.json", report);
  int code = checks.all ? kPass : kCheckFailed;
  if (probe_failed) code = kProbeFailed;
  write_summary(dir, "morse-lab", checks, code);
  return code;
}

// ---------------------------------------------------------------- verify

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("missing " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + p.string() + ": " + e.what());
  }
}

int cmd_verify(const Common& c, const std::string& in_dir) {
  const fs::path src = in_dir;
  const fs::path dir = c.out;
  fs::create_directories(dir);
  json summary = read_json(src / "summary.json");
  const std::string command = summary.at("command").get<std::string>();
  Checks checks;
  checks.add("recorded_pass", summary.at("pass").get<bool>(), summary.at("exit_code"));
  if (command == "solve-kw") {
    json report = read_json(src / "report.json");
    std::vector<Vortex> pts;
    for (const auto& v : report.at("vortices")) pts.push_back({v.at("s"), v.at("t"), v.at("m")});
    VortexSet vs(pts);
    if (vs.N() > 0) {
      CylinderField field = read_field_csv((src / "field.csv").string(), (src / "field.meta.json").string());
      VortexSet found = J_map(field);
      checks.add("positions", found.matches(vs, field.ds(), field.dt()), vortices_json(found));
      FlowTrajectory traj = trajectory_from_field(field, FlowVariant::full());
      EnergyReport e = energy(traj.samples, 1.0);
      checks.add("flux_from_field", std::abs(e.flux - vs.N()) < 1e-2, e.flux);
    }
  } else if (command == "flow") {
    json report = read_json(src / "report.json");
    for (const auto& entry : fs::directory_iterator(src)) {
      if (!entry.is_directory()) continue;
      const std::string name = entry.path().filename().string();
      if (name.rfind("trajectory", 0) != 0) continue;
      FlowTrajectory traj = read_trajectory(entry.path().string());
      MaxPrincipleReport mp = max_principle_check(traj);
      checks.add("max_principle " + name, mp.pass, mp.max_u);
      if (report.contains("window")) {
        auto wv = report["window"].get<std::vector<int>>();
        ConfinementReport cr = check_mode_confinement(traj, FourierWindow(wv[0], wv[1]), 1e-6);
        if (traj.variant.r == 0.0) checks.add("mode_confinement " + name, cr.pass, cr.terminal_out_mass);
      }
    }
  } else if (command == "morse-lab") {
    json report = read_json(src / "report.json");
    if (report.contains("quadratic"))
      checks.add("index_relation", report["quadratic"]["matching"] == report["quadratic"]["trials"],
                 report["quadratic"]["matching"]);
    if (report.contains("norlag")) {
      double worst = 0;
      for (const auto& row : report["norlag"])
        worst = std::max(worst, row["sup_error"].is_null() ? HUGE_VAL : row["sup_error"].get<double>());
      checks.add("closed_form", worst < 1e-6, num_or_null(worst));
    }
    if (report.contains("hopf")) {
      checks.add("moduli_count", report["hopf"]["moduli"]["count"] == 1, report["hopf"]["moduli"]["count"]);
      checks.add("palais_smale", report["hopf"]["palais_smale"]["certified"].get<bool>(),
                 report["hopf"]["palais_smale"]["K0_radius"]);
    }
  } else {
    throw ConfigError("unknown command in summary: " + command);
  }
  const int code = checks.all ? kPass : kCheckFailed;
  write_summary(dir, "verify", checks, code);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vortex and Lagrange-multiplier flow experiments"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--seed", common.seed, "random seed");
    sub->add_option("--workers", common.workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--format", common.format, "table format")->check(CLI::IsMember({"csv", "json", "table"}));
  };
  auto* solve = app.add_subcommand("solve-kw", "solve the singular Kazdan-Warner problem and reconstruct the field");
  auto* flow = app.add_subcommand("flow", "flow lines: integrate from a loop, or connect windings through a solve");
  auto* morse = app.add_subcommand("morse-lab", "index relation, closed-form flow, Palais-Smale probe, Hopf count");
  auto* verify = app.add_subcommand("verify", "re-run report checks on a dumped output directory");
  for (auto* s : {solve, flow, morse, verify}) add_common(s);
  std::string in_dir;
  verify->add_option("--in", in_dir, "directory written by another command")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kBadConfig;
  }
  try {
    if (*solve) return cmd_solve_kw(common);
    if (*flow) return cmd_flow(common);
    if (*morse) return cmd_morse_lab(common);
    if (*verify) return cmd_verify(common, in_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolverFailed;
  }
  return kBadConfig;
}
