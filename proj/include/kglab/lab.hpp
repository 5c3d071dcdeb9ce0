#ifndef KGLAB_LAB_HPP
#define KGLAB_LAB_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "evolution.hpp"
#include "ground_state.hpp"
#include "io.hpp"

namespace kglab {

using nlohmann::json;

// ---------------------------------------------------------------- configuration

inline json to_json(const Params &p) { return {{"N", p.N}, {"kappa", p.kappa}, {"omega", p.omega}}; }

inline json to_json(const SolverConfig &c)
{
  return {{"tol_residual", c.tol_residual},
          {"tol_identity", c.tol_identity},
          {"max_newton_iters", c.max_newton_iters},
          {"max_flow_steps", c.max_flow_steps},
          {"flow_step_size", c.flow_step_size},
          {"descent_steps", c.descent_steps},
          {"seed_amplitudes", {c.seed_amplitudes[0], c.seed_amplitudes[1]}},
          {"r_max", c.r_max},
          {"n", c.n},
          {"boundary", to_string(c.boundary)},
          {"refine", c.refine}};
}

inline SolverConfig solver_from_json(const json &j, SolverConfig c = {})
{
  c.tol_residual = j.value("tol_residual", c.tol_residual);
  c.tol_identity = j.value("tol_identity", c.tol_identity);
  c.max_newton_iters = j.value("max_newton_iters", c.max_newton_iters);
  c.max_flow_steps = j.value("max_flow_steps", c.max_flow_steps);
  c.flow_step_size = j.value("flow_step_size", c.flow_step_size);
  c.descent_steps = j.value("descent_steps", c.descent_steps);
  if (j.contains("seed_amplitudes")) {
    const auto &a = j.at("seed_amplitudes");
    if (!a.is_array() || a.size() != 2)
      throw Error(ErrorKind::invalid_argument, "seed_amplitudes must hold two numbers");
    c.seed_amplitudes = {a[0].get<double>(), a[1].get<double>()};
  }
  c.r_max = j.value("r_max", c.r_max);
  c.n = j.value("n", c.n);
  if (j.contains("boundary")) {
    const auto b = j.at("boundary").get<std::string>();
    if (b != "dirichlet" && b != "neumann")
      throw Error(ErrorKind::invalid_argument, "boundary must be dirichlet or neumann");
    c.boundary = b == "neumann" ? Boundary::neumann : Boundary::dirichlet;
  }
  c.refine = j.value("refine", c.refine);
  return c;
}

inline json to_json(const IntegratorConfig &c)
{
  return {{"dt", c.dt},
          {"t_end", c.t_end},
          {"scheme", to_string(c.scheme)},
          {"cfl_safety", c.cfl_safety},
          {"record_every", c.record_every},
          {"blowup_norm_factor", c.blowup_norm_factor},
          {"blowup_value_cap", c.blowup_value_cap},
          {"drift_budget", c.drift_budget},
          {"sponge_strength", c.sponge_strength},
          {"linear", c.linear}};
}

inline IntegratorConfig integrator_from_json(const json &j, IntegratorConfig c = {})
{
  c.dt = j.value("dt", c.dt);
  c.t_end = j.value("t_end", c.t_end);
  if (j.contains("scheme"))
    c.scheme = scheme_from_string(j.at("scheme").get<std::string>());
  c.cfl_safety = j.value("cfl_safety", c.cfl_safety);
  c.record_every = j.value("record_every", c.record_every);
  c.blowup_norm_factor = j.value("blowup_norm_factor", c.blowup_norm_factor);
  c.blowup_value_cap = j.value("blowup_value_cap", c.blowup_value_cap);
  c.drift_budget = j.value("drift_budget", c.drift_budget);
  c.sponge_strength = j.value("sponge_strength", c.sponge_strength);
  c.linear = j.value("linear", c.linear);
  return c;
}

/// Parse a flat TOML subset into JSON: [table], [a.b], [[array]], key = string | number | bool | [array].
inline json parse_toml(const std::string &text)
{
  json root = json::object();
  json *cur = &root;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
      return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  auto strip_comment = [](const std::string &s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"' && (i == 0 || s[i - 1] != '\\'))
        in_str = !in_str;
      if (s[i] == '#' && !in_str)
        return s.substr(0, i);
    }
    return s;
  };
  auto descend = [&](const std::string &dotted, bool array_item) {
    json *node = &root;
    std::stringstream ss(dotted);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.'))
      parts.push_back(trim(part));
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i].empty())
        throw Error(ErrorKind::invalid_argument, "empty TOML table name '" + dotted + "'");
      json &next = (*node)[parts[i]];
      const bool last = i + 1 == parts.size();
      if (last && array_item) {
        if (next.is_null())
          next = json::array();
        if (!next.is_array())
          throw Error(ErrorKind::invalid_argument, "TOML key '" + dotted + "' is not an array of tables");
        next.push_back(json::object());
        node = &next.back();
      } else {
        if (next.is_null())
          next = json::object();
        node = next.is_array() ? &next.back() : &next;
      }
    }
    return node;
  };
  std::function<json(const std::string &)> value = [&](const std::string &v) -> json {
    if (v.empty())
      throw Error(ErrorKind::invalid_argument, "missing TOML value");
    if (v.front() == '"') {
      if (v.size() < 2 || v.back() != '"')
        throw Error(ErrorKind::invalid_argument, "unterminated TOML string " + v);
      return v.substr(1, v.size() - 2);
    }
    if (v == "true" || v == "false")
      return v == "true";
    if (v.front() == '[') {
      if (v.back() != ']')
        throw Error(ErrorKind::invalid_argument, "unterminated TOML array " + v);
      json arr = json::array();
      std::stringstream ss(v.substr(1, v.size() - 2));
      std::string item;
      while (std::getline(ss, item, ','))
        if (!trim(item).empty())
          arr.push_back(value(trim(item)));
      return arr;
    }
    std::size_t used = 0;
    std::string num = v;
    num.erase(std::remove(num.begin(), num.end(), '_'), num.end());
    try {
      if (num.find_first_of(".eEn") == std::string::npos) {
        const long long i = std::stoll(num, &used);
        if (used == num.size())
          return i;
      }
      const double d = std::stod(num, &used);
      if (used == num.size())
        return d;
    } catch (const std::exception &) {
    }
    throw Error(ErrorKind::invalid_argument, "cannot parse TOML value '" + v + "'");
  };

  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty())
      continue;
    try {
      if (line.rfind("[[", 0) == 0) {
        if (line.size() < 4 || line.substr(line.size() - 2) != "]]")
          throw Error(ErrorKind::invalid_argument, "bad table header");
        cur = descend(line.substr(2, line.size() - 4), true);
      } else if (line.front() == '[') {
        if (line.back() != ']')
          throw Error(ErrorKind::invalid_argument, "bad table header");
        cur = descend(line.substr(1, line.size() - 2), false);
      } else {
        const auto eq = line.find('=');
        if (eq == std::string::npos)
          throw Error(ErrorKind::invalid_argument, "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty())
          throw Error(ErrorKind::invalid_argument, "empty key");
        (*cur)[key] = value(trim(line.substr(eq + 1)));
      }
    } catch (const Error &e) {
      throw Error(ErrorKind::invalid_argument, "TOML line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return root;
}

/// JSON if the file is .json or starts with '{', the TOML subset otherwise.
inline json load_config(const fs::path &path)
{
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (path.extension() == ".json" || (first != std::string::npos && text[first] == '{')) {
    try {
      return json::parse(text);
    } catch (const json::exception &e) {
      throw Error(ErrorKind::invalid_argument, path.string() + ": " + e.what());
    }
  }
  return parse_toml(text);
}

// ---------------------------------------------------------------- experiment spec

struct ExperimentSpec {
  Params params{3, 2.0, 0.0};
  double lambda = 1.2;
  std::vector<double> rho_list{8.0, 16.0};
  IntegratorConfig integrator;
  SolverConfig solver;
  Method method = Method::shooting;
  std::string label;
  fs::path output_dir = "runs";
  std::uint64_t seed = 0;

  bool control() const { return lambda <= 1.0; }

  void validate() const
  {
    params.validate();
    if (!std::isfinite(lambda) || lambda < 0)
      throw Error(ErrorKind::invalid_argument, "lambda must be finite and >= 0");
    solver.validate();
    if (rho_list.empty())
      throw Error(ErrorKind::invalid_argument, "rho_list must not be empty");
    for (double rho : rho_list)
      if (!(rho > 0) || rho > solver.r_max / 2)
        throw Error(ErrorKind::invalid_argument, "each virial radius must lie in (0, r_max/2]");
    integrator.validate(solver.r_max / double(solver.n));
  }

  /// Everything that determines the result; output_dir and label are excluded from the hash.
  json to_json() const
  {
    return {{"params", kglab::to_json(params)},
            {"lambda", lambda},
            {"rho_list", rho_list},
            {"integrator", kglab::to_json(integrator)},
            {"solver", kglab::to_json(solver)},
            {"method", to_string(method)},
            {"seed", seed}};
  }

  std::string hash() const { return hex64(fnv1a64(to_json().dump())); }

  fs::path bundle_dir() const
  {
    return output_dir / ((label.empty() ? std::string("run") : label) + "-" + hash());
  }
};

/// Apply the keys of `j` on top of `base`.
inline ExperimentSpec experiment_from_json(const json &j, ExperimentSpec base = {})
{
  ExperimentSpec s = std::move(base);
  const int N = j.value("N", s.params.N);
  const double kappa = j.value("kappa", s.params.kappa);
  const double omega = j.value("omega", s.params.omega);
  s.params = Params(N, kappa, omega);
  s.lambda = j.value("lambda", s.lambda);
  if (j.contains("rho_list"))
    s.rho_list = j.at("rho_list").get<std::vector<double>>();
  if (j.contains("integrator"))
    s.integrator = integrator_from_json(j.at("integrator"), s.integrator);
  if (j.contains("solver"))
    s.solver = solver_from_json(j.at("solver"), s.solver);
  if (j.contains("method"))
    s.method = method_from_string(j.at("method").get<std::string>());
  s.label = j.value("label", s.label);
  if (j.contains("output_dir"))
    s.output_dir = j.at("output_dir").get<std::string>();
  s.seed = j.value("seed", s.seed);
  return s;
}

/// `defaults` table plus one spec per entry of `experiments`.
inline std::vector<ExperimentSpec> experiments_from_config(const json &cfg, ExperimentSpec base = {})
{
  if (cfg.contains("defaults"))
    base = experiment_from_json(cfg.at("defaults"), base);
  std::vector<ExperimentSpec> out;
  if (cfg.contains("experiments"))
    for (const auto &e : cfg.at("experiments"))
      out.push_back(experiment_from_json(e, base));
  else
    out.push_back(base);
  for (const auto &s : out)
    s.validate();
  return out;
}

// ---------------------------------------------------------------- datum and thresholds

/// lambda (phi, i w phi1, 2 i w phi2)
inline PhaseState standing_wave_datum(const FieldPair &phi, double omega, double lambda)
{
  phi.check();
  PhaseState s(phi.grid);
  const cplx iw(0.0, omega), i2w(0.0, 2.0 * omega);
  for (std::size_t j = 0; j < phi.n(); ++j) {
    s.u.u1[j] = lambda * phi.u1[j];
    s.u.u2[j] = lambda * phi.u2[j];
    s.v.u1[j] = iw * s.u.u1[j];
    s.v.u2[j] = i2w * s.u.u2[j];
  }
  return s;
}

struct DeltaReport {
  double lambda = 0;
  double d0 = 0, d1 = 0;   // action of the discrete ground state on its own grid
  double d_extrapolated = 0;
  double E = 0, Q = 0, E_minus_omegaQ = 0, H = 0, K = 0, K0 = 0, M_omega = 0;
  std::optional<double> delta1, delta2, delta;
  std::optional<double> h_lower; // delta1 + 2 delta2, the lower bound for -H (N in {2,3})
  std::optional<double> delta_supercrit;
  std::optional<double> delta_threshold; // only at |omega| = omega_c
  std::optional<double> chain_error;
  bool in_R1 = false, in_R0 = false;
  bool hypotheses = false;
  std::vector<std::string> warnings;

  bool positive() const
  {
    if (delta_supercrit)
      return *delta_supercrit > 0;
    bool ok = delta1 && *delta1 > 0;
    if (delta2)
      ok = ok && *delta2 > 0;
    return ok;
  }

  /// Lower bound for the virial growth rate used by the slope check.
  double growth_bound() const
  {
    if (delta_supercrit)
      return 2 * *delta_supercrit;
    if (delta_threshold)
      return 2 * *delta_threshold;
    return h_lower.value_or(0.0);
  }

  json to_json() const
  {
    auto opt = [](const std::optional<double> &x) { return x ? json(*x) : json(nullptr); };
    return {{"lambda", lambda},
            {"d0", d0},
            {"d1", d1},
            {"d_extrapolated", d_extrapolated},
            {"E", E},
            {"Q", Q},
            {"E_minus_omegaQ", E_minus_omegaQ},
            {"H", H},
            {"K", K},
            {"K0_omega", K0},
            {"M_omega", M_omega},
            {"delta1", opt(delta1)},
            {"delta2", opt(delta2)},
            {"delta", opt(delta)},
            {"h_lower", opt(h_lower)},
            {"delta_supercrit", opt(delta_supercrit)},
            {"delta_threshold", opt(delta_threshold)},
            {"identity_chain_error", opt(chain_error)},
            {"in_R1", in_R1},
            {"in_R0", in_R0},
            {"hypotheses", hypotheses},
            {"warnings", warnings}};
  }
};

/// All delta thresholds on the datum lambda (phi, i w phi1, 2 i w phi2).
inline DeltaReport compute_deltas(const GroundState &g, double lambda, const Params &p)
{
  if (!(lambda > 0) || !std::isfinite(lambda))
    throw Error(ErrorKind::invalid_argument, "lambda must be positive");
  if (p.N != g.params.N || p.kappa != g.params.kappa || p.omega != g.params.omega)
    throw Error(ErrorKind::invalid_argument, "parameters do not match the ground state");
  DeltaReport r;
  r.lambda = lambda;
  r.d0 = r.d1 = g.J_raw;
  r.d_extrapolated = g.d0;
  r.hypotheses = p.instability_hypotheses();

  const PhaseState s = standing_wave_datum(g.profile, p.omega, lambda);
  const auto S = state_integrals(s, p.omega);
  const auto f = functional_report(S, p);
  r.E = f.E;
  r.Q = f.Q;
  r.E_minus_omegaQ = f.E_minus_omegaQ;
  r.H = f.H;
  r.K = f.K;
  r.K0 = f.K0_omega;
  r.M_omega = f.M_omega;
  r.in_R1 = r.E_minus_omegaQ < r.d1 && r.K < 0;
  r.in_R0 = r.E_minus_omegaQ < r.d0 && r.K0 < 0;

  const double a = p.alpha(), w = p.omega;
  if (p.N >= 4) {
    r.delta_supercrit = 0.5 * p.N * (r.d1 - r.E_minus_omegaQ);
    return r;
  }
  r.delta1 = 2 * (a + 2) * (r.d0 - r.E_minus_omegaQ);
  r.delta2 = a * (w * r.Q - w * w * (a + 2) * r.d0 / (1 - w * w));
  r.delta = *r.delta1 + *r.delta2;
  r.h_lower = *r.delta1 + 2 * *r.delta2;
  const double wc = p.omega_c();
  if (std::abs(std::abs(w) - wc) < 1e-12) {
    const double wq = std::copysign(wc, w);
    r.delta_threshold = a * wq * r.Q - (a + 2) * (r.E - wq * r.Q);
  }
  if (p.mass_resonant()) {
    const auto &x = g.extrapolated;
    const double lhs = (a + 2) * g.d0 / (1 - w * w);
    const double rhs = x.n1 + 2 * x.n2;
    r.chain_error = std::abs(lhs - rhs) / std::abs(rhs);
  } else {
    r.warnings.push_back("kappa != 2: mass-resonance identity chain skipped");
  }
  if (!r.hypotheses)
    r.warnings.push_back("instability hypotheses not met for these parameters");
  return r;
}

// ---------------------------------------------------------------- diagnostics on a trajectory

struct InvariantReport {
  std::string kind;
  std::size_t samples = 0;
  std::size_t violations = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  double slack = 0;
  bool K_negative = true;  // K(u(t)) < 0 at every sample
  bool K0_negative = true; // K0_omega(u(t)) < 0 at every sample
  bool holds = false;

  json to_json() const
  {
    return {{"kind", kind},     {"samples", samples},         {"violations", violations},
            {"min_margin", min_margin}, {"slack", slack}, {"K_negative", K_negative},
            {"K0_negative", K0_negative}, {"holds", holds}};
  }
};

/// Sign persistence of the blow-up sets along the recorded samples.
///   N in {4,5}: K < 0 and -K/N > d1 - (E - wQ)(0)
///   N in {2,3}: K0 < 0 and M_omega/(alpha+2) > d0
inline InvariantReport invariant_check(const TrajectoryRecord &tr, const DeltaReport &d, const Params &p)
{
  InvariantReport inv;
  inv.kind = p.N >= 4 ? "-K/N > d1 - (E-wQ)(0)" : "K0 < 0 and M_omega/(alpha+2) > d0";
  double dE = 0, dQ = 0;
  for (const auto &r : tr.reports) {
    dE = std::max(dE, std::abs(r.E - tr.E0));
    dQ = std::max(dQ, std::abs(r.Q - tr.Q0));
  }
  inv.slack = dE + std::abs(p.omega) * dQ + 1e-10 * std::max(1.0, std::abs(d.d0));
  const double gap = d.d1 - d.E_minus_omegaQ;
  for (const auto &r : tr.reports) {
    ++inv.samples;
    inv.K_negative = inv.K_negative && r.K < 0;
    inv.K0_negative = inv.K0_negative && r.K0_omega < 0;
    double m;
    bool ok;
    if (p.N >= 4) {
      m = -r.K / p.N - gap;
      ok = r.K < 0 && m > -inv.slack;
    } else {
      m = r.M_omega / (p.alpha() + 2) - d.d0;
      ok = r.K0_omega < 0 && m > -inv.slack;
    }
    inv.min_margin = std::min(inv.min_margin, m);
    if (!ok)
      ++inv.violations;
  }
  inv.holds = inv.samples > 0 && inv.violations == 0;
  return inv;
}

struct VirialGrowth {
  double rho = 0;
  double C0 = 0;
  double window = 0;   // length of the pre-detection window
  double increase = 0; // I(T) - I(0)
  double slope = 0;
  double bound = 0;    // growth lower bound from the delta report
  double max_R = 0;
  double mean_R = 0;
  double margin_integral = 0; // increase - (bound T - int R)
  double margin_max = 0;      // slope - (bound - max R)
  double slope_over_2delta = 0;
  bool holds = false;

  json to_json() const
  {
    return {{"rho", rho},          {"C0", C0},          {"window", window},
            {"increase", increase}, {"slope", slope},   {"bound", bound},
            {"max_R", max_R},      {"mean_R", mean_R}, {"margin_integral", margin_integral},
            {"margin_max", margin_max}, {"slope_over_2delta", slope_over_2delta}, {"holds", holds}};
  }
};

/// Average virial slope against bound - R_rho over the samples before the detection time.
/// R_rho = weighted exterior term + C0 M(u) / rho^2 with C0 from the remainder form bound.
inline std::vector<VirialGrowth> virial_growth_check(const TrajectoryRecord &tr, const DeltaReport &d,
                                                     const Params &p)
{
  std::vector<VirialGrowth> out;
  if (tr.reports.size() < 2 || tr.virials.empty())
    return out;
  std::size_t last = tr.reports.size() - 1;
  if (tr.t_star)
    while (last > 1 && tr.reports[last].t >= *tr.t_star)
      --last;
  const double two_delta = p.N >= 4 ? 2 * d.delta_supercrit.value_or(0) : 2 * d.delta.value_or(0);
  for (const auto &v : tr.virials) {
    VirialGrowth g;
    g.rho = v.rho;
    g.C0 = v.C0;
    const auto &I = p.N >= 4 ? v.i1 : v.i2;
    const double T = tr.reports[last].t - tr.reports[0].t;
    g.window = T;
    g.increase = I[last] - I[0];
    g.slope = T > 0 ? g.increase / T : 0;
    g.bound = d.growth_bound();
    double intR = 0;
    g.max_R = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k <= last; ++k) {
      const double R = v.exterior[k] + g.C0 * tr.f[k] / (g.rho * g.rho);
      g.max_R = std::max(g.max_R, R);
      if (k > 0) {
        const double Rp = v.exterior[k - 1] + g.C0 * tr.f[k - 1] / (g.rho * g.rho);
        intR += 0.5 * (R + Rp) * (tr.reports[k].t - tr.reports[k - 1].t);
      }
    }
    g.mean_R = T > 0 ? intR / T : 0;
    const double slack = 1e-8 * std::max({1.0, std::abs(I[0]), std::abs(I[last])});
    g.margin_integral = g.increase - (g.bound * T - intR);
    g.margin_max = g.slope - (g.bound - g.max_R);
    g.slope_over_2delta = two_delta > 0 ? g.slope / two_delta : std::nan("");
    g.holds = T > 0 && g.margin_integral > -slack;
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------- Strauss tail

struct StraussRow {
  double rho = 0;
  double c1 = 0, c2 = 0;
};

struct StraussReport {
  std::vector<StraussRow> rows;
  double C = 0;
  bool nonincreasing = true;

  json to_json() const
  {
    json r = json::array();
    for (const auto &x : rows)
      r.push_back({{"rho", x.rho}, {"c1", x.c1}, {"c2", x.c2}});
    return {{"rows", r}, {"C", C}, {"nonincreasing", nonincreasing}};
  }
};

/// sup_{r >= rho} |phi_j| rho^{(N-1)/2} / ||phi_j||_{H^1} for each rho.
inline StraussReport strauss_tail_check(const FieldPair &phi, std::vector<double> rho_list)
{
  phi.check();
  std::sort(rho_list.begin(), rho_list.end());
  const RadialGrid &g = *phi.grid;
  const auto I = pair_integrals(phi);
  const double h1 = std::sqrt(I.n1 + I.g1), h2 = std::sqrt(I.n2 + I.g2);
  StraussReport rep;
  for (double rho : rho_list) {
    double s1 = 0, s2 = 0;
    for (std::size_t j = 0; j < g.n(); ++j)
      if (g.r(j) >= rho) {
        s1 = std::max(s1, std::abs(phi.u1[j]));
        s2 = std::max(s2, std::abs(phi.u2[j]));
      }
    const double w = std::pow(rho, 0.5 * (g.dim() - 1));
    StraussRow row{rho, h1 > 0 ? s1 * w / h1 : 0.0, h2 > 0 ? s2 * w / h2 : 0.0};
    if (!rep.rows.empty()) {
      const auto &prev = rep.rows.back();
      if (row.c1 > prev.c1 * (1 + 1e-12) || row.c2 > prev.c2 * (1 + 1e-12))
        rep.nonincreasing = false;
    }
    rep.C = std::max({rep.C, row.c1, row.c2});
    rep.rows.push_back(row);
  }
  return rep;
}

inline StraussReport strauss_tail_check(const GroundState &g, const std::vector<double> &rho_list)
{
  return strauss_tail_check(g.profile, rho_list);
}

// ---------------------------------------------------------------- output

inline std::string fmt_num(double x)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string fmt_short(double x)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Minimal line chart.
inline std::string svg_chart(const std::string &title, const std::string &xlabel, const std::string &ylabel,
                             const std::vector<Series> &series, bool log_y = false)
{
  const double W = 640, H = 400, L = 70, R = 150, T = 36, B = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  auto ty = [&](double y) { return log_y ? std::log10(y) : y; };
  auto usable = [&](double y) { return std::isfinite(y) && (!log_y || y > 0); };
  for (const auto &s : series)
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k)
      if (std::isfinite(s.x[k]) && usable(s.y[k])) {
        x0 = std::min(x0, s.x[k]);
        x1 = std::max(x1, s.x[k]);
        y0 = std::min(y0, ty(s.y[k]));
        y1 = std::max(y1, ty(s.y[k]));
      }
  if (x0 > x1) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  if (x1 - x0 <= 0)
    x1 = x0 + 1;
  if (y1 - y0 <= 0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char *colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << fmt_short(xv)
      << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
      << (log_y ? "1e" + fmt_short(std::round(yv * 10) / 10) : fmt_short(yv)) << "</text>\n";
    o << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
      << "\" stroke=\"#ddd\"/>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xlabel
    << "</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\">" << ylabel << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char *c = colors[s % 6];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < series[s].x.size() && k < series[s].y.size(); ++k)
      if (std::isfinite(series[s].x[k]) && usable(series[s].y[k]))
        o << px(series[s].x[k]) << "," << py(ty(series[s].y[k])) << " ";
    o << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 + 18 * s << "\" fill=\"" << c << "\">"
      << series[s].name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline std::string trajectory_csv(const TrajectoryRecord &tr)
{
  std::ostringstream o;
  o << FunctionalReport::csv_header() << ",norm\n";
  for (std::size_t k = 0; k < tr.reports.size(); ++k) {
    std::ostringstream row;
    tr.reports[k].write_csv_row(row);
    std::string s = row.str();
    s.pop_back();
    o << s << ',' << fmt_num(tr.norms[k]) << '\n';
  }
  return o.str();
}

inline std::string virial_csv(const TrajectoryRecord &tr, std::size_t which)
{
  const auto &v = tr.virials.at(which);
  std::ostringstream o;
  o << "t,I1,I2,exterior,M,R\n";
  for (std::size_t k = 0; k < tr.reports.size(); ++k) {
    const double R = v.exterior[k] + v.C0 * tr.f[k] / (v.rho * v.rho);
    o << fmt_num(tr.reports[k].t) << ',' << fmt_num(v.i1[k]) << ',' << fmt_num(v.i2[k]) << ','
      << fmt_num(v.exterior[k]) << ',' << fmt_num(tr.f[k]) << ',' << fmt_num(R) << '\n';
  }
  return o.str();
}

// ---------------------------------------------------------------- runs

/// Ground states shared between runs of one process, keyed by (params, solver, method).
class GroundStateCache {
public:
  using Ptr = std::shared_ptr<const GroundState>;

  Ptr get(const Params &p, const SolverConfig &cfg, Method m)
  {
    const std::string key = json{{"p", to_json(p)}, {"s", to_json(cfg)}, {"m", to_string(m)}}.dump();
    std::shared_future<Ptr> fut;
    std::promise<Ptr> prom;
    bool owner = false;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        fut = prom.get_future().share();
        entries_.emplace(key, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      try {
        prom.set_value(std::make_shared<const GroundState>(solve_ground_state(p, cfg, m)));
      } catch (...) {
        prom.set_exception(std::current_exception());
      }
    }
    return fut.get();
  }

private:
  std::mutex mu_;
  std::map<std::string, std::shared_future<Ptr>> entries_;
};

struct RunBundle {
  ExperimentSpec spec;
  std::string hash;
  fs::path dir;
  GroundStateCache::Ptr ground_state;
  DeltaReport deltas;
  TrajectoryRecord trajectory;
  BoundsReport bounds;
  InvariantReport invariants;
  std::vector<VirialGrowth> virial_growth;
  double max_norm_ratio = 0;
  double max_abs_K_rel = 0; // max |K| / max L along the run
  std::vector<std::string> notes;

  std::string role() const
  {
    if (spec.control())
      return "control";
    return spec.params.instability_hypotheses() ? "instability" : "exploratory";
  }

  json verdict_json() const
  {
    json vg = json::array();
    for (const auto &g : virial_growth)
      vg.push_back(g.to_json());
    const auto &tr = trajectory;
    return {{"verdict", to_string(tr.verdict)},
            {"t_star", tr.t_star ? json(*tr.t_star) : json(nullptr)},
            {"drift_E", tr.drift_E},
            {"drift_Q", tr.drift_Q},
            {"bounds_margins", bounds.to_json()},
            {"bounds_applicable", tr.verdict == Verdict::completed},
            {"reason", tr.reason},
            {"role", role()},
            {"label", spec.label},
            {"hash", hash},
            {"dt", tr.dt},
            {"steps", tr.steps},
            {"E0", tr.E0},
            {"Q0", tr.Q0},
            {"norm0", tr.norm0},
            {"max_norm_ratio", max_norm_ratio},
            {"max_abs_K_rel", max_abs_K_rel},
            {"invariants", invariants.to_json()},
            {"virial_growth", vg},
            {"notes", notes}};
  }
};

struct RunOptions {
  bool write = true;
  GroundStateCache *cache = nullptr;
};

inline void write_bundle(const RunBundle &b)
{
  const fs::path d = b.dir;
  const auto &tr = b.trajectory;
  json spec = b.spec.to_json();
  spec["label"] = b.spec.label;
  spec["hash"] = b.hash;
  atomic_write(d / "spec.json", spec.dump(2));
  save_ground_state(d / "groundstate.bin", *b.ground_state);
  atomic_write(d / "trajectory.csv", trajectory_csv(tr));
  atomic_write(d / "verdict.json", b.verdict_json().dump(2));
  atomic_write(d / "deltas.json", b.deltas.to_json().dump(2));
  for (std::size_t k = 0; k < tr.virials.size(); ++k)
    atomic_write(d / ("virial_rho" + fmt_short(tr.virials[k].rho) + ".csv"), virial_csv(tr, k));

  const auto t = tr.times();
  std::vector<double> ratio, dE, dQ, K, K0;
  for (std::size_t k = 0; k < tr.reports.size(); ++k) {
    const auto &r = tr.reports[k];
    ratio.push_back(tr.norms[k] / tr.norm0);
    dE.push_back(std::max(std::abs(r.E - tr.E0) / std::max(std::abs(tr.E0), 1e-300), 1e-17));
    dQ.push_back(std::max(std::abs(r.Q - tr.Q0) / std::max(std::abs(tr.Q0), 1.0), 1e-17));
    K.push_back(r.K);
    K0.push_back(r.K0_omega);
  }
  atomic_write(d / "norm.svg", svg_chart("composite norm", "t", "norm / norm(0)", {{"norm ratio", t, ratio}}, true));
  atomic_write(d / "drift.svg",
               svg_chart("conservation", "t", "relative drift", {{"E", t, dE}, {"Q", t, dQ}}, true));
  std::vector<Series> vs;
  const bool use_i1 = b.spec.params.N >= 4;
  for (const auto &v : tr.virials)
    vs.push_back({(use_i1 ? "I1 rho=" : "I2 rho=") + fmt_short(v.rho), t, use_i1 ? v.i1 : v.i2});
  atomic_write(d / "virial.svg", svg_chart("localized virial", "t", use_i1 ? "I1" : "I2", vs));
  atomic_write(d / "signs.svg", svg_chart("K and K0 sign track", "t", "value", {{"K", t, K}, {"K0_omega", t, K0}}));
}

inline RunBundle run_experiment(const ExperimentSpec &spec, const RunOptions &opt = {})
{
  spec.validate();
  if (!spec.params.admissible())
    throw Error(ErrorKind::inadmissible, "|omega| must be below min(1, kappa/2)");
  RunBundle b;
  b.spec = spec;
  b.hash = spec.hash();
  b.dir = spec.bundle_dir();
  const Params &p = spec.params;
  if (!spec.control() && !p.instability_hypotheses())
    b.notes.push_back("parameters outside the instability hypotheses; the run makes no claim");
  if (spec.control())
    b.notes.push_back("lambda <= 1: control run");

  GroundStateCache local;
  GroundStateCache &cache = opt.cache ? *opt.cache : local;
  b.ground_state = cache.get(p, spec.solver, spec.method);
  const GroundState &g = *b.ground_state;
  if (!g.certified(spec.solver))
    throw Error(ErrorKind::certification, "ground state failed certification (residual " +
                                              fmt_short(g.residual_linf) + ", identities " +
                                              fmt_short(g.identity.worst()) + ")");
  if (spec.lambda > 0)
    b.deltas = compute_deltas(g, spec.lambda, p);
  else
    b.notes.push_back("lambda = 0: zero datum, no delta report");
  PhaseState s = standing_wave_datum(g.profile, p.omega, spec.lambda);
  b.trajectory = evolve(s, p, spec.integrator, spec.rho_list);
  auto &tr = b.trajectory;
  for (auto &v : tr.virials)
    v.C0 = remainder_form_bound(build_weights(v.rho, g.profile.grid));
  b.bounds = bounds_monitor(tr, p);
  b.invariants = invariant_check(tr, b.deltas, p);
  if (tr.verdict == Verdict::blowup)
    b.virial_growth = virial_growth_check(tr, b.deltas, p);
  double Lmax = 0, Kmax = 0;
  for (std::size_t k = 0; k < tr.reports.size(); ++k) {
    b.max_norm_ratio = std::max(b.max_norm_ratio, tr.norms[k] / tr.norm0);
    Lmax = std::max(Lmax, tr.reports[k].L);
    Kmax = std::max(Kmax, std::abs(tr.reports[k].K));
  }
  b.max_abs_K_rel = Lmax > 0 ? Kmax / Lmax : 0;
  if (opt.write)
    write_bundle(b);
  return b;
}

// ---------------------------------------------------------------- sweeps

enum class SweepAxis { lambda, omega, kappa, resolution };

inline const char *to_string(SweepAxis a)
{
  switch (a) {
  case SweepAxis::lambda: return "lambda";
  case SweepAxis::omega: return "omega";
  case SweepAxis::kappa: return "kappa";
  case SweepAxis::resolution: return "resolution";
  }
  return "unknown";
}

inline SweepAxis sweep_axis_from_string(const std::string &s)
{
  for (SweepAxis a : {SweepAxis::lambda, SweepAxis::omega, SweepAxis::kappa, SweepAxis::resolution})
    if (s == to_string(a))
      return a;
  throw Error(ErrorKind::invalid_argument, "unknown sweep axis '" + s + "'");
}

struct SweepRow {
  double value = 0;
  std::string verdict;
  std::optional<double> t_star;
  double max_norm_ratio = 0;
  double drift_E = 0;
  std::string error;
  std::string bundle;
  bool flagged = false;
};

struct SweepSummary {
  SweepAxis axis = SweepAxis::lambda;
  std::vector<SweepRow> rows;
  bool monotone = true;
  std::optional<double> t_star_spread; // resolution axis: relative t* change between the top two values

  std::string to_csv() const
  {
    std::ostringstream o;
    o << "value,verdict,t_star,max_norm_ratio,drift_E,flagged,error,bundle\n";
    for (const auto &r : rows)
      o << fmt_num(r.value) << ',' << r.verdict << ',' << (r.t_star ? fmt_num(*r.t_star) : "") << ','
        << fmt_num(r.max_norm_ratio) << ',' << fmt_num(r.drift_E) << ',' << (r.flagged ? 1 : 0) << ",\""
        << r.error << "\"," << r.bundle << '\n';
    return o.str();
  }

  json to_json() const
  {
    json rs = json::array();
    for (const auto &r : rows)
      rs.push_back({{"value", r.value},
                    {"verdict", r.verdict},
                    {"t_star", r.t_star ? json(*r.t_star) : json(nullptr)},
                    {"max_norm_ratio", r.max_norm_ratio},
                    {"drift_E", r.drift_E},
                    {"flagged", r.flagged},
                    {"error", r.error},
                    {"bundle", r.bundle}});
    return {{"axis", to_string(axis)},
            {"rows", rs},
            {"monotone", monotone},
            {"t_star_spread", t_star_spread ? json(*t_star_spread) : json(nullptr)}};
  }
};

/// Flag rows that complete after a smaller value already blew up; error rows are skipped.
inline void flag_monotonicity(SweepSummary &sum)
{
  sum.monotone = true;
  int highest = -1;
  for (auto &r : sum.rows) {
    const int rank = r.verdict == "completed" ? 0 : r.verdict == "blowup" ? 1 : -1;
    if (rank < 0)
      continue;
    r.flagged = rank < highest;
    if (r.flagged)
      sum.monotone = false;
    highest = std::max(highest, rank);
  }
}

inline ExperimentSpec sweep_point(const ExperimentSpec &base, SweepAxis axis, double v)
{
  ExperimentSpec s = base;
  switch (axis) {
  case SweepAxis::lambda: s.lambda = v; break;
  case SweepAxis::omega: s.params = Params(s.params.N, s.params.kappa, v); break;
  case SweepAxis::kappa: s.params = Params(s.params.N, v, s.params.omega); break;
  case SweepAxis::resolution:
    if (!(v >= 16) || v != std::floor(v))
      throw Error(ErrorKind::invalid_argument, "resolution must be an integer >= 16");
    s.solver.n = std::size_t(v);
    break;
  }
  s.label = (base.label.empty() ? std::string("sweep") : base.label) + "-" + to_string(axis) + fmt_short(v);
  return s;
}

/// Run one experiment per value on `threads` workers; rows come back sorted by value.
inline SweepSummary sweep(const ExperimentSpec &base, SweepAxis axis, std::vector<double> values, int threads = 1,
                          const RunOptions &opt = {})
{
  SweepSummary sum;
  sum.axis = axis;
  for (double v : values)
    if (!std::isfinite(v))
      throw Error(ErrorKind::invalid_argument, "sweep values must be finite");
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  sum.rows.resize(values.size());
  GroundStateCache local;
  RunOptions ro = opt;
  if (!ro.cache)
    ro.cache = &local;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < values.size(); i = next++) {
      SweepRow &row = sum.rows[i];
      row.value = values[i];
      try {
        const auto b = run_experiment(sweep_point(base, axis, values[i]), ro);
        row.verdict = to_string(b.trajectory.verdict);
        row.t_star = b.trajectory.t_star;
        row.max_norm_ratio = b.max_norm_ratio;
        row.drift_E = b.trajectory.drift_E;
        row.bundle = opt.write ? b.dir.string() : "";
      } catch (const std::exception &e) {
        row.verdict = "error";
        row.error = e.what();
      }
    }
  };
  const int nt = std::max(1, std::min<int>(threads, int(values.size())));
  std::vector<std::thread> pool;
  for (int k = 1; k < nt; ++k)
    pool.emplace_back(worker);
  worker();
  for (auto &t : pool)
    t.join();

  if (axis == SweepAxis::lambda)
    flag_monotonicity(sum);
  if (axis == SweepAxis::resolution && sum.rows.size() >= 2) {
    const auto &a = sum.rows[sum.rows.size() - 2], &b = sum.rows.back();
    if (a.t_star && b.t_star)
      sum.t_star_spread = std::abs(*a.t_star - *b.t_star) / std::abs(*b.t_star);
  }
  if (opt.write && !sum.rows.empty()) {
    json key = base.to_json();
    key["axis"] = to_string(axis);
    key["values"] = values;
    const fs::path d = base.output_dir / ("sweep-" + std::string(to_string(axis)) + "-" + hex64(fnv1a64(key.dump())));
    atomic_write(d / "summary.csv", sum.to_csv());
    atomic_write(d / "summary.json", sum.to_json().dump(2));
  }
  return sum;
}

} // namespace kglab

#endif // KGLAB_LAB_HPP
