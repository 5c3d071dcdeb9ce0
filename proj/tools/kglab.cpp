#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include <kglab/lab.hpp>

using namespace kglab;

namespace {

enum Exit { ok = 0, usage = 1, cert_failure = 2, scheme_failure = 3 };

struct Globals {
  std::string config;
  std::string out;
  int threads = 1;
  std::uint64_t seed = 0;
};

struct SpecFlags {
  int N = 3;
  double kappa = 2.0, omega = 0.0, lambda = 1.2;
  std::string method = "shooting";
  std::size_t n = 0;
  double r_max = 0;
  double dt = -1, t_end = -1, cfl = -1;
  int record_every = 0;
  std::string scheme;
  std::vector<double> rho;
  std::string label;
};

void add_param_flags(CLI::App *c, SpecFlags &f)
{
  c->add_option("--dim", f.N, "space dimension N (2..5)")->check(CLI::Range(2, 5));
  c->add_option("--kappa", f.kappa, "mass ratio kappa");
  c->add_option("--omega", f.omega, "frequency omega");
  c->add_option("--method", f.method, "shooting | gradient-flow");
  c->add_option("--n", f.n, "grid points");
  c->add_option("--r-max", f.r_max, "outer radius");
}

void add_run_flags(CLI::App *c, SpecFlags &f)
{
  add_param_flags(c, f);
  c->add_option("--lambda", f.lambda, "datum amplitude lambda");
  c->add_option("--dt", f.dt, "time step (0: cfl * dr)");
  c->add_option("--t-end", f.t_end, "final time");
  c->add_option("--cfl", f.cfl, "CFL safety factor");
  c->add_option("--record-every", f.record_every, "steps between samples");
  c->add_option("--scheme", f.scheme, "leapfrog | strang-spectral");
  c->add_option("--rho", f.rho, "virial radii")->delimiter(',');
  c->add_option("--label", f.label, "run label");
}

/// Config defaults first, then explicit flags.
ExperimentSpec base_spec(const Globals &g, CLI::App *c, const SpecFlags &f)
{
  ExperimentSpec s;
  s.solver.r_max = 64;
  s.solver.n = 2048;
  if (!g.config.empty()) {
    const json cfg = load_config(g.config);
    if (cfg.contains("defaults"))
      s = experiment_from_json(cfg.at("defaults"), s);
  }
  auto given = [&](const char *name) { return c->count(name) > 0; };
  s.params = Params(given("--dim") ? f.N : s.params.N, given("--kappa") ? f.kappa : s.params.kappa,
                    given("--omega") ? f.omega : s.params.omega);
  if (given("--method"))
    s.method = method_from_string(f.method);
  if (given("--n"))
    s.solver.n = f.n;
  if (given("--r-max"))
    s.solver.r_max = f.r_max;
  if (c->get_option_no_throw("--lambda") && given("--lambda"))
    s.lambda = f.lambda;
  if (c->get_option_no_throw("--dt") && given("--dt"))
    s.integrator.dt = f.dt;
  if (c->get_option_no_throw("--t-end") && given("--t-end"))
    s.integrator.t_end = f.t_end;
  if (c->get_option_no_throw("--cfl") && given("--cfl"))
    s.integrator.cfl_safety = f.cfl;
  if (c->get_option_no_throw("--record-every") && given("--record-every"))
    s.integrator.record_every = f.record_every;
  if (c->get_option_no_throw("--scheme") && given("--scheme"))
    s.integrator.scheme = scheme_from_string(f.scheme);
  if (c->get_option_no_throw("--rho") && given("--rho"))
    s.rho_list = f.rho;
  if (c->get_option_no_throw("--label") && given("--label"))
    s.label = f.label;
  if (!g.out.empty())
    s.output_dir = g.out;
  s.seed = g.seed;
  return s;
}

int report_run(const RunBundle &b)
{
  const auto &tr = b.trajectory;
  std::printf("%-24s %-12s verdict=%-15s t*=%-10s drift_E=%.3g dir=%s\n", b.spec.label.c_str(), b.role().c_str(),
              to_string(tr.verdict), tr.t_star ? fmt_short(*tr.t_star).c_str() : "-", tr.drift_E,
              b.dir.string().c_str());
  return tr.verdict == Verdict::unstable_scheme ? scheme_failure : ok;
}

int cmd_groundstate(const Globals &g, CLI::App *c, const SpecFlags &f)
{
  const ExperimentSpec s = base_spec(g, c, f);
  const auto gs = solve_ground_state(s.params, s.solver, s.method);
  json j = gs.to_json();
  if (!g.out.empty()) {
    const fs::path p = fs::path(g.out).extension() == ".bin" ? fs::path(g.out) : fs::path(g.out) / "groundstate.bin";
    save_ground_state(p, gs);
    j["saved"] = p.string();
  }
  j["certified"] = gs.certified(s.solver);
  std::cout << j.dump(2) << '\n';
  return gs.certified(s.solver) ? ok : cert_failure;
}

int cmd_certify(const Globals &g, const std::string &profile, const SolverConfig &cfg)
{
  const auto stored = load_ground_state(profile);
  const auto gs = certify(stored.profile, stored.params, cfg);
  json j = {{"residual_linf", gs.residual_linf},
            {"identity_report", gs.identity.to_json()},
            {"J_omega", gs.J_raw},
            {"d0_omega", gs.d0},
            {"positive", gs.positive},
            {"monotone", gs.monotone},
            {"certified", gs.certified(cfg)}};
  if (gs.params.N <= 3)
    j["d0_cross_check"] = d_omega(gs, 1.0).cross_check;
  std::cout << j.dump(2) << '\n';
  (void)g;
  return gs.certified(cfg) ? ok : cert_failure;
}

int cmd_evolve(const Globals &g, CLI::App *c, const SpecFlags &f, const std::string &profile)
{
  ExperimentSpec s = base_spec(g, c, f);
  std::shared_ptr<const GroundState> gs;
  if (!profile.empty()) {
    const auto stored = load_ground_state(profile);
    s.params = stored.params;
    gs = std::make_shared<const GroundState>(certify(stored.profile, stored.params, s.solver));
  } else {
    gs = std::make_shared<const GroundState>(solve_ground_state(s.params, s.solver, s.method));
  }
  if (!gs->certified(s.solver)) {
    std::fprintf(stderr, "ground state failed certification\n");
    return cert_failure;
  }
  PhaseState st = standing_wave_datum(gs->profile, s.params.omega, s.lambda);
  s.integrator.validate(gs->profile.grid->dr());
  auto tr = evolve(st, s.params, s.integrator, s.rho_list);
  const auto bounds = bounds_monitor(tr, s.params);
  const fs::path dir = g.out.empty() ? fs::path("evolve-" + s.hash()) : fs::path(g.out);
  atomic_write(dir / "trajectory.csv", trajectory_csv(tr));
  const json v = {{"verdict", to_string(tr.verdict)},
                  {"t_star", tr.t_star ? json(*tr.t_star) : json(nullptr)},
                  {"drift_E", tr.drift_E},
                  {"drift_Q", tr.drift_Q},
                  {"bounds_margins", bounds.to_json()},
                  {"reason", tr.reason}};
  atomic_write(dir / "verdict.json", v.dump(2));
  std::cout << v.dump(2) << '\n';
  return tr.verdict == Verdict::unstable_scheme ? scheme_failure : ok;
}

int cmd_experiment(const Globals &g, CLI::App *c, const SpecFlags &f)
{
  std::vector<ExperimentSpec> specs;
  const bool flags_given = c->count("--dim") || c->count("--lambda") || c->count("--omega");
  if (!g.config.empty() && !flags_given) {
    ExperimentSpec base;
    base.solver.r_max = 64;
    base.solver.n = 2048;
    specs = experiments_from_config(load_config(g.config), base);
    for (auto &s : specs) {
      if (!g.out.empty())
        s.output_dir = g.out;
      s.seed = g.seed;
    }
  } else {
    specs.push_back(base_spec(g, c, f));
  }
  GroundStateCache cache;
  std::vector<std::optional<RunBundle>> out(specs.size());
  std::vector<std::string> errors(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      try {
        out[i] = run_experiment(specs[i], {true, &cache});
      } catch (const std::exception &e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int k = 1; k < std::min<int>(g.threads, int(specs.size())); ++k)
    pool.emplace_back(worker);
  worker();
  for (auto &t : pool)
    t.join();
  int code = ok;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (out[i]) {
      code = std::max(code, report_run(*out[i]));
    } else {
      std::printf("%-24s error: %s\n", specs[i].label.c_str(), errors[i].c_str());
      code = std::max(code, errors[i].rfind("certification", 0) == 0 ? int(cert_failure) : int(usage));
    }
  }
  return code;
}

int cmd_sweep(const Globals &g, CLI::App *c, const SpecFlags &f, const std::string &axis,
              const std::vector<double> &values)
{
  const ExperimentSpec base = base_spec(g, c, f);
  const auto sum = sweep(base, sweep_axis_from_string(axis), values, g.threads);
  std::cout << sum.to_csv();
  if (!sum.monotone)
    std::printf("# non-monotone verdicts flagged\n");
  if (sum.t_star_spread)
    std::printf("# t* spread across the two finest resolutions: %.3g\n", *sum.t_star_spread);
  for (const auto &r : sum.rows)
    if (r.verdict == "unstable-scheme")
      return scheme_failure;
  return ok;
}

int cmd_weights(const Globals &g, int N, double rho, std::size_t n, double r_max)
{
  auto grid = std::make_shared<const RadialGrid>(r_max, n, N);
  const auto w = build_weights(rho, grid);
  const auto c = derivative_constants(w);
  const json j = {{"N", N},
                  {"rho", rho},
                  {"divergence_defect", w.divergence_defect()},
                  {"derivative_constants", {c[0], c[1], c[2]}},
                  {"remainder_form_bound", remainder_form_bound(w)}};
  if (!g.out.empty()) {
    std::ostringstream os;
    w.write_csv(os);
    atomic_write(fs::path(g.out) / ("weights_N" + std::to_string(N) + "_rho" + fmt_short(rho) + ".csv"), os.str());
  }
  std::cout << j.dump(2) << '\n';
  return ok;
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Radial Klein-Gordon system lab: ground states, evolution, instability experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "TOML or JSON config")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory (or .bin path for groundstate)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "seed recorded in the spec hash");

  SpecFlags gsf, evf, exf, swf;
  auto *gs = app.add_subcommand("groundstate", "solve and certify a ground state");
  add_param_flags(gs, gsf);

  std::string profile;
  auto *ce = app.add_subcommand("certify", "re-certify a stored profile");
  ce->add_option("profile", profile, "profile .bin with its .json sidecar")->required()->check(CLI::ExistingFile);

  std::string ev_profile;
  auto *ev = app.add_subcommand("evolve", "evolve lambda times the standing wave");
  add_run_flags(ev, evf);
  ev->add_option("--profile", ev_profile, "stored ground state to start from")->check(CLI::ExistingFile);

  auto *ex = app.add_subcommand("experiment", "run experiments (all of --config, or one from flags)");
  add_run_flags(ex, exf);

  std::string axis = "lambda";
  std::vector<double> values;
  auto *sw = app.add_subcommand("sweep", "sweep one axis of an experiment");
  add_run_flags(sw, swf);
  sw->add_option("--axis", axis, "lambda | omega | kappa | resolution");
  sw->add_option("--values", values, "comma separated values")->delimiter(',')->required();

  int wN = 3;
  double wrho = 8, wr = 64;
  std::size_t wn = 2048;
  auto *we = app.add_subcommand("weights", "virial weight diagnostics");
  we->add_option("--dim", wN, "space dimension")->check(CLI::Range(2, 5));
  we->add_option("--rho", wrho, "virial radius");
  we->add_option("--n", wn, "grid points");
  we->add_option("--r-max", wr, "outer radius");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gs)
      return cmd_groundstate(g, gs, gsf);
    if (*ce) {
      SolverConfig cfg;
      if (!g.config.empty()) {
        const json j = load_config(g.config);
        if (j.contains("defaults") && j.at("defaults").contains("solver"))
          cfg = solver_from_json(j.at("defaults").at("solver"), cfg);
      }
      return cmd_certify(g, profile, cfg);
    }
    if (*ev)
      return cmd_evolve(g, ev, evf, ev_profile);
    if (*ex)
      return cmd_experiment(g, ex, exf);
    if (*sw)
      return cmd_sweep(g, sw, swf, axis, values);
    if (*we)
      return cmd_weights(g, wN, wrho, wn, wr);
  } catch (const Error &e) {
    std::fprintf(stderr, "kglab: %s\n", e.what());
    return e.kind() == ErrorKind::certification ? cert_failure : usage;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "kglab: %s\n", e.what());
    return usage;
  }
  return usage;
}
