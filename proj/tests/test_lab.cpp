#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include <kglab/lab.hpp>

using namespace kglab;
using Catch::Approx;

namespace {

SolverConfig small_solver(std::size_t n = 1024, double r_max = 32)
{
  SolverConfig c;
  c.n = n;
  c.r_max = r_max;
  return c;
}

fs::path scratch_dir(const std::string &name)
{
  auto d = fs::temp_directory_path() / ("kglab_test_lab_" + name);
  fs::remove_all(d);
  return d;
}

SweepRow row(double v, const char *verdict)
{
  SweepRow r;
  r.value = v;
  r.verdict = verdict;
  return r;
}

} // namespace

TEST_CASE("TOML subset parser")
{
  const std::string text = R"(
# matrix
title = "demo"   # trailing comment
[defaults]
N = 3
omega = 0.0
lambda = 1.2
rho_list = [8, 16]
refine = true

[defaults.solver]
n = 2_048
r_max = 64.0

[defaults.integrator]
dt = 8e-6

[[experiments]]
label = "a"
lambda = 0.95

[[experiments]]
label = "b#1"
N = 2
)";
  const json j = parse_toml(text);
  REQUIRE(j.at("title") == "demo");
  REQUIRE(j.at("defaults").at("N") == 3);
  REQUIRE(j.at("defaults").at("rho_list") == json::array({8, 16}));
  REQUIRE(j.at("defaults").at("refine") == true);
  REQUIRE(j.at("defaults").at("solver").at("n") == 2048);
  REQUIRE(j.at("defaults").at("integrator").at("dt").get<double>() == 8e-6);
  REQUIRE(j.at("experiments").size() == 2);
  REQUIRE(j.at("experiments")[1].at("label") == "b#1");

  const auto specs = experiments_from_config(j);
  REQUIRE(specs.size() == 2);
  REQUIRE(specs[0].lambda == 0.95);
  REQUIRE(specs[0].solver.n == 2048);
  REQUIRE(specs[0].integrator.dt == 8e-6);
  REQUIRE(specs[1].params.N == 2);
  REQUIRE(specs[1].lambda == 1.2);

  REQUIRE_THROWS_AS(parse_toml("x = "), Error);
  REQUIRE_THROWS_AS(parse_toml("[a"), Error);
  REQUIRE_THROWS_AS(parse_toml("just words"), Error);
  REQUIRE_THROWS_AS(parse_toml("x = 1.2.3"), Error);
}

TEST_CASE("shipped experiment matrix loads in both formats")
{
  const fs::path root = KGLAB_SOURCE_DIR;
  const auto a = experiments_from_config(load_config(root / "configs" / "experiments.toml"));
  const auto b = experiments_from_config(load_config(root / "configs" / "experiments.json"));
  REQUIRE(a.size() == 8);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    REQUIRE(a[k].hash() == b[k].hash());
    REQUIRE(a[k].label == b[k].label);
  }
}

TEST_CASE("experiment spec validation and content hash")
{
  ExperimentSpec s;
  s.solver = small_solver();
  REQUIRE_NOTHROW(s.validate());
  auto bad = s;
  bad.lambda = -0.1;
  REQUIRE_THROWS_AS(bad.validate(), Error);
  bad = s;
  bad.rho_list = {};
  REQUIRE_THROWS_AS(bad.validate(), Error);
  bad = s;
  bad.rho_list = {17};
  REQUIRE_THROWS_AS(bad.validate(), Error);

  auto other = s;
  other.label = "renamed";
  other.output_dir = "elsewhere";
  REQUIRE(other.hash() == s.hash());
  other.lambda = 1.3;
  REQUIRE(other.hash() != s.hash());
  REQUIRE(s.bundle_dir().filename().string() == "run-" + s.hash());

  ExperimentSpec c = s;
  c.lambda = 1.0;
  REQUIRE(c.control());
  REQUIRE(experiment_from_json(c.to_json().at("params"), s).params.omega == s.params.omega);
}

TEST_CASE("delta reports on computed ground states")
{
  const SolverConfig cfg = small_solver();
  SECTION("boundary and zero-frequency cases")
  {
    const Params p(3, 2, 0);
    const auto g = solve_shooting(p, cfg);
    const auto d1 = compute_deltas(g, 1.0, p);
    REQUIRE(std::abs(*d1.delta1) < 1e-9 * g.J_raw);
    REQUIRE_FALSE(d1.in_R0);
    const auto d = compute_deltas(g, 1.2, p);
    REQUIRE(*d.delta2 == 0.0);
    REQUIRE(*d.delta1 > 0);
    REQUIRE(d.in_R1);
    REQUIRE(d.in_R0);
    REQUIRE(*d.chain_error < 1e-6);
    REQUIRE(-d.H >= *d.h_lower);
    REQUIRE_THROWS_AS(compute_deltas(g, 0.0, p), Error);
    REQUIRE_THROWS_AS(compute_deltas(g, 1.2, Params(3, 2, 0.1)), Error);
  }
  SECTION("mass-subcritical case with frequency")
  {
    const Params p(2, 2, 0.3);
    const auto g = solve_shooting(p, cfg);
    const auto d = compute_deltas(g, 1.2, p);
    REQUIRE(*d.delta1 > 0);
    REQUIRE(*d.delta2 > 0);
    REQUIRE(*d.delta == Approx(*d.delta1 + *d.delta2));
    REQUIRE(d.positive());
    REQUIRE(*d.chain_error < 1e-6);
    // the chain reduces delta2 to alpha w^2 (lambda^2 - 1)(|phi1|^2 + 2 |phi2|^2), up to O(dr^2) on the grid
    const auto I = pair_integrals(g.profile);
    REQUIRE(*d.delta2 == Approx(2 * 0.09 * 0.44 * (I.n1 + 2 * I.n2)).epsilon(1e-3));
    REQUIRE(-d.H >= *d.h_lower);
  }
  SECTION("mass-supercritical cases")
  {
    for (int N : {4, 5}) {
      const Params p(N, 2, 0.3);
      const auto g = solve_shooting(p, cfg);
      const auto d = compute_deltas(g, 1.2, p);
      REQUIRE(*d.delta_supercrit > 0);
      REQUIRE_FALSE(d.delta1);
      REQUIRE(d.in_R1);
      REQUIRE(-d.K / N > d.d1 - d.E_minus_omegaQ);
    }
  }
  SECTION("non-resonant masses skip the identity chain")
  {
    const Params p(2, 1.0, 0.4);
    const auto g = solve_shooting(p, cfg);
    const auto d = compute_deltas(g, 1.2, p);
    REQUIRE_FALSE(d.chain_error);
    REQUIRE_FALSE(d.warnings.empty());
    REQUIRE_FALSE(d.hypotheses);
  }
}

TEST_CASE("Strauss tail products")
{
  const Params p(3, 2, 0);
  const auto g = solve_shooting(p, small_solver());
  const auto rep = strauss_tail_check(g, {16, 8, 24});
  REQUIRE(rep.rows.size() == 3);
  REQUIRE(rep.rows[0].rho == 8);
  REQUIRE(rep.nonincreasing);
  REQUIRE(std::isfinite(rep.C));
  REQUIRE(rep.C > 0);
  const auto dbl = strauss_tail_check(g, {2, 4, 8, 16});
  REQUIRE(dbl.nonincreasing);

  auto grid = std::make_shared<const RadialGrid>(16.0, 256, 3);
  FieldPair bump(grid);
  for (std::size_t j = 0; j < grid->n(); ++j) {
    const double r = grid->r(j);
    bump.u1[j] = r < 4 ? std::pow(std::cos(std::numbers::pi * r / 8), 4) : 0.0;
    bump.u2[j] = bump.u1[j];
  }
  const auto c = strauss_tail_check(bump, {2, 4, 6});
  REQUIRE(c.rows[0].c1 > 0);
  REQUIRE(c.rows[1].c1 == 0.0);
  REQUIRE(c.rows[2].c2 == 0.0);
}

TEST_CASE("control run writes a complete, deterministic bundle")
{
  ExperimentSpec s;
  s.params = Params(3, 2, 0);
  s.lambda = 1.0;
  s.solver = small_solver();
  s.integrator.t_end = 10;
  s.rho_list = {4, 8};
  s.output_dir = scratch_dir("control");
  s.label = "control";
  const auto b = run_experiment(s);
  REQUIRE(b.role() == "control");
  REQUIRE(b.trajectory.verdict == Verdict::completed);
  REQUIRE(b.max_abs_K_rel < 1e-2);
  REQUIRE(std::abs(b.max_norm_ratio - 1) < 0.1);
  REQUIRE(b.bounds.all_hold);
  for (const char *f : {"spec.json", "groundstate.bin", "groundstate.bin.json", "trajectory.csv", "verdict.json",
                        "deltas.json", "virial_rho4.csv", "virial_rho8.csv", "norm.svg", "drift.svg", "virial.svg",
                        "signs.svg"})
    REQUIRE(fs::exists(b.dir / f));
  const auto verdict = json::parse(read_file(b.dir / "verdict.json"));
  REQUIRE(verdict.at("verdict") == "completed");
  REQUIRE(verdict.contains("bounds_margins"));
  const std::string csv1 = read_file(b.dir / "trajectory.csv");
  const std::string vir1 = read_file(b.dir / "virial_rho8.csv");
  REQUIRE(csv1.rfind(FunctionalReport::csv_header(), 0) == 0);
  run_experiment(s);
  REQUIRE(read_file(b.dir / "trajectory.csv") == csv1);
  REQUIRE(read_file(b.dir / "virial_rho8.csv") == vir1);
  REQUIRE(read_file(b.dir / "norm.svg").find("<polyline") != std::string::npos);
  fs::remove_all(s.output_dir);
}

TEST_CASE("coarse blow-up run keeps the invariant sets and the virial growth")
{
  ExperimentSpec s;
  s.params = Params(3, 2, 0);
  s.lambda = 1.2;
  s.solver = small_solver();
  s.integrator.dt = 2e-5;
  s.integrator.record_every = 50;
  s.integrator.drift_budget = 1e-2;
  s.rho_list = {8, 16};
  const auto b = run_experiment(s, {false, nullptr});
  REQUIRE(b.trajectory.verdict == Verdict::blowup);
  REQUIRE(b.trajectory.t_star);
  REQUIRE(b.invariants.holds);
  REQUIRE(b.invariants.K_negative);
  REQUIRE(b.invariants.K0_negative);
  REQUIRE(b.virial_growth.size() == 2);
  for (const auto &v : b.virial_growth) {
    REQUIRE(v.holds);
    REQUIRE(v.margin_max > 0);
    REQUIRE(v.C0 > 0);
  }
}

TEST_CASE("sweeps: ordering, per-row failures, monotonicity flag")
{
  ExperimentSpec s;
  s.params = Params(3, 2, 0);
  s.solver = small_solver();
  s.integrator.dt = 2e-5;
  s.integrator.t_end = 1.6;
  s.integrator.record_every = 100;
  s.integrator.drift_budget = 1e-2;
  const RunOptions quiet{false, nullptr};

  REQUIRE(sweep(s, SweepAxis::lambda, {}, 2, quiet).rows.empty());

  const auto sum = sweep(s, SweepAxis::lambda, {1.2, 0.9, 1.0}, 2, quiet);
  REQUIRE(sum.rows.size() == 3);
  REQUIRE(sum.rows[0].value == 0.9);
  REQUIRE(sum.rows[0].verdict == "completed");
  REQUIRE(sum.rows[1].verdict == "completed");
  REQUIRE(sum.rows[2].verdict == "blowup");
  REQUIRE(sum.monotone);
  REQUIRE(sum.to_csv().find("0.90000000000000002,completed") != std::string::npos);

  const auto om = sweep(s, SweepAxis::omega, {0.2, 1.5}, 1, quiet);
  REQUIRE(om.rows[1].verdict == "error");
  REQUIRE(om.rows[1].error.find("inadmissible") != std::string::npos);
  REQUIRE(om.rows[0].verdict != "error");

  SweepSummary fake;
  fake.rows = {row(1.0, "completed"), row(1.1, "blowup"), row(1.2, "completed"), row(1.3, "error"), row(1.4, "blowup")};
  flag_monotonicity(fake);
  REQUIRE_FALSE(fake.monotone);
  REQUIRE(fake.rows[2].flagged);
  REQUIRE_FALSE(fake.rows[1].flagged);
  REQUIRE_FALSE(fake.rows[4].flagged);
  REQUIRE(sweep_axis_from_string("resolution") == SweepAxis::resolution);
  REQUIRE_THROWS_AS(sweep_axis_from_string("time"), Error);
  REQUIRE_THROWS_AS(sweep_point(s, SweepAxis::resolution, 100.5), Error);
}

TEST_CASE("svg charts tolerate empty and non-positive data")
{
  const auto e = svg_chart("empty", "t", "y", {});
  REQUIRE(e.find("<svg") == 0);
  const auto l = svg_chart("log", "t", "y", {{"a", {0, 1, 2}, {0.0, 1e-3, -1}}}, true);
  REQUIRE(l.find("<polyline") != std::string::npos);
  REQUIRE(l.find("nan") == std::string::npos);
}
