#ifndef KGLAB_GROUND_STATE_HPP
#define KGLAB_GROUND_STATE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "functionals.hpp"
#include "io.hpp"

namespace kglab {

enum class Method { shooting, gradient_flow };

inline const char *to_string(Method m) { return m == Method::shooting ? "shooting" : "gradient-flow"; }

inline Method method_from_string(const std::string &s)
{
  if (s == "shooting")
    return Method::shooting;
  if (s == "gradient-flow" || s == "gradient_flow" || s == "flow")
    return Method::gradient_flow;
  throw Error(ErrorKind::invalid_argument, "unknown method '" + s + "'");
}

struct SolverConfig {
  double tol_residual = 1e-9;
  double tol_identity = 1e-6;
  int max_newton_iters = 40;
  int max_flow_steps = 4000;
  double flow_step_size = 0.8;
  /// flow steps that use the constraint projection before switching to the Nehari amplitude projection
  int descent_steps = 100;
  std::array<double, 2> seed_amplitudes{3.0, 2.0};
  double r_max = 32.0;
  std::size_t n = 4096;
  Boundary boundary = Boundary::dirichlet;
  /// also solve on the 2n grid and extrapolate the identity ledger
  bool refine = true;

  void validate() const
  {
    if (!(tol_residual > 0) || !(tol_identity > 0))
      throw Error(ErrorKind::invalid_argument, "solver tolerances must be positive");
    if (!(seed_amplitudes[0] > 0) || !(seed_amplitudes[1] > 0))
      throw Error(ErrorKind::invalid_argument, "seed amplitudes must be positive");
    if (!(flow_step_size > 0) || flow_step_size > 1)
      throw Error(ErrorKind::invalid_argument, "flow step size must lie in (0, 1]");
    if (max_flow_steps <= 0 || max_newton_iters <= 0)
      throw Error(ErrorKind::invalid_argument, "iteration limits must be positive");
  }
};

/// Relative violations of the four solution identities, plus a weak-form residual.
struct IdentityReport {
  double pohozaev = 0;      // (N-2) L + N M_w - N P
  double nehari = 0;        // 2 L + 2 M_w - 3 P
  double mass_gradient = 0; // N M_w - (6-N) L
  double K = 0;
  double K0 = 0;
  double weak_residual = 0;
  bool trivial = false;
  bool extrapolated = false;

  double worst() const { return std::max({pohozaev, nehari, mass_gradient, K, K0}); }
  bool pass(double tol) const { return !trivial && worst() < tol; }

  nlohmann::json to_json() const
  {
    return {{"pohozaev", pohozaev}, {"nehari", nehari}, {"mass_gradient", mass_gradient}, {"K", K},
            {"K0_omega", K0},       {"weak_residual", weak_residual},  {"trivial", trivial},
            {"extrapolated", extrapolated}};
  }
};

/// Values of L, M_omega, P and the masses, used for the identity ledger.
struct StaticValues {
  double n1 = 0, n2 = 0, L = 0, M_omega = 0, P = 0;
};

inline IdentityReport identity_report(const StaticValues &v, const Params &p)
{
  IdentityReport r;
  const int N = p.N;
  const double scale = std::max({std::abs(v.L), std::abs(v.M_omega), std::abs(v.P)});
  if (!(scale > 1e-14)) {
    r.trivial = true;
    return r;
  }
  const double a = p.alpha();
  r.pohozaev = std::abs((N - 2) * v.L + N * v.M_omega - N * v.P) / scale;
  r.nehari = std::abs(2 * v.L + 2 * v.M_omega - 3 * v.P) / scale;
  r.mass_gradient = std::abs(N * v.M_omega - (6 - N) * v.L) / scale;
  r.K = std::abs(2 * v.L - 0.5 * N * v.P) / scale;
  r.K0 = std::abs(a * v.M_omega + (a + 2) * (v.L - v.P)) / scale;
  return r;
}

struct GroundState {
  FieldPair profile;
  Params params;
  Method method = Method::shooting;
  double residual_linf = 0;
  double residual_refined = 0;
  double d1 = 0;
  double d0 = 0;
  double J_raw = 0;
  StaticValues raw, refined, extrapolated;
  IdentityReport identity_raw, identity;
  int iterations = 0;
  bool monotone = false;
  bool positive = false;
  std::vector<std::string> notes;

  bool certified(const SolverConfig &cfg) const
  {
    return residual_linf < cfg.tol_residual && identity.pass(cfg.tol_identity) && positive && monotone;
  }

  nlohmann::json to_json() const
  {
    const RadialGrid &g = *profile.grid;
    return {{"params", {{"N", params.N}, {"kappa", params.kappa}, {"omega", params.omega}}},
            {"method", to_string(method)},
            {"grid", {{"n", g.n()}, {"r_max", g.r_max()}, {"N", g.dim()}, {"boundary", to_string(g.boundary())}}},
            {"residual_linf", residual_linf},
            {"residual_refined", residual_refined},
            {"J_omega", J_raw},
            {"d1_omega", d1},
            {"d0_omega", d0},
            {"phi1_0", profile.u1[0].real()},
            {"phi2_0", profile.u2[0].real()},
            {"raw", {{"L", raw.L}, {"M_omega", raw.M_omega}, {"P", raw.P}}},
            {"extrapolated", {{"L", extrapolated.L}, {"M_omega", extrapolated.M_omega}, {"P", extrapolated.P}}},
            {"identity_report", identity.to_json()},
            {"identity_report_raw", identity_raw.to_json()},
            {"iterations", iterations},
            {"positive", positive},
            {"monotone", monotone},
            {"notes", notes}};
  }
};

namespace gs_detail {

using LD = long double;
using GridLD = RadialGridT<LD>;

struct Profile {
  std::vector<LD> p1, p2;
};

struct Masses {
  LD m1sq, m2sq;
};

inline Masses masses(const Params &p)
{
  const LD w = p.omega, k = p.kappa;
  return {LD(1) - w * w, k * k - LD(4) * w * w};
}

struct Ints {
  LD n1 = 0, n2 = 0, g1 = 0, g2 = 0, P = 0;
  LD L() const { return g1 + g2 / 2; }
};

inline Ints integrals(const GridLD &g, const Profile &f)
{
  Ints I;
  const auto &w = g.weights();
  for (std::size_t j = 0; j < g.n(); ++j) {
    I.n1 += f.p1[j] * f.p1[j] * w[j];
    I.n2 += f.p2[j] * f.p2[j] * w[j];
    I.P += f.p1[j] * f.p1[j] * f.p2[j] * w[j];
  }
  I.n1 *= g.area();
  I.n2 *= g.area();
  I.P *= g.area();
  I.g1 = g.dirichlet_energy(f.p1);
  I.g2 = g.dirichlet_energy(f.p2);
  return I;
}

inline LD momega(const Ints &I, const Masses &m) { return m.m1sq * I.n1 + m.m2sq * I.n2 / 2; }

/// discrete residuals -Delta phi + m^2 phi - F(phi)
inline Profile residual(const GridLD &g, const Masses &m, const Profile &f)
{
  Profile r;
  r.p1 = g.laplacian(f.p1);
  r.p2 = g.laplacian(f.p2);
  for (std::size_t j = 0; j < g.n(); ++j) {
    r.p1[j] = -r.p1[j] + m.m1sq * f.p1[j] - f.p1[j] * f.p2[j];
    r.p2[j] = -r.p2[j] + m.m2sq * f.p2[j] - f.p1[j] * f.p1[j];
  }
  return r;
}

inline LD sup_norm(const Profile &r)
{
  LD s = 0;
  for (std::size_t j = 0; j < r.p1.size(); ++j)
    s = std::max({s, std::abs(r.p1[j]), std::abs(r.p2[j])});
  return s;
}

/// Tridiagonal coefficients of -Delta on the grid: lower, diagonal, upper.
struct Stencil {
  std::vector<LD> lo, di, up;
};

inline Stencil minus_laplacian(const GridLD &g)
{
  const std::size_t n = g.n();
  const auto &a = g.faces();
  const auto &s = g.lap_scale();
  Stencil st{std::vector<LD>(n, 0), std::vector<LD>(n, 0), std::vector<LD>(n, 0)};
  for (std::size_t j = 0; j < n; ++j) {
    st.lo[j] = j > 0 ? -a[j] * s[j] : LD(0);
    st.up[j] = j + 1 < n ? -a[j + 1] * s[j] : LD(0);
    st.di[j] = (a[j] + a[j + 1]) * s[j];
  }
  if (g.boundary() == Boundary::dirichlet)
    st.di[n - 1] += a[n] * s[n - 1];
  else
    st.di[n - 1] -= a[n] * s[n - 1];
  return st;
}

/// Solve (-Delta + shift) x = rhs by the Thomas algorithm.
inline std::vector<LD> solve_shifted(const Stencil &st, LD shift, const std::vector<LD> &rhs)
{
  const std::size_t n = rhs.size();
  std::vector<LD> c(n), d(n), x(n);
  LD den = st.di[0] + shift;
  c[0] = st.up[0] / den;
  d[0] = rhs[0] / den;
  for (std::size_t j = 1; j < n; ++j) {
    den = st.di[j] + shift - st.lo[j] * c[j - 1];
    c[j] = st.up[j] / den;
    d[j] = (rhs[j] - st.lo[j] * d[j - 1]) / den;
  }
  x[n - 1] = d[n - 1];
  for (std::size_t j = n - 1; j-- > 0;)
    x[j] = d[j] - c[j] * x[j + 1];
  return x;
}

/// One Newton step on the coupled system by block (2x2) Thomas elimination; returns the update.
inline Profile newton_update(const GridLD &g, const Stencil &st, const Masses &m, const Profile &f, const Profile &res)
{
  const std::size_t n = g.n();
  using B = std::array<LD, 4>; // row-major 2x2
  auto mul = [](const B &x, const B &y) {
    return B{x[0] * y[0] + x[1] * y[2], x[0] * y[1] + x[1] * y[3], x[2] * y[0] + x[3] * y[2], x[2] * y[1] + x[3] * y[3]};
  };
  auto inv = [](const B &x) {
    const LD det = x[0] * x[3] - x[1] * x[2];
    return B{x[3] / det, -x[1] / det, -x[2] / det, x[0] / det};
  };
  auto mv = [](const B &x, LD a, LD b) { return std::array<LD, 2>{x[0] * a + x[1] * b, x[2] * a + x[3] * b}; };
  std::vector<B> C(n);
  std::vector<std::array<LD, 2>> D(n);
  for (std::size_t j = 0; j < n; ++j) {
    B diag{st.di[j] + m.m1sq - f.p2[j], -f.p1[j], -LD(2) * f.p1[j], st.di[j] + m.m2sq};
    std::array<LD, 2> rhs{-res.p1[j], -res.p2[j]};
    if (j > 0) {
      // subtract lo * C[j-1] from diag, lo * D[j-1] from rhs (lo is a scalar multiple of identity)
      for (int k = 0; k < 4; ++k)
        diag[k] -= st.lo[j] * C[j - 1][k];
      rhs[0] -= st.lo[j] * D[j - 1][0];
      rhs[1] -= st.lo[j] * D[j - 1][1];
    }
    const B di = inv(diag);
    C[j] = mul(di, B{st.up[j], 0, 0, st.up[j]});
    D[j] = mv(di, rhs[0], rhs[1]);
  }
  Profile dx{std::vector<LD>(n), std::vector<LD>(n)};
  dx.p1[n - 1] = D[n - 1][0];
  dx.p2[n - 1] = D[n - 1][1];
  for (std::size_t j = n - 1; j-- > 0;) {
    const auto t = mv(C[j], dx.p1[j + 1], dx.p2[j + 1]);
    dx.p1[j] = D[j][0] - t[0];
    dx.p2[j] = D[j][1] - t[1];
  }
  return dx;
}

/// Newton polish to the target residual; returns the final sup residual.
inline LD newton_polish(const GridLD &g, const Masses &m, Profile &f, LD target, int max_iters, int *iters = nullptr)
{
  const Stencil st = minus_laplacian(g);
  Profile res = residual(g, m, f);
  LD r = sup_norm(res);
  int it = 0;
  for (; it < max_iters && r > target; ++it) {
    const Profile dx = newton_update(g, st, m, f, res);
    LD step = 1;
    for (int back = 0; back < 30; ++back) {
      Profile trial = f;
      for (std::size_t j = 0; j < g.n(); ++j) {
        trial.p1[j] += step * dx.p1[j];
        trial.p2[j] += step * dx.p2[j];
      }
      Profile tres = residual(g, m, trial);
      const LD tr = sup_norm(tres);
      if (tr < r || back == 29) {
        f = std::move(trial);
        res = std::move(tres);
        r = tr;
        break;
      }
      step /= 2;
    }
  }
  if (iters)
    *iters = it;
  return r;
}

inline Profile resample(const GridLD &from, const Profile &f, const GridLD &to)
{
  const auto s1 = radial_spline(from, f.p1), s2 = radial_spline(from, f.p2);
  Profile out{std::vector<LD>(to.n()), std::vector<LD>(to.n())};
  for (std::size_t j = 0; j < to.n(); ++j) {
    const LD r = to.r(j);
    out.p1[j] = r >= from.r_max() ? LD(0) : s1(r);
    out.p2[j] = r >= from.r_max() ? LD(0) : s2(r);
  }
  return out;
}

enum class Event { none, one_minus, one_plus, two_minus, two_plus };

struct MarchResult {
  Event event = Event::none;
  std::size_t index = 0; // node where the event occurred
};

/// Outward march of the discrete equations from (a1, a2) at the first node.
inline MarchResult march(const GridLD &g, const Masses &m, LD a1, LD a2, Profile *out = nullptr)
{
  const std::size_t n = g.n();
  const auto &a = g.faces();
  const auto &w = g.weights();
  const LD dr = g.dr();
  LD x1 = a1, x2 = a2, f1 = 0, f2 = 0;
  if (out) {
    out->p1.assign(n, 0);
    out->p2.assign(n, 0);
  }
  for (std::size_t j = 0; j + 1 < n; ++j) {
    if (out) {
      out->p1[j] = x1;
      out->p2[j] = x2;
    }
    f1 += (m.m1sq * x1 - x1 * x2) * w[j] * dr;
    f2 += (m.m2sq * x2 - x1 * x1) * w[j] * dr;
    const LD y1 = x1 + f1 / a[j + 1], y2 = x2 + f2 / a[j + 1];
    if (y1 < 0)
      return {Event::one_minus, j + 1};
    if (y2 < 0)
      return {Event::two_minus, j + 1};
    if (y1 > x1)
      return {Event::one_plus, j + 1};
    if (y2 > x2)
      return {Event::two_plus, j + 1};
    x1 = y1;
    x2 = y2;
  }
  return {Event::none, n - 1};
}

inline bool a2_too_large(Event e) { return e == Event::two_plus || e == Event::one_minus; }

struct InnerResult {
  LD a2 = 0;
  Event low_event = Event::none;
  std::size_t escape = 0;
  bool ok = false;
};

/// For fixed a1, bisect a2 between the two event classes.
inline InnerResult bisect_a2(const GridLD &g, const Masses &m, LD a1)
{
  InnerResult res;
  LD lo = 0, hi = std::max<LD>(4, 4 * a1);
  for (int k = 0; k < 80 && !a2_too_large(march(g, m, a1, hi).event); ++k)
    hi *= 2;
  MarchResult mlo = march(g, m, a1, lo);
  if (a2_too_large(mlo.event))
    return res;
  if (!a2_too_large(march(g, m, a1, hi).event))
    return res;
  for (int it = 0; it < 200; ++it) {
    const LD mid = (lo + hi) / 2;
    if (mid <= lo || mid >= hi)
      break;
    const MarchResult mm = march(g, m, a1, mid);
    if (mm.event == Event::none) {
      lo = mid;
      mlo = mm;
      break;
    }
    if (a2_too_large(mm.event))
      hi = mid;
    else {
      lo = mid;
      mlo = mm;
    }
  }
  res.a2 = lo;
  res.low_event = mlo.event;
  res.escape = mlo.index;
  res.ok = true;
  return res;
}

} // namespace gs_detail

/// Certify a computed profile: residual, identities (raw and extrapolated), positivity, monotonicity, d-values.
namespace gs_detail {

inline FieldPair to_field(std::shared_ptr<const RadialGrid> g, const Profile &f)
{
  FieldPair u(g);
  for (std::size_t j = 0; j < g->n(); ++j) {
    u.u1[j] = double(f.p1[j]);
    u.u2[j] = double(f.p2[j]);
  }
  return u;
}

inline StaticValues static_values(const Ints &I, const Masses &m)
{
  return {double(I.n1), double(I.n2), double(I.L()), double(momega(I, m)), double(I.P)};
}

/// Weak-form residual against smooth compact bumps centred across the profile.
inline double weak_residual(const GridLD &g, const Masses &m, const Profile &f)
{
  const Profile res = residual(g, m, f);
  const auto &w = g.weights();
  LD worst = 0, scale = 0;
  for (std::size_t j = 0; j < g.n(); ++j)
    scale = std::max({scale, std::abs(f.p1[j]), std::abs(f.p2[j])});
  const LD R = std::min<LD>(g.r_max() / 2, 12);
  for (int k = 0; k < 8; ++k) {
    const LD c = R * k / 8, width = std::max<LD>(1, R / 8);
    LD s1 = 0, s2 = 0, norm = 0;
    for (std::size_t j = 0; j < g.n(); ++j) {
      const LD x = (g.r(j) - c) / width;
      if (std::abs(x) >= 1)
        continue;
      const LD b = std::pow(std::cos(std::numbers::pi_v<LD> * x / 2), 4);
      s1 += res.p1[j] * b * w[j];
      s2 += res.p2[j] * b * w[j];
      norm += b * w[j];
    }
    if (norm > 0)
      worst = std::max(worst, (std::abs(s1) + std::abs(s2)) / norm);
  }
  return double(worst / std::max<LD>(scale, 1e-300));
}

inline GroundState finish(const Params &p, const SolverConfig &cfg, Method method, const GridLD &g, Profile f,
                          int iterations)
{
  const Masses m = masses(p);
  GroundState gs;
  gs.params = p;
  gs.method = method;
  gs.iterations = iterations;
  auto grid = std::make_shared<const RadialGrid>(double(g.r_max()), g.n(), g.dim(), g.boundary());
  gs.residual_linf = double(sup_norm(residual(g, m, f)));
  const Ints I = integrals(g, f);
  gs.raw = static_values(I, m);
  gs.identity_raw = identity_report(gs.raw, p);
  gs.identity_raw.weak_residual = weak_residual(g, m, f);
  gs.J_raw = double(I.L() / 2 + momega(I, m) / 2 - I.P / 2);
  gs.positive = true;
  gs.monotone = true;
  for (std::size_t j = 0; j < g.n(); ++j) {
    if (!(f.p1[j] > 0) || !(f.p2[j] > 0))
      gs.positive = false;
    if (j > 0 && (f.p1[j] >= f.p1[j - 1] || f.p2[j] >= f.p2[j - 1]))
      gs.monotone = false;
  }
  if (!gs.positive)
    gs.notes.push_back("profile is not strictly positive");
  if (!gs.monotone)
    gs.notes.push_back("profile is not strictly decreasing");
  if (cfg.refine) {
    const GridLD g2(g.r_max(), 2 * g.n(), g.dim(), g.boundary());
    Profile f2 = resample(g, f, g2);
    gs.residual_refined = double(newton_polish(g2, m, f2, LD(cfg.tol_residual) / 10, cfg.max_newton_iters));
    const Ints I2 = integrals(g2, f2);
    gs.refined = static_values(I2, m);
    auto ex = [](double a, double b) { return (4 * b - a) / 3; };
    gs.extrapolated = {ex(gs.raw.n1, gs.refined.n1), ex(gs.raw.n2, gs.refined.n2), ex(gs.raw.L, gs.refined.L),
                       ex(gs.raw.M_omega, gs.refined.M_omega), ex(gs.raw.P, gs.refined.P)};
    gs.identity = identity_report(gs.extrapolated, p);
    gs.identity.extrapolated = true;
  } else {
    gs.refined = gs.raw;
    gs.extrapolated = gs.raw;
    gs.identity = gs.identity_raw;
  }
  gs.identity.weak_residual = gs.identity_raw.weak_residual;
  const StaticValues &x = gs.extrapolated;
  gs.d1 = 0.5 * x.L + 0.5 * x.M_omega - 0.5 * x.P;
  gs.d0 = gs.d1;
  gs.profile = to_field(grid, f);
  return gs;
}

inline void check_params(const Params &p)
{
  p.validate();
  if (!p.admissible())
    throw Error(ErrorKind::inadmissible, "|omega| must be below min(1, kappa/2)");
  const double gap = std::min(1.0 - p.omega * p.omega, p.kappa * p.kappa / 4 - p.omega * p.omega);
  if (gap < 1e-3)
    throw Error(ErrorKind::inadmissible, "omega too close to min(1, kappa/2): profiles decay too slowly");
}

} // namespace gs_detail


/// Shooting: bisection on the outward march of the discrete radial equations, tail attachment, Newton polish.
inline GroundState solve_shooting(const Params &p, const SolverConfig &cfg)
{
  using namespace gs_detail;
  cfg.validate();
  check_params(p);
  const GridLD g(cfg.r_max, cfg.n, p.N, cfg.boundary);
  const Masses m = masses(p);

  // bracket a1 by the low-side boundary event of the inner bisection
  auto side = [&](LD a1) -> int {
    const InnerResult r = bisect_a2(g, m, a1);
    if (!r.ok)
      return 0;
    if (r.low_event == Event::one_plus)
      return +1; // a1 too small
    if (r.low_event == Event::two_minus)
      return -1; // a1 too large
    return 0;
  };
  LD lo = 0, hi = 0;
  int slo = 0;
  bool bracket = false;
  LD prev = 0;
  int sprev = 0;
  for (LD a1 = 0.25; a1 < 4096; a1 *= LD(1.25)) {
    const int s = side(a1);
    if (sprev == +1 && s == -1) {
      lo = prev;
      hi = a1;
      slo = +1;
      bracket = true;
      break;
    }
    if (s != 0) {
      prev = a1;
      sprev = s;
    }
  }
  if (!bracket)
    throw Error(ErrorKind::stagnation, "no sign-change bracket for the central amplitude");
  (void)slo;
  InnerResult best;
  for (int it = 0; it < 200; ++it) {
    const LD mid = (lo + hi) / 2;
    if (mid <= lo || mid >= hi)
      break;
    const int s = side(mid);
    if (s == 0)
      break;
    (s > 0 ? lo : hi) = mid;
  }
  const LD a1 = lo;
  if (a1 < LD(1e-8))
    throw Error(ErrorKind::trivial_collapse, "shooting amplitude collapsed to zero");
  best = bisect_a2(g, m, a1);
  if (!best.ok)
    throw Error(ErrorKind::stagnation, "inner bisection lost its bracket");

  Profile f;
  march(g, m, a1, best.a2, &f);
  // keep the march up to a safe radius, continue with the asymptotic decay
  std::size_t cut = best.escape > 40 ? best.escape * 4 / 5 : best.escape;
  if (best.escape >= g.n() - 1)
    cut = g.n() - 1;
  const LD mu1 = std::sqrt(m.m1sq), mu2 = std::sqrt(m.m2sq);
  const LD rc = g.r(cut);
  for (std::size_t j = cut; j < g.n(); ++j) {
    const LD r = g.r(j);
    const LD alg = std::pow(rc / r, LD(g.dim() - 1) / 2);
    f.p1[j] = f.p1[cut] * alg * std::exp(-mu1 * (r - rc));
    f.p2[j] = f.p2[cut] * alg * std::exp(-mu2 * (r - rc));
  }
  int iters = 0;
  const LD r = newton_polish(g, m, f, LD(cfg.tol_residual) / 10, cfg.max_newton_iters, &iters);
  if (!(r < LD(cfg.tol_residual)))
    throw Error(ErrorKind::stagnation, "Newton polish did not reach the residual tolerance");
  if (std::abs(f.p1[0]) < LD(1e-6))
    throw Error(ErrorKind::trivial_collapse, "polished shooting profile is trivial");
  GroundState gs = finish(p, cfg, Method::shooting, g, std::move(f), iters);
  gs.notes.push_back("escape radius " + std::to_string(double(g.r(best.escape))));
  return gs;
}

namespace gs_detail {

/// Constraint projection used during the descent phase.
inline bool project_constraint(const GridLD &g, const Params &p, const Masses &m, Profile &f, LD *factor = nullptr)
{
  const Ints I = integrals(g, f);
  if (!(I.P > 0))
    return false;
  const int N = p.N;
  const LD a = p.alpha();
  if (N <= 3) {
    const LD lam = (a * momega(I, m) + (a + 2) * I.L()) / ((a + 2) * I.P);
    if (!(lam > 0) || lam > 10)
      throw Error(ErrorKind::bracketing, "K0 projection root outside (0, 10]");
    for (std::size_t j = 0; j < g.n(); ++j) {
      f.p1[j] *= lam;
      f.p2[j] *= lam;
    }
    if (factor)
      *factor = lam;
    return true;
  }
  if (N == 5) {
    const LD sq = LD(4) / 5 * I.L() / I.P;
    const LD lam = sq * sq;
    if (!(lam > 0) || lam > 10)
      throw Error(ErrorKind::bracketing, "K projection root outside (0, 10]");
    const LD amp = std::pow(lam, LD(2.5));
    f.p1 = dilate_profile(g, f.p1, amp, lam);
    f.p2 = dilate_profile(g, f.p2, amp, lam);
    if (factor)
      *factor = lam;
    return true;
  }
  // N = 4: u(./s) with s = (L/P)^{1/2} puts u on K = 0 but leaves the family lam^2 u(lam .) free.
  // The amplitude 2 M_w / P equals 1 on solutions (L = P, 2 M_w = P) and pins that scale.
  const LD s = std::sqrt(I.L() / I.P);
  if (!(s > 0) || s > 10 || s < LD(0.1))
    throw Error(ErrorKind::bracketing, "s-rescale outside [0.1, 10]");
  f.p1 = dilate_profile(g, f.p1, LD(1), LD(1) / s);
  f.p2 = dilate_profile(g, f.p2, LD(1), LD(1) / s);
  const Ints J = integrals(g, f);
  const LD amp = LD(2) * momega(J, m) / J.P;
  for (std::size_t j = 0; j < g.n(); ++j) {
    f.p1[j] *= amp;
    f.p2[j] *= amp;
  }
  if (factor)
    *factor = s;
  return true;
}

/// Amplitude projection onto 2L + 2M_w = 3P.
inline bool project_nehari(const GridLD &g, const Masses &m, Profile &f)
{
  const Ints I = integrals(g, f);
  if (!(I.P > 0))
    return false;
  const LD lam = LD(2) * (I.L() + momega(I, m)) / (LD(3) * I.P);
  for (std::size_t j = 0; j < g.n(); ++j) {
    f.p1[j] *= lam;
    f.p2[j] *= lam;
  }
  return true;
}

} // namespace gs_detail

/// Projected fixed-point descent from a Gaussian seed.
inline GroundState solve_gradient_flow(const Params &p, const SolverConfig &cfg)
{
  using namespace gs_detail;
  cfg.validate();
  check_params(p);
  const GridLD g(cfg.r_max, cfg.n, p.N, cfg.boundary);
  const Masses m = masses(p);
  const Stencil st = minus_laplacian(g);
  Profile f{std::vector<LD>(g.n()), std::vector<LD>(g.n())};
  for (std::size_t j = 0; j < g.n(); ++j) {
    const LD e = std::exp(-g.r(j) * g.r(j));
    f.p1[j] = LD(cfg.seed_amplitudes[0]) * e;
    f.p2[j] = LD(cfg.seed_amplitudes[1]) * e;
  }
  // start on the Nehari set so the first constraint projection stays in range
  project_nehari(g, m, f);
  const LD tau = cfg.flow_step_size;
  LD res = sup_norm(residual(g, m, f));
  int it = 0;
  for (; it < cfg.max_flow_steps; ++it) {
    std::vector<LD> r1(g.n()), r2(g.n());
    for (std::size_t j = 0; j < g.n(); ++j) {
      r1[j] = f.p1[j] * f.p2[j];
      r2[j] = f.p1[j] * f.p1[j];
    }
    const auto y1 = solve_shifted(st, m.m1sq, r1), y2 = solve_shifted(st, m.m2sq, r2);
    for (std::size_t j = 0; j < g.n(); ++j) {
      f.p1[j] = (1 - tau) * f.p1[j] + tau * y1[j];
      f.p2[j] = (1 - tau) * f.p2[j] + tau * y2[j];
    }
    const bool ok = it < cfg.descent_steps ? project_constraint(g, p, m, f) : project_nehari(g, m, f);
    if (!ok || !(std::abs(f.p1[0]) > LD(1e-10)))
      throw Error(ErrorKind::trivial_collapse, "gradient flow collapsed to zero");
    res = sup_norm(residual(g, m, f));
    if (!std::isfinite(double(res)))
      throw Error(ErrorKind::non_convergence, "gradient flow produced non-finite values");
    if (it >= cfg.descent_steps && res < LD(cfg.tol_residual) / 2)
      break;
  }
  if (!(res < LD(cfg.tol_residual)))
    throw Error(ErrorKind::non_convergence, "gradient flow did not converge within max_flow_steps");
  return finish(p, cfg, Method::gradient_flow, g, std::move(f), it + 1);
}

inline GroundState solve_ground_state(const Params &p, const SolverConfig &cfg, Method method)
{
  return method == Method::shooting ? solve_shooting(p, cfg) : solve_gradient_flow(p, cfg);
}

/// (d1, d0) with the cross-check d0 = M_omega / (alpha + 2) for N in {2, 3}.
struct DValues {
  double d1 = 0, d0 = 0;
  double d0_from_mass = 0;
  double cross_check = 0; // relative mismatch (N in {2,3})
  double alpha1 = 0;      // sqrt(2) d1^{1/2} (N = 4)
};

inline DValues d_omega(const GroundState &g, double tol = 1e-6)
{
  DValues d;
  d.d1 = g.d1;
  d.d0 = g.d0;
  if (g.params.N <= 3) {
    d.d0_from_mass = g.extrapolated.M_omega / (g.params.alpha() + 2);
    d.cross_check = std::abs(d.d0 - d.d0_from_mass) / std::abs(d.d0);
    if (d.cross_check > tol)
      throw Error(ErrorKind::certification, "d0 = M_omega/(alpha+2) cross-check failed");
  }
  if (g.params.N == 4)
    d.alpha1 = std::sqrt(2.0) * std::sqrt(d.d1);
  return d;
}

/// Re-certify a stored profile on its own grid.
inline GroundState certify(const FieldPair &u, const Params &p, SolverConfig cfg = {})
{
  using namespace gs_detail;
  u.check();
  const RadialGrid &gd = *u.grid;
  const GridLD g(gd.r_max(), gd.n(), gd.dim(), gd.boundary());
  Profile f{std::vector<LD>(g.n()), std::vector<LD>(g.n())};
  for (std::size_t j = 0; j < g.n(); ++j) {
    f.p1[j] = u.u1[j].real();
    f.p2[j] = u.u2[j].real();
  }
  return finish(p, cfg, Method::shooting, g, std::move(f), 0);
}

/// Keep the certified state with the smaller action when two solves disagree.
inline const GroundState &select_ground_state(const GroundState &a, const GroundState &b)
{
  if (a.positive != b.positive)
    return a.positive ? a : b;
  return a.d1 <= b.d1 ? a : b;
}

inline void save_ground_state(const fs::path &path, const GroundState &g) { save_profile(path, g.profile, g.to_json()); }

struct StoredGroundState {
  FieldPair profile;
  Params params;
  nlohmann::json meta;
};

inline StoredGroundState load_ground_state(const fs::path &path)
{
  StoredGroundState s{load_profile(path), Params(3, 2, 0), load_sidecar(path)};
  const auto &p = s.meta.at("params");
  s.params = Params(p.at("N").get<int>(), p.at("kappa").get<double>(), p.at("omega").get<double>());
  return s;
}

} // namespace kglab


#endif // KGLAB_GROUND_STATE_HPP
