#ifndef KGLAB_WEIGHTS_HPP
#define KGLAB_WEIGHTS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "dynamics.hpp"
#include "functionals.hpp"

namespace kglab {

/// Quintic smoothstep s^3 (6 s^2 - 15 s + 10) and its first two derivatives.
inline double smoothstep(double s) { return s * s * s * (s * (6.0 * s - 15.0) + 10.0); }
inline double smoothstep_d1(double s) { return 30.0 * s * s * (s - 1.0) * (s - 1.0); }
inline double smoothstep_d2(double s) { return 60.0 * s * (s - 1.0) * (2.0 * s - 1.0); }

/// The base bump: N on [0,1], N S(2 - r) on [1,2], 0 beyond.
struct BaseBump {
  int N = 3;

  double operator()(double r) const
  {
    if (r <= 1.0)
      return N;
    if (r >= 2.0)
      return 0.0;
    return N * smoothstep(2.0 - r);
  }
  double d1(double r) const { return r <= 1.0 || r >= 2.0 ? 0.0 : -N * smoothstep_d1(2.0 - r); }
  double d2(double r) const { return r <= 1.0 || r >= 2.0 ? 0.0 : N * smoothstep_d2(2.0 - r); }
};

inline BaseBump build_base_bump(int N) { return BaseBump{N}; }

/// Weight pair (Phi_rho, Psi_rho) sampled on a grid.
struct WeightProfile {
  double rho = 0;
  int N = 3;
  std::shared_ptr<const RadialGrid> grid;
  std::vector<double> phi, psi, psi_prime;
  std::vector<double> dphi, d2phi, lap_phi;
  std::vector<double> psi_prime_face; // Psi' at the cell faces k dr

  /// max_j |Psi' + (N-1) Psi / r - Phi|
  double divergence_defect() const
  {
    double d = 0;
    for (std::size_t j = 0; j < phi.size(); ++j)
      d = std::max(d, std::abs(psi_prime[j] + (N - 1) * psi[j] / grid->r(j) - phi[j]));
    return d;
  }

  void write_csv(std::ostream &os) const
  {
    os << "r,Phi,Psi,Psi_prime\n";
    char buf[128];
    for (std::size_t j = 0; j < phi.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", grid->r(j), phi[j], psi[j], psi_prime[j]);
      os << buf;
    }
  }
};

namespace detail {

/// int_rho^b s^{N-1} Phi_rho(s) ds with 5-point Gauss-Legendre, exact for the polynomial integrand.
inline double transition_moment(const BaseBump &bump, double rho, double b)
{
  static constexpr std::array<double, 5> x{0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                                           0.9061798459386640};
  static constexpr std::array<double, 5> w{0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                           0.2369268850561891, 0.2369268850561891};
  if (b <= rho)
    return 0.0;
  const double mid = 0.5 * (b + rho), half = 0.5 * (b - rho);
  double s = 0;
  for (int i = 0; i < 5; ++i) {
    const double t = mid + half * x[i];
    s += w[i] * std::pow(t, bump.N - 1) * bump(t / rho);
  }
  return s * half;
}

inline double psi_at(const BaseBump &bump, double rho, double r)
{
  if (r <= rho)
    return r;
  const double m = std::pow(rho, bump.N) + transition_moment(bump, rho, std::min(r, 2.0 * rho));
  return m / std::pow(r, bump.N - 1);
}

} // namespace detail

inline WeightProfile build_weights(double rho, std::shared_ptr<const RadialGrid> grid)
{
  const RadialGrid &g = *grid;
  if (!(rho > 0.0) || rho > 0.5 * g.r_max())
    throw Error(ErrorKind::invalid_argument, "rho must lie in (0, r_max/2]");
  const BaseBump bump{g.dim()};
  const int N = g.dim();
  WeightProfile w;
  w.rho = rho;
  w.N = N;
  w.grid = grid;
  const std::size_t n = g.n();
  w.phi.resize(n);
  w.psi.resize(n);
  w.psi_prime.resize(n);
  w.dphi.resize(n);
  w.d2phi.resize(n);
  w.lap_phi.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double r = g.r(j), s = r / rho;
    w.phi[j] = bump(s);
    w.dphi[j] = bump.d1(s) / rho;
    w.d2phi[j] = bump.d2(s) / (rho * rho);
    w.lap_phi[j] = w.d2phi[j] + (N - 1) * w.dphi[j] / r;
    w.psi[j] = detail::psi_at(bump, rho, r);
    w.psi_prime[j] = w.phi[j] - (N - 1) * w.psi[j] / r;
  }
  w.psi_prime_face.resize(n + 1);
  w.psi_prime_face[0] = 1.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double r = k * g.dr();
    w.psi_prime_face[k] = bump(r / rho) - (N - 1) * detail::psi_at(bump, rho, r) / r;
  }
  return w;
}

/// sup_r |Phi_rho^{(k)}| rho^k for k = 0, 1, 2 sampled on the grid
inline std::array<double, 3> derivative_constants(const WeightProfile &w)
{
  std::array<double, 3> c{0, 0, 0};
  for (std::size_t j = 0; j < w.phi.size(); ++j) {
    c[0] = std::max(c[0], std::abs(w.phi[j]));
    c[1] = std::max(c[1], std::abs(w.dphi[j]) * w.rho);
    c[2] = std::max(c[2], std::abs(w.d2phi[j]) * w.rho * w.rho);
  }
  return c;
}

namespace detail {

inline void check_weight_grid(const PhaseState &s, const WeightProfile &w)
{
  s.check();
  if (!w.grid || (s.u.grid != w.grid && !s.u.grid->same_as(*w.grid)))
    throw Error(ErrorKind::grid_mismatch, "weight profile and state live on different grids");
}

/// sum_j (1/j) Re (2 Psi d_r a_j + (Phi + shift) a_j, b_j)
inline double virial_pairing(const FieldPair &a, const FieldPair &b, const WeightProfile &w, double shift)
{
  const RadialGrid &g = *a.grid;
  const auto d1 = g.d_dr(a.u1), d2 = g.d_dr(a.u2);
  const auto &wt = g.weights();
  double s = 0;
  for (std::size_t j = 0; j < g.n(); ++j) {
    const cplx t1 = 2.0 * w.psi[j] * d1[j] + (w.phi[j] + shift) * a.u1[j];
    const cplx t2 = 2.0 * w.psi[j] * d2[j] + (w.phi[j] + shift) * a.u2[j];
    s += ((t1 * std::conj(b.u1[j])).real() + 0.5 * (t2 * std::conj(b.u2[j])).real()) * wt[j];
  }
  return s * g.area();
}

} // namespace detail

inline double virial_i1(const PhaseState &s, const WeightProfile &w)
{
  detail::check_weight_grid(s, w);
  return detail::virial_pairing(s.u, s.v, w, 0.0);
}

inline double virial_i2(const PhaseState &s, const WeightProfile &w, const Params &p)
{
  detail::check_weight_grid(s, w);
  return detail::virial_pairing(s.u, s.v, w, double(p.alpha()));
}

/// Instantaneous dI/dt of the semi-discrete flow, using the acceleration in place of d^2u/dt^2.
inline double virial_rate(const PhaseState &s, const WeightProfile &w, double shift, const FieldPair &accel)
{
  detail::check_weight_grid(s, w);
  return detail::virial_pairing(s.v, s.v, w, shift) + detail::virial_pairing(s.u, accel, w, shift);
}

inline double virial_rate(const PhaseState &s, const WeightProfile &w, double shift, const Params &p)
{
  return virial_rate(s, w, shift, acceleration(s.u, p));
}

/// Exterior interaction terms outside r = rho.
struct ExteriorTerms {
  double plain = 0;    // 1/2 Re int_{r >= rho} u1^2 conj(u2)
  double weighted = 0; // 1/2 Re int_{r >= rho} (N - Phi_rho) u1^2 conj(u2)
};

inline ExteriorTerms exterior_interaction(const FieldPair &u, const WeightProfile &w)
{
  const RadialGrid &g = *u.grid;
  const auto &wt = g.weights();
  ExteriorTerms e;
  for (std::size_t j = 0; j < g.n(); ++j) {
    if (g.r(j) < w.rho)
      continue;
    const double d = (u.u1[j] * u.u1[j] * std::conj(u.u2[j])).real() * wt[j];
    e.plain += d;
    e.weighted += (w.N - w.phi[j]) * d;
  }
  e.plain *= 0.5 * g.area();
  e.weighted *= 0.5 * g.area();
  return e;
}

/// Remainder of the blow-up argument in both mass-tail normalizations.
struct Remainder {
  double exterior = 0;   // 1/2 Re int_{r >= rho} u1^2 conj(u2)
  double tail_rho1 = 0;  // (C0 / rho) M(u)
  double tail_rho2 = 0;  // (C0 / rho^2) M(u)
  double value() const { return exterior + tail_rho1; }
  double value_rho2() const { return exterior + tail_rho2; }
};

inline Remainder remainder_r_rho(const PhaseState &s, const WeightProfile &w, double C0)
{
  detail::check_weight_grid(s, w);
  Remainder r;
  r.exterior = exterior_interaction(s.u, w).plain;
  const double M = mass(s.u);
  r.tail_rho1 = C0 / w.rho * M;
  r.tail_rho2 = C0 / (w.rho * w.rho) * M;
  return r;
}

/// Both localized virial inequalities at one state.
struct VirialInequality {
  double rate1 = 0, rate2 = 0; // -dI1/dt, -dI2/dt
  double K = 0, H = 0, M = 0;
  ExteriorTerms exterior;
  /// smallest C0 making -dI/dt <= (K or H) + weighted exterior + C0 M / rho^2 hold
  double needed_c0_1 = 0, needed_c0_2 = 0;
  double needed_c0() const { return std::max(needed_c0_1, needed_c0_2); }
  double margin1(double C0, double rho) const { return K + exterior.weighted + C0 * M / (rho * rho) - rate1; }
  double margin2(double C0, double rho) const { return H + exterior.weighted + C0 * M / (rho * rho) - rate2; }
};

inline VirialInequality virial_inequality(const PhaseState &s, const WeightProfile &w, const Params &p)
{
  detail::check_weight_grid(s, w);
  const FieldPair acc = acceleration(s.u, p);
  VirialInequality v;
  v.rate1 = -virial_rate(s, w, 0.0, acc);
  v.rate2 = -virial_rate(s, w, double(p.alpha()), acc);
  const auto S = state_integrals(s, p.omega);
  v.K = nehari_k(S.u, p);
  v.H = modified_h_direct(S, p);
  v.M = S.u.n1 + 0.5 * S.u.n2;
  v.exterior = exterior_interaction(s.u, w);
  const double r2 = w.rho * w.rho;
  if (v.M > 0) {
    v.needed_c0_1 = (v.rate1 - v.K - v.exterior.weighted) * r2 / v.M;
    v.needed_c0_2 = (v.rate2 - v.H - v.exterior.weighted) * r2 / v.M;
  }
  return v;
}

/// rho^2 times the largest value of the quadratic remainder form
///   [-2 int (1 - Psi') |f'|^2 - 1/2 int Delta Phi |f|^2] / int |f|^2
/// over grid functions, found by Sturm-sequence bisection on the symmetric tridiagonal matrix.
inline double remainder_form_bound(const WeightProfile &w)
{
  const RadialGrid &g = *w.grid;
  const std::size_t n = g.n();
  const auto &a = g.faces();
  const auto &wt = g.weights();
  const double dr = g.dr();
  std::vector<double> diag(n, 0.0), off(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) {
    const double c = 2.0 * (1.0 - w.psi_prime_face[k]) * a[k] / dr;
    diag[k - 1] -= c;
    diag[k] -= c;
    off[k] = c;
  }
  if (g.boundary() == Boundary::dirichlet)
    diag[n - 1] -= 2.0 * (1.0 - w.psi_prime_face[n]) * 2.0 * a[n] / dr;
  for (std::size_t j = 0; j < n; ++j)
    diag[j] -= 0.5 * w.lap_phi[j] * wt[j];
  for (std::size_t j = 0; j < n; ++j)
    diag[j] /= wt[j];
  for (std::size_t k = 1; k < n; ++k)
    off[k] /= std::sqrt(wt[k - 1] * wt[k]);

  auto count_above = [&](double x) {
    std::size_t cnt = 0;
    double q = diag[0] - x;
    if (q > 0)
      ++cnt;
    for (std::size_t j = 1; j < n; ++j) {
      const double prev = q == 0.0 ? std::numeric_limits<double>::min() : q;
      q = diag[j] - x - off[j] * off[j] / prev;
      if (q > 0)
        ++cnt;
    }
    return cnt;
  };
  double hi = 0.0, lo = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double rad = (j > 0 ? std::abs(off[j]) : 0.0) + (j + 1 < n ? std::abs(off[j + 1]) : 0.0);
    hi = std::max(hi, diag[j] + rad);
    lo = std::min(lo, diag[j] - rad);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (count_above(mid) > 0 ? lo : hi) = mid;
  }
  return hi * w.rho * w.rho;
}

} // namespace kglab

#endif // KGLAB_WEIGHTS_HPP
