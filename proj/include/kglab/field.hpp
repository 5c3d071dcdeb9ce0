#ifndef KGLAB_FIELD_HPP
#define KGLAB_FIELD_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <vector>

#include "grid.hpp"

namespace kglab {

using cplx = std::complex<double>;
using cvec = std::vector<cplx>;

/// The unknown pair (u1, u2) sampled on a shared radial grid.
struct FieldPair {
  std::shared_ptr<const RadialGrid> grid;
  cvec u1, u2;

  FieldPair() = default;
  explicit FieldPair(std::shared_ptr<const RadialGrid> g)
      : grid(std::move(g)), u1(grid->n()), u2(grid->n())
  {
  }
  FieldPair(std::shared_ptr<const RadialGrid> g, cvec a, cvec b)
      : grid(std::move(g)), u1(std::move(a)), u2(std::move(b))
  {
    check();
  }

  std::size_t n() const { return grid->n(); }

  void check() const
  {
    if (!grid)
      throw Error(ErrorKind::invalid_argument, "field pair has no grid");
    if (u1.size() != grid->n() || u2.size() != grid->n())
      throw Error(ErrorKind::grid_mismatch, "component length does not match grid");
  }

  bool finite() const
  {
    for (std::size_t j = 0; j < u1.size(); ++j)
      if (!std::isfinite(u1[j].real()) || !std::isfinite(u1[j].imag()) || !std::isfinite(u2[j].real()) ||
          !std::isfinite(u2[j].imag()))
        return false;
    return true;
  }
};

/// (u, du/dt)
struct PhaseState {
  FieldPair u, v;

  PhaseState() = default;
  explicit PhaseState(std::shared_ptr<const RadialGrid> g) : u(g), v(g) {}
  PhaseState(FieldPair a, FieldPair b) : u(std::move(a)), v(std::move(b)) { check(); }

  void check() const
  {
    u.check();
    v.check();
    if (u.grid != v.grid && !u.grid->same_as(*v.grid))
      throw Error(ErrorKind::grid_mismatch, "fields and velocity live on different grids");
  }
  const RadialGrid &grid() const { return *u.grid; }
  bool finite() const { return u.finite() && v.finite(); }
};

inline void require_same_grid(const FieldPair &a, const FieldPair &b)
{
  a.check();
  b.check();
  if (a.grid != b.grid && !a.grid->same_as(*b.grid))
    throw Error(ErrorKind::grid_mismatch, "field pairs live on different grids");
}

/// Natural cubic spline through (x_i, y_i); x strictly increasing.
template <typename Real>
class CubicSpline {
public:
  CubicSpline(std::vector<Real> x, std::vector<Real> y) : x_(std::move(x)), y_(std::move(y))
  {
    const std::size_t n = x_.size();
    if (n < 3 || y_.size() != n)
      throw Error(ErrorKind::invalid_argument, "spline needs at least 3 matching points");
    m_.assign(n, Real(0));
    std::vector<Real> c(n, Real(0)), d(n, Real(0));
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const Real h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
      const Real diag = Real(2) * (h0 + h1);
      const Real rhs = Real(6) * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
      const Real denom = diag - h0 * c[i - 1];
      c[i] = h1 / denom;
      d[i] = (rhs - h0 * d[i - 1]) / denom;
    }
    for (std::size_t i = n - 2; i >= 1; --i)
      m_[i] = d[i] - c[i] * m_[i + 1];
  }

  Real operator()(Real t) const
  {
    std::size_t lo = 0, hi = x_.size() - 1;
    if (t <= x_[lo])
      return y_[lo];
    if (t >= x_[hi])
      return y_[hi];
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      (x_[mid] > t ? hi : lo) = mid;
    }
    const Real h = x_[hi] - x_[lo];
    const Real A = (x_[hi] - t) / h, B = (t - x_[lo]) / h;
    return A * y_[lo] + B * y_[hi] + ((A * A * A - A) * m_[lo] + (B * B * B - B) * m_[hi]) * h * h / Real(6);
  }

private:
  std::vector<Real> x_, y_, m_;
};

/// Spline of a radial profile, mirrored evenly across r = 0 and pinned to 0 at r_max.
template <typename Real>
CubicSpline<Real> radial_spline(const RadialGridT<Real> &g, const std::vector<Real> &f)
{
  g.check(f.size());
  const std::size_t mirror = std::min<std::size_t>(4, g.n());
  std::vector<Real> x, y;
  x.reserve(g.n() + mirror + 1);
  y.reserve(g.n() + mirror + 1);
  for (std::size_t k = mirror; k-- > 0;) {
    x.push_back(-g.r(k));
    y.push_back(f[k]);
  }
  for (std::size_t j = 0; j < g.n(); ++j) {
    x.push_back(g.r(j));
    y.push_back(f[j]);
  }
  if (g.boundary() == Boundary::dirichlet) {
    x.push_back(g.r_max());
    y.push_back(Real(0));
  }
  return CubicSpline<Real>(std::move(x), std::move(y));
}

/// amp * f(lam * r) resampled on the same grid; zero beyond r_max.
template <typename Real>
std::vector<Real> dilate_profile(const RadialGridT<Real> &g, const std::vector<Real> &f, Real amp, Real lam)
{
  const auto s = radial_spline(g, f);
  std::vector<Real> out(g.n());
  for (std::size_t j = 0; j < g.n(); ++j) {
    const Real t = lam * g.r(j);
    out[j] = t >= g.r_max() ? Real(0) : amp * s(t);
  }
  return out;
}

inline cvec dilate_profile(const RadialGrid &g, const cvec &f, double amp, double lam)
{
  std::vector<double> re(f.size()), im(f.size());
  for (std::size_t j = 0; j < f.size(); ++j) {
    re[j] = f[j].real();
    im[j] = f[j].imag();
  }
  const auto a = dilate_profile<double>(g, re, amp, lam);
  const auto b = dilate_profile<double>(g, im, amp, lam);
  cvec out(f.size());
  for (std::size_t j = 0; j < f.size(); ++j)
    out[j] = {a[j], b[j]};
  return out;
}

/// lam * u
inline FieldPair scale_amplitude(const FieldPair &u, double lam)
{
  FieldPair out = u;
  for (auto &z : out.u1)
    z *= lam;
  for (auto &z : out.u2)
    z *= lam;
  return out;
}

/// lam^a u(lam .), the one-parameter scalings behind K (a = N/2) and K0 (a = 2)
inline FieldPair scale_dilation(const FieldPair &u, double a, double lam)
{
  FieldPair out = u;
  const double amp = std::pow(lam, a);
  out.u1 = dilate_profile(*u.grid, u.u1, amp, lam);
  out.u2 = dilate_profile(*u.grid, u.u2, amp, lam);
  return out;
}

/// (e^{i theta} u1, e^{2 i theta} u2)
inline FieldPair gauge_rotate(const FieldPair &u, double theta)
{
  FieldPair out = u;
  const cplx p1 = std::polar(1.0, theta), p2 = std::polar(1.0, 2.0 * theta);
  for (auto &z : out.u1)
    z *= p1;
  for (auto &z : out.u2)
    z *= p2;
  return out;
}

inline PhaseState gauge_rotate(const PhaseState &s, double theta)
{
  return PhaseState(gauge_rotate(s.u, theta), gauge_rotate(s.v, theta));
}

} // namespace kglab

#endif // KGLAB_FIELD_HPP
