#ifndef KGLAB_GRID_HPP
#define KGLAB_GRID_HPP

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "params.hpp"

namespace kglab {

enum class Boundary { dirichlet, neumann };

inline const char *to_string(Boundary b) { return b == Boundary::dirichlet ? "dirichlet" : "neumann"; }

enum class Parity { even, none };

/// |S^{N-1}|, the area of the unit sphere in R^N.
template <typename Real = double>
Real sphere_area(int N)
{
  const Real pi = std::numbers::pi_v<Real>;
  return Real(2) * std::pow(pi, Real(N) / 2) / std::tgamma(Real(N) / 2);
}

/// Cell-centred radial grid r_j = (j + 1/2) dr on (0, r_max).
template <typename Real>
class RadialGridT {
public:
  RadialGridT(Real r_max, std::size_t n, int N, Boundary bc = Boundary::dirichlet, Real sponge_width = 0)
      : r_max_(r_max), n_(n), N_(N), bc_(bc), sponge_(sponge_width)
  {
    if (!(r_max > 0))
      throw Error(ErrorKind::invalid_argument, "r_max must be positive");
    if (n < 3)
      throw Error(ErrorKind::invalid_argument, "grid needs at least 3 cells");
    if (N < 2 || N > 5)
      throw Error(ErrorKind::invalid_argument, "dimension N must be in 2..5");
    if (sponge_width < 0 || sponge_width >= r_max)
      throw Error(ErrorKind::invalid_argument, "sponge width must lie in [0, r_max)");
    dr_ = r_max / Real(n);
    area_ = sphere_area<Real>(N);
    r_.resize(n);
    w_.resize(n);
    s_.resize(n);
    a_.resize(n + 1);
    for (std::size_t j = 0; j < n; ++j) {
      r_[j] = (Real(j) + Real(0.5)) * dr_;
      // cell volume over the sphere factor: ((j+1)^N - j^N) dr^N / N
      w_[j] = (std::pow(Real(j + 1), Real(N)) - std::pow(Real(j), Real(N))) * std::pow(dr_, Real(N)) / Real(N);
      s_[j] = Real(1) / (w_[j] * dr_);
    }
    for (std::size_t k = 0; k <= n; ++k)
      a_[k] = std::pow(Real(k) * dr_, Real(N - 1));
  }

  Real r_max() const { return r_max_; }
  std::size_t n() const { return n_; }
  int dim() const { return N_; }
  Real dr() const { return dr_; }
  Boundary boundary() const { return bc_; }
  Real sponge_width() const { return sponge_; }
  Real area() const { return area_; }
  Real r(std::size_t j) const { return r_[j]; }
  const std::vector<Real> &nodes() const { return r_; }
  /// cell weight int_{cell} r^{N-1} dr (equal to r_j^{N-1} dr up to O(dr^2)) without the sphere factor
  const std::vector<Real> &weights() const { return w_; }
  /// face factor (k dr)^{N-1}, k = 0..n
  const std::vector<Real> &faces() const { return a_; }
  /// 1 / (w_j dr), the node scaling of laplacian()
  const std::vector<Real> &lap_scale() const { return s_; }

  bool same_as(const RadialGridT &o) const
  {
    return n_ == o.n_ && N_ == o.N_ && r_max_ == o.r_max_ && bc_ == o.bc_;
  }

  /// ghost value f_n beyond the outer face
  template <typename T>
  T ghost(const T &last) const
  {
    return bc_ == Boundary::dirichlet ? -last : last;
  }

  /// Integral over the ball of radius r_max (sphere factor included).
  template <typename T>
  T integrate(const std::vector<T> &f) const
  {
    check(f.size());
    T s{};
    for (std::size_t j = 0; j < n_; ++j)
      s += f[j] * w_[j];
    return s * area_;
  }

  /// Flux-form (1/r^{N-1}) d/dr (r^{N-1} d/dr f); zero flux at r = 0.
  template <typename T>
  std::vector<T> laplacian(const std::vector<T> &f) const
  {
    std::vector<T> out(n_);
    laplacian_into(f, out);
    return out;
  }

  template <typename T>
  void laplacian_into(const std::vector<T> &f, std::vector<T> &out) const
  {
    check(f.size());
    out.resize(n_);
    for (std::size_t j = 0; j < n_; ++j) {
      const T right = (j + 1 < n_ ? f[j + 1] : ghost(f[n_ - 1])) - f[j];
      const T left = j > 0 ? f[j] - f[j - 1] : T{};
      out[j] = (right * a_[j + 1] - left * a_[j]) * s_[j];
    }
  }

  /// First radial derivative: central inside, second order one-sided at the outer end.
  template <typename T>
  std::vector<T> d_dr(const std::vector<T> &f, Parity parity = Parity::even) const
  {
    check(f.size());
    std::vector<T> out(n_);
    const Real h2 = Real(2) * dr_;
    for (std::size_t j = 1; j + 1 < n_; ++j)
      out[j] = (f[j + 1] - f[j - 1]) / h2;
    if (parity == Parity::even)
      out[0] = (f[1] - f[0]) / h2;
    else
      out[0] = (f[0] * Real(-3) + f[1] * Real(4) - f[2]) / h2;
    out[n_ - 1] = (f[n_ - 1] * Real(3) - f[n_ - 2] * Real(4) + f[n_ - 3]) / h2;
    return out;
  }

  /// Discrete Dirichlet energy int |f'|^2, the exact adjoint partner of laplacian().
  template <typename T>
  Real dirichlet_energy(const std::vector<T> &f) const
  {
    check(f.size());
    Real s = 0;
    for (std::size_t k = 1; k < n_; ++k)
      s += a_[k] * std::norm(f[k] - f[k - 1]);
    if (bc_ == Boundary::dirichlet)
      s += Real(2) * a_[n_] * std::norm(f[n_ - 1]);
    return s / dr_ * area_;
  }

  /// Outward flux |S| r_max^{N-1} f'(r_max) seen by laplacian().
  template <typename T>
  T boundary_flux(const std::vector<T> &f) const
  {
    check(f.size());
    return (ghost(f[n_ - 1]) - f[n_ - 1]) / dr_ * a_[n_] * area_;
  }

  void check(std::size_t len) const
  {
    if (len != n_)
      throw Error(ErrorKind::grid_mismatch, "profile length does not match grid");
  }

private:
  Real r_max_;
  std::size_t n_;
  int N_;
  Boundary bc_;
  Real sponge_;
  Real dr_;
  Real area_;
  std::vector<Real> r_, w_, a_, s_;
};

using RadialGrid = RadialGridT<double>;

} // namespace kglab

#endif // KGLAB_GRID_HPP
