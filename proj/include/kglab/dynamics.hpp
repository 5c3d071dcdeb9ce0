#ifndef KGLAB_DYNAMICS_HPP
#define KGLAB_DYNAMICS_HPP

#include "field.hpp"

namespace kglab {

/// F(u) = (conj(u1) u2, u1^2)
inline void nonlinearity(const FieldPair &u, cvec &f1, cvec &f2)
{
  const std::size_t n = u.n();
  f1.resize(n);
  f2.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    f1[j] = std::conj(u.u1[j]) * u.u2[j];
    f2[j] = u.u1[j] * u.u1[j];
  }
}

/// Second time derivative Delta u - m^2 u + F(u) of the semi-discrete system (m1 = 1, m2 = kappa).
inline void acceleration(const FieldPair &u, const Params &p, FieldPair &out)
{
  u.check();
  const RadialGrid &g = *u.grid;
  if (out.grid != u.grid)
    out = FieldPair(u.grid);
  g.laplacian_into(u.u1, out.u1);
  g.laplacian_into(u.u2, out.u2);
  const double k2 = p.kappa * p.kappa;
  for (std::size_t j = 0; j < g.n(); ++j) {
    out.u1[j] += -u.u1[j] + std::conj(u.u1[j]) * u.u2[j];
    out.u2[j] += -k2 * u.u2[j] + u.u1[j] * u.u1[j];
  }
}

inline FieldPair acceleration(const FieldPair &u, const Params &p)
{
  FieldPair out(u.grid);
  acceleration(u, p, out);
  return out;
}

} // namespace kglab

#endif // KGLAB_DYNAMICS_HPP
