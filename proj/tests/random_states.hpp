#ifndef KGLAB_TESTS_RANDOM_STATES_HPP
#define KGLAB_TESTS_RANDOM_STATES_HPP

#include <random>

#include <kglab/field.hpp>

namespace kglab::testing {

/// Sum of a few complex Gaussian bumps with random centres and widths.
inline cvec random_profile(const RadialGrid &g, std::mt19937_64 &rng, double amp = 2.0)
{
  std::uniform_real_distribution<double> U(0.0, 1.0);
  cvec f(g.n());
  const int bumps = 1 + int(3 * U(rng));
  for (int b = 0; b < bumps; ++b) {
    const cplx a = amp * cplx(2 * U(rng) - 1, 2 * U(rng) - 1);
    const double c = U(rng) * g.r_max() / 3, w = 0.5 + 1.5 * U(rng);
    for (std::size_t j = 0; j < g.n(); ++j) {
      const double x = (g.r(j) - c) / w, y = (g.r(j) + c) / w;
      f[j] += a * (std::exp(-x * x) + std::exp(-y * y));
    }
  }
  return f;
}

inline FieldPair random_pair(std::shared_ptr<const RadialGrid> g, std::uint64_t seed, double amp = 2.0)
{
  std::mt19937_64 rng(seed);
  FieldPair u(g);
  u.u1 = random_profile(*g, rng, amp);
  u.u2 = random_profile(*g, rng, amp);
  return u;
}

inline PhaseState random_state(std::shared_ptr<const RadialGrid> g, std::uint64_t seed, double amp = 2.0)
{
  std::mt19937_64 rng(seed);
  PhaseState s(g);
  s.u.u1 = random_profile(*g, rng, amp);
  s.u.u2 = random_profile(*g, rng, amp);
  s.v.u1 = random_profile(*g, rng, amp);
  s.v.u2 = random_profile(*g, rng, amp);
  return s;
}

} // namespace kglab::testing

#endif // KGLAB_TESTS_RANDOM_STATES_HPP
