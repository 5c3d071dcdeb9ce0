#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <numbers>

#include <kglab/grid.hpp>

using namespace kglab;
using Catch::Approx;

namespace {

// composite Simpson rule, independent of the midpoint quadrature under test
double simpson(const std::function<double(double)> &f, double a, double b, int m = 20000)
{
  const double h = (b - a) / m;
  double s = f(a) + f(b);
  for (int i = 1; i < m; ++i)
    s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

std::vector<double> sample(const RadialGrid &g, const std::function<double(double)> &f)
{
  std::vector<double> v(g.n());
  for (std::size_t j = 0; j < g.n(); ++j)
    v[j] = f(g.r(j));
  return v;
}

} // namespace

TEST_CASE("grid nodes are staggered and positive")
{
  RadialGrid g(32.0, 512, 3);
  REQUIRE(g.dr() * g.n() == Approx(32.0));
  REQUIRE(g.r(0) == Approx(0.5 * g.dr()));
  for (std::size_t j = 1; j < g.n(); ++j)
    REQUIRE(g.r(j) > g.r(j - 1));
  REQUIRE_THROWS_AS(RadialGrid(32.0, 2, 3), Error);
  REQUIRE_THROWS_AS(RadialGrid(32.0, 64, 6), Error);
}

TEST_CASE("sphere areas")
{
  REQUIRE(sphere_area(2) == Approx(2 * std::numbers::pi));
  REQUIRE(sphere_area(3) == Approx(4 * std::numbers::pi));
  REQUIRE(sphere_area(4) == Approx(2 * std::numbers::pi * std::numbers::pi));
  REQUIRE(sphere_area(5) == Approx(8 * std::numbers::pi * std::numbers::pi / 3));
}

TEST_CASE("integrate: ball volume, 2-D Gaussian, zero")
{
  RadialGrid g(4.0, 512, 3);
  const double vol = 4.0 / 3.0 * std::numbers::pi * 64.0;
  const double got = g.integrate(std::vector<double>(g.n(), 1.0));
  REQUIRE(std::abs(got - vol) / vol < 2.0 * g.dr() * g.dr());

  RadialGrid g2(8.0, 512, 2);
  const double oracle = 2 * std::numbers::pi * simpson([](double r) { return std::exp(-r * r) * r; }, 0.0, 8.0);
  REQUIRE(oracle == Approx(std::numbers::pi * (1 - std::exp(-64.0))).epsilon(1e-12));
  REQUIRE(g2.integrate(sample(g2, [](double r) { return std::exp(-r * r); })) == Approx(oracle).epsilon(1e-4));
  REQUIRE(g2.integrate(std::vector<double>(g2.n(), 0.0)) == 0.0);
  REQUIRE_THROWS_AS(g2.integrate(std::vector<double>(10, 1.0)), Error);
}

TEST_CASE("d_dr exactness")
{
  RadialGrid g(8.0, 256, 3);
  const auto d1 = g.d_dr(sample(g, [](double r) { return r; }), Parity::none);
  for (std::size_t j = 0; j < g.n(); ++j)
    REQUIRE(d1[j] == Approx(1.0).epsilon(1e-12));
  const auto d2 = g.d_dr(sample(g, [](double r) { return r * r; }), Parity::none);
  for (std::size_t j = 0; j < g.n(); ++j)
    REQUIRE(std::abs(d2[j] - 2 * g.r(j)) < 1e-10);
  const auto d0 = g.d_dr(std::vector<double>(g.n(), 3.0));
  for (double x : d0)
    REQUIRE(x == 0.0);
  // even reflection at the origin: derivative of an even function is small at the first node
  const auto de = g.d_dr(sample(g, [](double r) { return std::cos(r); }));
  REQUIRE(std::abs(de[0] + std::sin(g.r(0))) < g.dr());
}

TEST_CASE("laplacian on polynomials, constants and a Gaussian")
{
  RadialGrid g(4.0, 400, 3, Boundary::neumann);
  const auto l = g.laplacian(sample(g, [](double r) { return r * r; }));
  for (std::size_t j = 0; j + 1 < g.n(); ++j)
    REQUIRE(l[j] == Approx(6.0).epsilon(1e-3));
  const auto c = g.laplacian(std::vector<double>(g.n(), 2.0));
  for (double x : c)
    REQUIRE(std::abs(x) < 1e-12);

  auto gauss_err = [](std::size_t n) {
    RadialGrid h(8.0, n, 2);
    const auto lap = h.laplacian(sample(h, [](double r) { return std::exp(-r * r); }));
    double e = 0;
    for (std::size_t j = 0; j < h.n(); ++j) {
      const double r = h.r(j);
      e = std::max(e, std::abs(lap[j] - 4 * (r * r - 1) * std::exp(-r * r)));
    }
    return e;
  };
  const double e1 = gauss_err(512), e2 = gauss_err(1024);
  REQUIRE(e1 < 1e-2);
  REQUIRE(e1 / e2 == Approx(4.0).margin(0.4));
}

TEST_CASE("discrete integration by parts is exact")
{
  for (int N = 2; N <= 5; ++N)
    for (Boundary bc : {Boundary::dirichlet, Boundary::neumann}) {
      RadialGrid g(10.0, 300, N, bc);
      std::vector<std::complex<double>> f(g.n());
      for (std::size_t j = 0; j < g.n(); ++j) {
        const double r = g.r(j);
        f[j] = {std::exp(-0.3 * r * r) * (1 + r), std::sin(r) * std::exp(-0.1 * r)};
      }
      const auto lap = g.laplacian(f);
      std::vector<std::complex<double>> prod(g.n());
      for (std::size_t j = 0; j < g.n(); ++j)
        prod[j] = std::conj(f[j]) * lap[j];
      const double L = g.dirichlet_energy(f);
      REQUIRE(-g.integrate(prod).real() == Approx(L).epsilon(1e-12));
      REQUIRE(std::abs(g.integrate(prod).imag()) < 1e-12 * L);
      const auto total = g.integrate(lap);
      const auto flux = g.boundary_flux(f);
      REQUIRE(std::abs(total - flux) < 1e-10 * (1 + std::abs(flux)));
    }
}
