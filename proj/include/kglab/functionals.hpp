#ifndef KGLAB_FUNCTIONALS_HPP
#define KGLAB_FUNCTIONALS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include <json.hpp>

#include "field.hpp"

namespace kglab {

/// Quadratic and cubic integrals of a pair, evaluated in a single pass.
struct PairIntegrals {
  double n1 = 0, n2 = 0; // ||u1||^2, ||u2||^2
  double g1 = 0, g2 = 0; // ||grad u1||^2, ||grad u2||^2
  double P = 0;          // Re int u1^2 conj(u2)
};

inline PairIntegrals pair_integrals(const FieldPair &u)
{
  u.check();
  const RadialGrid &g = *u.grid;
  const auto &w = g.weights();
  PairIntegrals out;
  for (std::size_t j = 0; j < g.n(); ++j) {
    out.n1 += std::norm(u.u1[j]) * w[j];
    out.n2 += std::norm(u.u2[j]) * w[j];
    out.P += (u.u1[j] * u.u1[j] * std::conj(u.u2[j])).real() * w[j];
  }
  out.n1 *= g.area();
  out.n2 *= g.area();
  out.P *= g.area();
  out.g1 = g.dirichlet_energy(u.u1);
  out.g2 = g.dirichlet_energy(u.u2);
  return out;
}

inline double mass(const FieldPair &u)
{
  const auto I = pair_integrals(u);
  return I.n1 + 0.5 * I.n2;
}

inline double momega(const PairIntegrals &I, const Params &p) { return p.m1sq() * I.n1 + 0.5 * p.m2sq() * I.n2; }
inline double momega(const FieldPair &u, const Params &p) { return momega(pair_integrals(u), p); }

inline double gradient_l(const PairIntegrals &I) { return I.g1 + 0.5 * I.g2; }
inline double gradient_l(const FieldPair &u) { return gradient_l(pair_integrals(u)); }

inline double interaction_p(const FieldPair &u) { return pair_integrals(u).P; }

inline double action_j(const PairIntegrals &I, const Params &p)
{
  return 0.5 * gradient_l(I) + 0.5 * momega(I, p) - 0.5 * I.P;
}
inline double action_j(const FieldPair &u, const Params &p) { return action_j(pair_integrals(u), p); }

inline double nehari_k(const PairIntegrals &I, const Params &p) { return 2.0 * gradient_l(I) - 0.5 * p.N * I.P; }
inline double nehari_k(const FieldPair &u, const Params &p) { return nehari_k(pair_integrals(u), p); }

inline double nehari_k0(const PairIntegrals &I, const Params &p)
{
  const double a = p.alpha();
  return a * momega(I, p) + (a + 2.0) * (gradient_l(I) - I.P);
}
inline double nehari_k0(const FieldPair &u, const Params &p) { return nehari_k0(pair_integrals(u), p); }

inline double ratio_i_omega(const FieldPair &u, const Params &p)
{
  const auto I = pair_integrals(u);
  if (!(I.P > 0.0))
    throw Error(ErrorKind::domain, "I_omega needs P(u) > 0");
  return gradient_l(I) * std::sqrt(momega(I, p)) / I.P;
}

/// Integrals of a phase state needed by E, Q, H.
struct StateIntegrals {
  PairIntegrals u;
  double vn1 = 0, vn2 = 0; // ||v1||^2, ||v2||^2
  double q1 = 0, q2 = 0;   // Im int conj(u_j) v_j
  double d1 = 0, d2 = 0;   // ||v1 - i w u1||^2, ||v2 - 2 i w u2||^2
};

inline StateIntegrals state_integrals(const PhaseState &s, double omega)
{
  s.check();
  const RadialGrid &g = s.grid();
  const auto &w = g.weights();
  StateIntegrals out;
  out.u = pair_integrals(s.u);
  const cplx iw(0.0, omega), i2w(0.0, 2.0 * omega);
  for (std::size_t j = 0; j < g.n(); ++j) {
    const cplx a = s.u.u1[j], b = s.u.u2[j], va = s.v.u1[j], vb = s.v.u2[j];
    out.vn1 += std::norm(va) * w[j];
    out.vn2 += std::norm(vb) * w[j];
    out.q1 += (std::conj(a) * va).imag() * w[j];
    out.q2 += (std::conj(b) * vb).imag() * w[j];
    out.d1 += std::norm(va - iw * a) * w[j];
    out.d2 += std::norm(vb - i2w * b) * w[j];
  }
  for (double *x : {&out.vn1, &out.vn2, &out.q1, &out.q2, &out.d1, &out.d2})
    *x *= g.area();
  return out;
}

/// ||u1||^2 + (kappa^2/2) ||u2||^2
inline double mass_term(const PairIntegrals &I, const Params &p) { return I.n1 + 0.5 * p.kappa * p.kappa * I.n2; }

inline double energy(const StateIntegrals &S, const Params &p)
{
  return 0.5 * (S.vn1 + 0.5 * S.vn2) + 0.5 * gradient_l(S.u) + 0.5 * mass_term(S.u, p) - 0.5 * S.u.P;
}
inline double energy(const PhaseState &s, const Params &p) { return energy(state_integrals(s, p.omega), p); }

inline double charge(const StateIntegrals &S) { return S.q1 + S.q2; }
inline double charge(const PhaseState &s) { return charge(state_integrals(s, 0.0)); }

/// J_omega(u) + 1/2 ||v1 - i w u1||^2 + 1/4 ||v2 - 2 i w u2||^2, which equals E - omega Q
inline double energy_charge_split(const StateIntegrals &S, const Params &p)
{
  return action_j(S.u, p) + 0.5 * S.d1 + 0.25 * S.d2;
}

inline double modified_h_direct(const StateIntegrals &S, const Params &p)
{
  const double a = p.alpha();
  return -a * (S.vn1 + 0.5 * S.vn2) + a * mass_term(S.u, p) + (a + 2.0) * (gradient_l(S.u) - S.u.P);
}

/// H rebuilt from E - omega Q, Q and the twisted velocity norms.
inline double modified_h_recombined(const StateIntegrals &S, const Params &p)
{
  const double a = p.alpha(), w = p.omega, k2 = p.kappa * p.kappa;
  const double emq = energy(S, p) - w * charge(S);
  return 2.0 * (a + 2.0) * emq - 2.0 * w * a * charge(S) - 2.0 * (a + 1.0) * (S.d1 + 0.5 * S.d2) -
         2.0 * (1.0 - (a + 1.0) * w * w) * S.u.n1 - (k2 - 4.0 * (a + 1.0) * w * w) * S.u.n2;
}

/// Size of the terms entering H, used to turn its two forms into a relative comparison.
inline double modified_h_scale(const StateIntegrals &S, const Params &p)
{
  const double a = std::abs(double(p.alpha()));
  return std::max({1e-300, a * (S.vn1 + S.vn2), a * mass_term(S.u, p), gradient_l(S.u), std::abs(S.u.P),
                   std::abs(energy(S, p)), std::abs(p.omega * charge(S)), S.d1 + S.d2});
}

inline constexpr double identity_rel_tol = 1e-10;

inline double modified_h(const StateIntegrals &S, const Params &p)
{
  const double h = modified_h_direct(S, p);
  const double r = modified_h_recombined(S, p);
  if (std::abs(h - r) > identity_rel_tol * modified_h_scale(S, p))
    throw Error(ErrorKind::certification, "the two forms of H disagree");
  return h;
}
inline double modified_h(const PhaseState &s, const Params &p) { return modified_h(state_integrals(s, p.omega), p); }

/// Composite H1 x L2 norm: sum over components of ||(u_j, v_j)||.
inline double composite_norm(const StateIntegrals &S)
{
  return std::sqrt(S.u.n1 + S.u.g1 + S.vn1) + std::sqrt(S.u.n2 + S.u.g2 + S.vn2);
}

/// All scalar functionals of one state.
struct FunctionalReport {
  double t = 0;
  double M = 0, M_omega = 0, L = 0, L_omega = 0, P = 0, J_omega = 0, K = 0, K0_omega = 0;
  double E = 0, Q = 0, H = 0, E_minus_omegaQ = 0, I_omega = 0, R_omega = 0;

  static constexpr std::array<const char *, 12> csv_columns{
      "t", "M", "M_omega", "L", "P", "J_omega", "K", "K0_omega", "E", "Q", "H", "E_minus_omegaQ"};

  static std::string csv_header()
  {
    std::string s;
    for (std::size_t i = 0; i < csv_columns.size(); ++i)
      s += (i ? "," : "") + std::string(csv_columns[i]);
    return s;
  }

  std::array<double, 12> csv_values() const { return {t, M, M_omega, L, P, J_omega, K, K0_omega, E, Q, H, E_minus_omegaQ}; }

  void write_csv_row(std::ostream &os) const
  {
    char buf[32];
    const auto v = csv_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", v[i]);
      os << (i ? "," : "") << buf;
    }
    os << '\n';
  }

  nlohmann::json to_json() const
  {
    nlohmann::json j;
    const auto v = csv_values();
    for (std::size_t i = 0; i < v.size(); ++i)
      j[csv_columns[i]] = v[i];
    j["L_omega"] = L_omega;
    j["I_omega"] = I_omega;
    j["R_omega"] = R_omega;
    return j;
  }
};

inline FunctionalReport functional_report(const StateIntegrals &S, const Params &p, double t = 0.0)
{
  FunctionalReport r;
  r.t = t;
  r.M = S.u.n1 + 0.5 * S.u.n2;
  r.M_omega = momega(S.u, p);
  r.L = gradient_l(S.u);
  r.L_omega = r.L + r.M_omega;
  r.P = S.u.P;
  r.J_omega = 0.5 * r.L + 0.5 * r.M_omega - 0.5 * r.P;
  r.K = nehari_k(S.u, p);
  r.K0_omega = nehari_k0(S.u, p);
  r.E = energy(S, p);
  r.Q = charge(S);
  r.H = modified_h_direct(S, p);
  r.E_minus_omegaQ = r.E - p.omega * r.Q;
  r.I_omega = r.P > 0 ? r.L * std::sqrt(std::max(r.M_omega, 0.0)) / r.P : std::nan("");
  r.R_omega = r.P > 0 ? r.L_omega / std::cbrt(r.P * r.P) : std::nan("");
  return r;
}

inline FunctionalReport functional_report(const PhaseState &s, const Params &p, double t = 0.0)
{
  return functional_report(state_integrals(s, p.omega), p, t);
}

/// |a - b| / scale with a floor on the scale.
inline double rel_err(double a, double b, double scale)
{
  return std::abs(a - b) / std::max(std::abs(scale), 1e-300);
}

} // namespace kglab

#endif // KGLAB_FUNCTIONALS_HPP
