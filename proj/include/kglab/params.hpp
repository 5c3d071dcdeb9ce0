#ifndef KGLAB_PARAMS_HPP
#define KGLAB_PARAMS_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace kglab {

enum class ErrorKind {
  invalid_argument,
  grid_mismatch,
  domain,
  inadmissible,
  stagnation,
  trivial_collapse,
  non_convergence,
  bracketing,
  certification,
  io
};

inline const char *to_string(ErrorKind k)
{
  switch (k) {
  case ErrorKind::invalid_argument: return "invalid-argument";
  case ErrorKind::grid_mismatch: return "grid-mismatch";
  case ErrorKind::domain: return "domain";
  case ErrorKind::inadmissible: return "inadmissible";
  case ErrorKind::stagnation: return "stagnation";
  case ErrorKind::trivial_collapse: return "trivial-collapse";
  case ErrorKind::non_convergence: return "non-convergence";
  case ErrorKind::bracketing: return "bracketing";
  case ErrorKind::certification: return "certification";
  case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
  {
  }
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

/// Physical parameters (N, kappa, omega) of the system.
struct Params {
  int N = 3;
  double kappa = 2.0;
  double omega = 0.0;

  Params() = default;
  Params(int n, double k, double w) : N(n), kappa(k), omega(w) { validate(); }

  int alpha() const { return 4 - N; }
  /// coefficient of |u1|^2 in M_omega
  double m1sq() const { return 1.0 - omega * omega; }
  /// coefficient of |u2|^2 in M_omega (before the 1/2)
  double m2sq() const { return kappa * kappa - 4.0 * omega * omega; }

  void validate() const
  {
    if (N < 2 || N > 5)
      throw Error(ErrorKind::invalid_argument, "dimension N must be in 2..5");
    if (!(kappa > 0.0) || !std::isfinite(kappa))
      throw Error(ErrorKind::invalid_argument, "kappa must be positive");
    if (!std::isfinite(omega))
      throw Error(ErrorKind::invalid_argument, "omega must be finite");
  }

  double omega_max() const { return std::min(1.0, kappa / 2.0); }
  bool admissible() const { return std::abs(omega) < omega_max(); }
  bool mass_resonant() const { return kappa == 2.0; }
  /// frequency threshold 1/sqrt(5-N) of the mass-subcritical instability result
  double omega_c() const { return 1.0 / std::sqrt(5.0 - N); }
  /// hypotheses of the instability results for this (N, kappa, omega)
  bool instability_hypotheses() const
  {
    if (!admissible())
      return false;
    if (N <= 3)
      return mass_resonant() && std::abs(omega) <= omega_c();
    return true;
  }
};

} // namespace kglab

#endif // KGLAB_PARAMS_HPP
