#pragma once

#include "ssaid/problems.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ssaid {

/// Constants of the convergence analysis, derived from ProblemConstants.
struct DerivedConstants {
  double c0 = 0.0;      // rho M / mu^2 + L / mu
  double c1 = 0.0;      // L (L mu + rho M) / mu^2 + ((L + mu) / mu) c0 L
  double c2 = 0.0;      // L + rho M / mu + L c0
  double c3 = 0.0;      // M + L |v0| + M L / mu
  double l_phi = 0.0;   // smoothness constant of Phi
  double c_beta = 0.0;  // 2 beta c1 c3 + alpha (c2 sigma + c0 L M); set by
                        // with_step_sizes, zero until then
  double v0_norm = 0.0;
};

struct StepSizes {
  double alpha = 0.0;  // lower step
  double eta = 0.0;    // adjoint step
  double beta = 0.0;   // upper step
  std::int64_t horizon_k = 1;
};

double compute_l_phi(const ProblemConstants& constants);

DerivedConstants compute_derived_constants(const ProblemConstants& constants,
                                           double v0_norm = 0.0);

/// Copy of `derived` with c_beta evaluated at the given step sizes.
DerivedConstants with_step_sizes(DerivedConstants derived,
                                 const ProblemConstants& constants,
                                 const StepSizes& steps);

/// The largest beta admitted by the stability conditions at the given
/// alpha and eta, ignoring the horizon-dependent branch.
double beta_cap(const DerivedConstants& derived,
                const ProblemConstants& constants, double alpha, double eta);

/// alpha = eta = 1/L and beta = min(1 / (sqrt(k L_Phi) c3), beta_cap).
StepSizes default_step_sizes(const DerivedConstants& derived,
                             const ProblemConstants& constants,
                             std::int64_t horizon_k);

/// Human-readable list of violated step-size conditions; empty when the
/// steps are admissible. A relative slack of 1e-12 absorbs rounding.
std::vector<std::string> step_size_violations(const StepSizes& steps,
                                              const DerivedConstants& derived,
                                              const ProblemConstants& constants);

/// grad Phi(x) = grad_x f(x, y*) - grad^2_xy g(x, y*) v*.
Vector exact_hypergradient(const BilevelOracle& problem, const Vector& x);

/// grad_x F(x, y; xi) - grad^2_xy G(x, y; zeta) v for explicit draws.
Vector stochastic_hypergradient(const BilevelOracle& problem, const Vector& x,
                                const Vector& y_hat, const Vector& v_hat,
                                const UpperDraw& xi,
                                const SecondOrderDraw& zeta);

/// Same estimator with xi and zeta taken from the iteration-k streams of
/// `seed`, i.e. the draws SSAID uses at iteration k.
Vector stochastic_hypergradient(const BilevelOracle& problem, const Vector& x,
                                const Vector& y_hat, const Vector& v_hat,
                                std::uint64_t seed, std::uint64_t k);

}  // namespace ssaid
