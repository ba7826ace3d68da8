#include "ssaid/hypergradient.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ssaid {

namespace {

void check_mu(const ProblemConstants& c) {
  require(std::isfinite(c.mu) && c.mu > 0.0, "mu must be positive and finite");
}

}  // namespace

double compute_l_phi(const ProblemConstants& c) {
  check_mu(c);
  const double mu = c.mu, L = c.lipschitz_L, M = c.lipschitz_M;
  const double rho = c.rho, tau = c.tau;
  return L + (2.0 * L * L + tau * M * M) / mu +
         (rho * L * M + L * L * L + tau * M * L) / (mu * mu) +
         rho * L * L * M / (mu * mu * mu);
}

DerivedConstants compute_derived_constants(const ProblemConstants& c,
                                           double v0_norm) {
  check_mu(c);
  require(std::isfinite(v0_norm) && v0_norm >= 0.0,
          "v0 norm must be finite and nonnegative");
  const double mu = c.mu, L = c.lipschitz_L, M = c.lipschitz_M, rho = c.rho;
  DerivedConstants d;
  d.v0_norm = v0_norm;
  d.c0 = rho * M / (mu * mu) + L / mu;
  d.c1 = L * (L * mu + rho * M) / (mu * mu) + ((L + mu) / mu) * d.c0 * L;
  d.c2 = L + rho * M / mu + L * d.c0;
  d.c3 = M + L * v0_norm + M * L / mu;
  d.l_phi = compute_l_phi(c);
  return d;
}

DerivedConstants with_step_sizes(DerivedConstants d, const ProblemConstants& c,
                                 const StepSizes& s) {
  d.c_beta = 2.0 * s.beta * d.c1 * d.c3 +
             s.alpha * (d.c2 * c.sigma + d.c0 * c.lipschitz_L * c.lipschitz_M);
  return d;
}

double beta_cap(const DerivedConstants& d, const ProblemConstants& c,
                double alpha, double eta) {
  const double mu = c.mu, L = c.lipschitz_L;
  return std::min({mu * alpha / (4.0 * d.c1), 3.0 * mu * eta / (4.0 * d.c1),
                   1.0 / (8.0 * d.l_phi), mu / (32.0 * d.c1 * L)});
}

StepSizes default_step_sizes(const DerivedConstants& d,
                             const ProblemConstants& c,
                             std::int64_t horizon_k) {
  require(horizon_k >= 1, "horizon must be at least 1");
  check_mu(c);
  require(std::isfinite(d.l_phi) && std::isfinite(d.c1) && std::isfinite(d.c3),
          "automatic beta needs a finite gradient bound M; pass beta explicitly");
  StepSizes s;
  s.horizon_k = horizon_k;
  s.alpha = 1.0 / c.lipschitz_L;
  s.eta = 1.0 / c.lipschitz_L;
  const double schedule =
      1.0 / (std::sqrt(static_cast<double>(horizon_k)) * std::sqrt(d.l_phi) * d.c3);
  // c3 == 0 (no upper signal) leaves only the stability caps.
  s.beta = std::min(std::isfinite(schedule) ? schedule : INFINITY,
                    beta_cap(d, c, s.alpha, s.eta));
  return s;
}

std::vector<std::string> step_size_violations(const StepSizes& s,
                                              const DerivedConstants& d,
                                              const ProblemConstants& c) {
  std::vector<std::string> out;
  constexpr double slack = 1.0 + 1e-12;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) out.push_back(what);
  };
  const double inv_l = 1.0 / c.lipschitz_L;
  check(s.alpha > 0.0 && s.alpha <= inv_l * slack, "0 < alpha <= 1/L");
  check(s.eta > 0.0 && s.eta <= inv_l * slack, "0 < eta <= 1/L");
  check(s.alpha <= s.eta * slack, "alpha <= eta");
  check(s.beta >= 0.0, "beta >= 0");
  check(s.beta <= c.mu * s.alpha / (4.0 * d.c1) * slack,
        "beta <= mu alpha / (4 c1)");
  check(s.beta <= 3.0 * c.mu * s.eta / (4.0 * d.c1) * slack,
        "beta <= 3 mu eta / (4 c1)");
  check(s.beta <= 1.0 / (8.0 * d.l_phi) * slack, "beta <= 1 / (8 L_Phi)");
  check(s.beta <= c.mu / (32.0 * d.c1 * c.lipschitz_L) * slack,
        "beta <= mu / (32 c1 L)");
  return out;
}

Vector exact_hypergradient(const BilevelOracle& problem, const Vector& x) {
  return reference_solution(problem, x).grad_phi;
}

Vector stochastic_hypergradient(const BilevelOracle& problem, const Vector& x,
                                const Vector& y_hat, const Vector& v_hat,
                                const UpperDraw& xi,
                                const SecondOrderDraw& zeta) {
  require(v_hat.size() == problem.dim_y(), "v must have length dim_y");
  require(v_hat.allFinite(), "nonfinite adjoint input");
  // The upper gradient here is grad_x F, not grad_x G.
  return problem.sample_grad_x_F(x, y_hat, xi) -
         problem.sample_jvp_xy(x, y_hat, zeta, v_hat);
}

Vector stochastic_hypergradient(const BilevelOracle& problem, const Vector& x,
                                const Vector& y_hat, const Vector& v_hat,
                                std::uint64_t seed, std::uint64_t k) {
  Stream upper(seed, k, StreamTag::upper);
  Stream jac(seed, k, StreamTag::jacobian);
  const UpperDraw xi = problem.draw_upper(upper);
  const SecondOrderDraw zeta = problem.draw_second_order(jac);
  return stochastic_hypergradient(problem, x, y_hat, v_hat, xi, zeta);
}

}  // namespace ssaid
