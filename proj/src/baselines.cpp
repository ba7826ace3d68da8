#include "ssaid/baselines.hpp"

#include <cmath>
#include <sstream>

namespace ssaid {

namespace {

void validate(const MultiLoopConfig& c, const ProblemConstants& pc) {
  require(c.inner_iters >= 1 && c.solver_iters >= 1, "N and Q must be >= 1");
  const double inv_l = 1.0 / pc.lipschitz_L;
  if (c.alpha) {
    require(*c.alpha > 0.0 && *c.alpha <= inv_l * (1 + 1e-12),
            "multi-loop alpha must lie in (0, 1/L]");
  }
  if (c.eta) {
    require(*c.eta > 0.0 && *c.eta <= inv_l * (1 + 1e-12),
            "multi-loop eta must lie in (0, 1/L]");
  }
  if (c.beta) require(*c.beta >= 0.0, "multi-loop beta must be nonnegative");
}

}  // namespace

MultiLoopConfig multiloop_log_preset(const BilevelOracle& problem,
                                     std::int64_t horizon) {
  const double kappa = problem.constants().kappa();
  const double log_k = std::log(static_cast<double>(std::max<std::int64_t>(horizon, 2)));
  const auto n = static_cast<std::int64_t>(std::ceil(kappa * log_k));
  return multiloop_fixed_preset(std::max<std::int64_t>(n, 1));
}

MultiLoopConfig multiloop_fixed_preset(std::int64_t n) {
  require(n >= 1, "N must be >= 1");
  MultiLoopConfig c;
  c.inner_iters = n;
  c.solver_iters = n;
  return c;
}

std::string multiloop_name(const MultiLoopConfig& c) {
  std::ostringstream os;
  os << "multiloop_N" << c.inner_iters << "_Q" << c.solver_iters;
  if (!c.warm_start) os << "_cold";
  return os.str();
}

SSAIDState multiloop_step(const SSAIDState& state, const BilevelOracle& problem,
                          const MultiLoopConfig& config, std::uint64_t seed) {
  const auto k = static_cast<std::uint64_t>(state.k);
  const StepSizes& s = state.steps;

  Vector y = config.warm_start ? state.y_hat : Vector::Zero(problem.dim_y());
  for (std::int64_t j = 0; j < config.inner_iters; ++j) {
    Stream stream(seed, k, StreamTag::lower_grad, static_cast<std::uint64_t>(j));
    const LowerDraw pi = problem.draw_lower(stream);
    y = lower_update(y, problem.sample_grad_y_G(state.x, y, pi), s.alpha);
    ensure_finite(y, state, "y");
  }

  Stream upper(seed, k, StreamTag::upper);
  const UpperDraw xi = problem.draw_upper(upper);
  const Vector grad_y_F = problem.sample_grad_y_F(state.x, y, xi);
  Vector v = config.warm_start ? state.v_hat : Vector::Zero(problem.dim_y());
  for (std::int64_t q = 0; q < config.solver_iters; ++q) {
    Stream stream(seed, k, StreamTag::hessian, static_cast<std::uint64_t>(q));
    const SecondOrderDraw zeta_prime = problem.draw_second_order(stream);
    v = richardson_update(v, problem.sample_hvp_yy(state.x, y, zeta_prime, v),
                          grad_y_F, s.eta);
    ensure_finite(v, state, "v");
  }

  Stream jac(seed, k, StreamTag::jacobian);
  const SecondOrderDraw zeta = problem.draw_second_order(jac);
  const Vector hypergrad =
      stochastic_hypergradient(problem, state.x, y, v, xi, zeta);

  SSAIDState next;
  next.k = state.k + 1;
  next.steps = s;
  next.y_hat = std::move(y);
  next.v_hat = std::move(v);
  next.x = state.x - s.beta * hypergrad;
  next.counters.gradient = state.counters.gradient + config.inner_iters + 2;
  next.counters.matvec = state.counters.matvec + config.solver_iters + 1;
  ensure_finite(next.x, state, "x");
  return next;
}

IterationTrace run_multiloop(const BilevelOracle& problem,
                             const MultiLoopConfig& config,
                             const RunConfig& run) {
  validate(config, problem.constants());
  require(run.horizon >= 0, "horizon must be nonnegative");
  require(run.stride >= 1, "stride must be at least 1");
  IterationTrace trace;
  trace.algorithm = multiloop_name(config);
  StepSizes steps = resolve_steps(problem, run);
  if (config.alpha) steps.alpha = *config.alpha;
  if (config.eta) steps.eta = *config.eta;
  if (config.beta) steps.beta = *config.beta;
  trace.steps = steps;

  SSAIDState state = initial_state(problem, run, steps);
  trace.rows.push_back(trace_row(problem, state, state.x));
  try {
    for (std::int64_t k = 1; k <= run.horizon; ++k) {
      Vector previous_x = state.x;
      state = multiloop_step(state, problem, config, run.seed);
      if (k % run.stride == 0 || k == run.horizon) {
        trace.rows.push_back(trace_row(problem, state, previous_x));
      }
    }
  } catch (Divergence& d) {
    trace.final_state = d.last_finite_state();
    d.attach_trace(trace);
    throw;
  }
  trace.final_state = state;
  return trace;
}

}  // namespace ssaid
