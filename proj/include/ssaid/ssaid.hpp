#pragma once

#include "ssaid/hypergradient.hpp"
#include "ssaid/problems.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ssaid {

struct OracleCounters {
  std::int64_t gradient = 0;  // sampled gradient queries
  std::int64_t matvec = 0;    // sampled Hessian- and Jacobian-vector products

  std::int64_t complexity() const { return std::max(gradient, matvec); }
};

/// Iterate after `k` completed iterations. y_hat and v_hat are the warm
/// starts of iteration k.
struct SSAIDState {
  Vector x;
  Vector y_hat;
  Vector v_hat;
  std::int64_t k = 0;
  StepSizes steps;
  OracleCounters counters;
};

/// Intermediate quantities of one iteration, for the lemma checks.
struct StepRecord {
  Vector x;          // x_k
  Vector y_start;    // warm start of the lower update
  Vector y_hat;      // y_hat_k
  Vector v_hat;      // v_hat_k
  Vector grad_y_F;   // grad_y F(x_k, y_hat_k; xi_k)
  Vector hypergrad;  // estimator used for the upper step
};

/// y - alpha g
Vector lower_update(const Vector& y, const Vector& grad, double alpha);
/// v - eta (A v) + eta b, one fixed-step Richardson iteration on A v = b.
Vector richardson_update(const Vector& v, const Vector& av, const Vector& b,
                         double eta);

struct TraceRow {
  std::int64_t k = 0;
  double grad_phi_sq = 0.0;
  double y_err = 0.0;
  double v_err = 0.0;
  double v_norm = 0.0;
  double x_step_norm = 0.0;
  double phi = 0.0;
  std::int64_t gc_count = 0;
  std::int64_t mv_count = 0;
};

/// Row k describes the state after k iterations: errors of the warm starts
/// against y*(x_k) and v*(x_k), and the step x_k - x_{k-1} (zero at k = 0).
struct IterationTrace {
  std::string algorithm;
  StepSizes steps;
  std::vector<TraceRow> rows;
  SSAIDState final_state;
};

inline constexpr const char* kTraceHeader =
    "k,grad_phi_sq,y_err,v_err,v_norm,x_step_norm,phi,gc_count,mv_count";

/// A nonfinite iterate was produced. Carries the last finite state and, when
/// raised by a run, the trace recorded so far.
class Divergence : public Error {
 public:
  Divergence(const std::string& what, SSAIDState last_finite)
      : Error(what), state_(std::move(last_finite)) {}
  const SSAIDState& last_finite_state() const noexcept { return state_; }
  const IterationTrace& partial_trace() const noexcept { return trace_; }
  void attach_trace(IterationTrace trace) { trace_ = std::move(trace); }

 private:
  SSAIDState state_;
  IterationTrace trace_;
};

/// Throws Divergence carrying `state` when `iterate` has a nonfinite entry.
void ensure_finite(const Vector& iterate, const SSAIDState& state,
                   const char* name);

struct RunConfig {
  std::uint64_t seed = 0;
  std::int64_t horizon = 1;              // K >= 0 iterations
  std::optional<StepSizes> steps;        // nullopt: default_step_sizes(K)
  std::int64_t stride = 1;               // record every stride-th row (and the last)
  std::optional<Vector> x0, y0, v0;      // zeros when unset
};

SSAIDState initial_state(const BilevelOracle& problem, const RunConfig& config,
                         const StepSizes& steps);

/// Step sizes a run with this config uses.
StepSizes resolve_steps(const BilevelOracle& problem, const RunConfig& config);

/// One iteration of the single-loop method with the draws of (seed, state.k).
SSAIDState ssaid_step(const SSAIDState& state, const BilevelOracle& problem,
                      std::uint64_t seed, StepRecord* record = nullptr);

/// Reference solution at state.x. A finite x whose reference overflows
/// raises Divergence.
ReferenceSolution checked_reference(const BilevelOracle& problem,
                                    const SSAIDState& state);

/// Reference row for `state`; `previous_x` gives the step norm.
TraceRow trace_row(const BilevelOracle& problem, const SSAIDState& state,
                   const Vector& previous_x);

IterationTrace run_ssaid(const BilevelOracle& problem, const RunConfig& config);

/// max(gradient, matvec) counters at the first row whose running average of
/// grad_phi_sq over the recorded rows is <= epsilon, or nullopt.
std::optional<std::int64_t> oracle_complexity(const IterationTrace& trace,
                                              double epsilon);

/// Running averages of grad_phi_sq over the recorded rows.
std::vector<double> running_average(const IterationTrace& trace);

void write_trace_csv(const IterationTrace& trace, std::ostream& out);
void write_trace_csv(const IterationTrace& trace, const std::string& path);
IterationTrace read_trace_csv(const std::string& path);

/// Exact decimal form used by every emitted CSV (round-trips doubles).
std::string format_double(double value);

}  // namespace ssaid
