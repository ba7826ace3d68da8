#include "ssaid/ssaid.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ssaid {

Vector lower_update(const Vector& y, const Vector& grad, double alpha) {
  return y - alpha * grad;
}

Vector richardson_update(const Vector& v, const Vector& av, const Vector& b,
                         double eta) {
  return v - eta * av + eta * b;
}

StepSizes resolve_steps(const BilevelOracle& problem, const RunConfig& config) {
  if (config.steps) return *config.steps;
  const double v0_norm = config.v0 ? config.v0->norm() : 0.0;
  const DerivedConstants derived =
      compute_derived_constants(problem.constants(), v0_norm);
  return default_step_sizes(derived, problem.constants(),
                            std::max<std::int64_t>(config.horizon, 1));
}

SSAIDState initial_state(const BilevelOracle& problem, const RunConfig& config,
                         const StepSizes& steps) {
  SSAIDState s;
  s.x = config.x0 ? *config.x0 : Vector::Zero(problem.dim_x());
  s.y_hat = config.y0 ? *config.y0 : Vector::Zero(problem.dim_y());
  s.v_hat = config.v0 ? *config.v0 : Vector::Zero(problem.dim_y());
  require(s.x.size() == problem.dim_x(), "x0 must have length dim_x");
  require(s.y_hat.size() == problem.dim_y(), "y0 must have length dim_y");
  require(s.v_hat.size() == problem.dim_y(), "v0 must have length dim_y");
  require(s.x.allFinite() && s.y_hat.allFinite() && s.v_hat.allFinite(),
          "initial point must be finite");
  s.steps = steps;
  return s;
}

void ensure_finite(const Vector& iterate, const SSAIDState& state,
                   const char* name) {
  if (iterate.allFinite()) return;
  std::ostringstream os;
  os << "nonfinite " << name << " at iteration " << state.k;
  throw Divergence(os.str(), state);
}

SSAIDState ssaid_step(const SSAIDState& state, const BilevelOracle& problem,
                      std::uint64_t seed, StepRecord* record) {
  const auto k = static_cast<std::uint64_t>(state.k);
  const IterationDraws draws = draw_iteration(problem, seed, k);
  const StepSizes& s = state.steps;

  SSAIDState next;
  next.k = state.k + 1;
  next.steps = s;
  next.y_hat = lower_update(
      state.y_hat, problem.sample_grad_y_G(state.x, state.y_hat, draws.pi),
      s.alpha);
  ensure_finite(next.y_hat, state, "y");
  const Vector grad_y_F = problem.sample_grad_y_F(state.x, next.y_hat, draws.xi);
  next.v_hat = richardson_update(
      state.v_hat,
      problem.sample_hvp_yy(state.x, next.y_hat, draws.zeta_prime, state.v_hat),
      grad_y_F, s.eta);
  ensure_finite(next.v_hat, state, "v");
  const Vector hypergrad = stochastic_hypergradient(
      problem, state.x, next.y_hat, next.v_hat, draws.xi, draws.zeta);
  next.x = state.x - s.beta * hypergrad;
  next.counters.gradient = state.counters.gradient + 3;
  next.counters.matvec = state.counters.matvec + 2;

  ensure_finite(next.x, state, "x");
  if (record) {
    record->x = state.x;
    record->y_start = state.y_hat;
    record->y_hat = next.y_hat;
    record->v_hat = next.v_hat;
    record->grad_y_F = grad_y_F;
    record->hypergrad = hypergrad;
  }
  return next;
}

ReferenceSolution checked_reference(const BilevelOracle& problem,
                                    const SSAIDState& state) {
  std::optional<ReferenceSolution> ref;
  try {
    ref = reference_solution(problem, state.x);
  } catch (const InvalidParameter&) {
    if (!state.x.allFinite()) throw;
  }
  if (!ref || !ref->y_star.allFinite() || !ref->v_star.allFinite() ||
      !ref->grad_phi.allFinite()) {
    std::ostringstream os;
    os << "reference solution overflowed at iteration " << state.k;
    throw Divergence(os.str(), state);
  }
  return *ref;
}

TraceRow trace_row(const BilevelOracle& problem, const SSAIDState& state,
                   const Vector& previous_x) {
  const ReferenceSolution ref = checked_reference(problem, state);
  TraceRow row;
  row.k = state.k;
  row.grad_phi_sq = ref.grad_phi.squaredNorm();
  row.y_err = (state.y_hat - ref.y_star).norm();
  row.v_err = (state.v_hat - ref.v_star).norm();
  row.v_norm = state.v_hat.norm();
  row.x_step_norm = (state.x - previous_x).norm();
  row.phi = problem.f(state.x, ref.y_star);
  row.gc_count = state.counters.gradient;
  row.mv_count = state.counters.matvec;
  return row;
}

IterationTrace run_ssaid(const BilevelOracle& problem, const RunConfig& config) {
  require(config.horizon >= 0, "horizon must be nonnegative");
  require(config.stride >= 1, "stride must be at least 1");
  IterationTrace trace;
  trace.algorithm = "ssaid";
  trace.steps = resolve_steps(problem, config);
  SSAIDState state = initial_state(problem, config, trace.steps);
  trace.rows.push_back(trace_row(problem, state, state.x));
  try {
    for (std::int64_t k = 1; k <= config.horizon; ++k) {
      Vector previous_x = state.x;
      state = ssaid_step(state, problem, config.seed);
      if (k % config.stride == 0 || k == config.horizon) {
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

std::vector<double> running_average(const IterationTrace& trace) {
  std::vector<double> out;
  out.reserve(trace.rows.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    sum += trace.rows[i].grad_phi_sq;
    out.push_back(sum / static_cast<double>(i + 1));
  }
  return out;
}

std::optional<std::int64_t> oracle_complexity(const IterationTrace& trace,
                                              double epsilon) {
  require(std::isfinite(epsilon) && epsilon > 0.0, "epsilon must be positive");
  const std::vector<double> avg = running_average(trace);
  for (std::size_t i = 0; i < avg.size(); ++i) {
    if (avg[i] <= epsilon) {
      return std::max(trace.rows[i].gc_count, trace.rows[i].mv_count);
    }
  }
  return std::nullopt;
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void write_trace_csv(const IterationTrace& trace, std::ostream& out) {
  out << kTraceHeader << '\n';
  for (const TraceRow& r : trace.rows) {
    out << r.k << ',' << format_double(r.grad_phi_sq) << ','
        << format_double(r.y_err) << ',' << format_double(r.v_err) << ','
        << format_double(r.v_norm) << ',' << format_double(r.x_step_norm) << ','
        << format_double(r.phi) << ',' << r.gc_count << ',' << r.mv_count
        << '\n';
  }
}

void write_trace_csv(const IterationTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidParameter("cannot open " + path + " for writing");
  write_trace_csv(trace, out);
  if (!out) throw InvalidParameter("failed writing " + path);
}

IterationTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidParameter("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) {
    throw InvalidParameter(path + ": unexpected trace header");
  }
  IterationTrace trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) {
      throw InvalidParameter(path + ": malformed trace row: " + line);
    }
    try {
      TraceRow r;
      r.k = std::stoll(cells[0]);
      r.grad_phi_sq = std::stod(cells[1]);
      r.y_err = std::stod(cells[2]);
      r.v_err = std::stod(cells[3]);
      r.v_norm = std::stod(cells[4]);
      r.x_step_norm = std::stod(cells[5]);
      r.phi = std::stod(cells[6]);
      r.gc_count = std::stoll(cells[7]);
      r.mv_count = std::stoll(cells[8]);
      trace.rows.push_back(r);
    } catch (const std::logic_error&) {
      throw InvalidParameter(path + ": malformed trace row: " + line);
    }
  }
  return trace;
}

}  // namespace ssaid
