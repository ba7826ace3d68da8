#include "ssaid/harness.hpp"

#include "ssaid/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

namespace ssaid {

RateFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y,
                   std::int64_t min_points) {
  require(x.size() == y.size(), "fit inputs must have equal length");
  if (static_cast<std::int64_t>(x.size()) < min_points) {
    throw InsufficientData("log-log fit needs at least " +
                           std::to_string(min_points) + " points");
  }
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0 && std::isfinite(x[i]) && std::isfinite(y[i]),
            "log-log fit needs positive finite data");
    sx += std::log(x[i]);
    sy += std::log(y[i]);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx, dy = std::log(y[i]) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw InsufficientData("log-log fit needs distinct abscissae");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  fit.points = static_cast<std::int64_t>(x.size());
  return fit;
}

namespace {

void window_points(const IterationTrace& trace, const std::vector<double>& avg,
                   std::int64_t k_min, std::int64_t k_max,
                   std::vector<double>& ks, std::vector<double>& vals) {
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const std::int64_t k = trace.rows[i].k;
    if (k >= std::max<std::int64_t>(k_min, 1) && k <= k_max) {
      ks.push_back(static_cast<double>(k));
      vals.push_back(avg[i]);
    }
  }
}

}  // namespace

RateFit rate_fit(const IterationTrace& trace, std::int64_t k_min,
                 std::int64_t k_max) {
  require(k_min < k_max, "window must satisfy k_min < k_max");
  std::vector<double> ks, vals;
  window_points(trace, running_average(trace), k_min, k_max, ks, vals);
  RateFit fit = fit_loglog(ks, vals);
  fit.k_min = k_min;
  fit.k_max = k_max;
  return fit;
}

RateFit rate_fit_average(const std::vector<IterationTrace>& traces,
                         std::int64_t k_min, std::int64_t k_max) {
  require(!traces.empty(), "no traces to fit");
  require(k_min < k_max, "window must satisfy k_min < k_max");
  const std::size_t rows = traces.front().rows.size();
  std::vector<double> mean(rows, 0.0);
  for (const IterationTrace& t : traces) {
    require(t.rows.size() == rows, "traces must record identical rows");
    const std::vector<double> avg = running_average(t);
    for (std::size_t i = 0; i < rows; ++i) {
      require(t.rows[i].k == traces.front().rows[i].k,
              "traces must record identical rows");
      mean[i] += avg[i] / static_cast<double>(traces.size());
    }
  }
  std::vector<double> ks, vals;
  window_points(traces.front(), mean, k_min, k_max, ks, vals);
  RateFit fit = fit_loglog(ks, vals);
  fit.k_min = k_min;
  fit.k_max = k_max;
  return fit;
}

AlgorithmSpec parse_algorithm(const std::string& name) {
  AlgorithmSpec a;
  a.name = name;
  if (name == "ssaid") return a;
  std::string rest = name;
  bool cold = false;
  const std::string cold_suffix = "_cold";
  if (rest.size() > cold_suffix.size() &&
      rest.compare(rest.size() - cold_suffix.size(), cold_suffix.size(),
                   cold_suffix) == 0) {
    cold = true;
    rest.resize(rest.size() - cold_suffix.size());
  }
  const std::string prefix = "multiloop_";
  if (rest.rfind(prefix, 0) != 0) {
    throw InvalidParameter("unknown algorithm " + name);
  }
  const std::string arg = rest.substr(prefix.size());
  a.multiloop = true;
  if (arg == "log") {
    a.log_preset = true;
  } else if (arg == "kappa") {
    a.kappa_preset = true;
  } else {
    std::size_t used = 0;
    long long n = 0;
    try {
      n = std::stoll(arg, &used);
    } catch (const std::logic_error&) {
      throw InvalidParameter("unknown algorithm " + name);
    }
    if (used != arg.size() || n < 1) {
      throw InvalidParameter("unknown algorithm " + name);
    }
    a.config = multiloop_fixed_preset(n);
  }
  a.config.warm_start = !cold;
  return a;
}

MultiLoopConfig resolve_multiloop(const AlgorithmSpec& algorithm,
                                  const BilevelOracle& problem,
                                  std::int64_t horizon) {
  MultiLoopConfig ml = algorithm.config;
  if (algorithm.log_preset || algorithm.kappa_preset) {
    const bool warm = ml.warm_start;
    ml = algorithm.log_preset
             ? multiloop_log_preset(problem, horizon)
             : multiloop_fixed_preset(static_cast<std::int64_t>(
                   std::ceil(problem.constants().kappa() - 1e-9)));
    ml.warm_start = warm;
  }
  return ml;
}

std::optional<std::int64_t> complexity_to_epsilon(const BilevelOracle& problem,
                                                  const AlgorithmSpec& algorithm,
                                                  const RunConfig& run,
                                                  double epsilon) {
  require(std::isfinite(epsilon) && epsilon > 0.0, "epsilon must be positive");
  const MultiLoopConfig ml = resolve_multiloop(algorithm, problem, run.horizon);
  StepSizes steps = resolve_steps(problem, run);
  if (algorithm.multiloop) {
    if (ml.alpha) steps.alpha = *ml.alpha;
    if (ml.eta) steps.eta = *ml.eta;
    if (ml.beta) steps.beta = *ml.beta;
  }
  SSAIDState state = initial_state(problem, run, steps);
  double sum = 0.0;
  try {
    for (std::int64_t k = 0;; ++k) {
      sum += checked_reference(problem, state).grad_phi.squaredNorm();
      if (sum / static_cast<double>(k + 1) <= epsilon) {
        return state.counters.complexity();
      }
      if (k == run.horizon) return std::nullopt;
      state = algorithm.multiloop ? multiloop_step(state, problem, ml, run.seed)
                                  : ssaid_step(state, problem, run.seed);
    }
  } catch (const Divergence&) {
    return std::nullopt;
  }
}

void SweepSpec::validate() const {
  require(!kappa_grid.empty(), "kappa grid must not be empty");
  for (std::size_t i = 0; i < kappa_grid.size(); ++i) {
    require(kappa_grid[i] >= 1.0, "kappa values must be at least 1");
    if (i > 0) {
      require(kappa_grid[i] > kappa_grid[i - 1],
              "kappa grid must be strictly increasing");
    }
  }
  require(!seeds.empty(), "at least one seed is required");
  require(std::isfinite(epsilon) && epsilon > 0.0, "epsilon must be positive");
  require(max_k >= 0, "max K must be nonnegative");
  require(!algorithms.empty(), "at least one algorithm is required");
  require(dim >= 1, "dimension must be positive");
  require(threads >= 1, "threads must be at least 1");
  for (const auto& a : algorithms) parse_algorithm(a);
  noise.validate();
}

ProblemPtr sweep_problem(const SweepSpec& spec, double kappa,
                         std::uint64_t seed) {
  return make_quadratic_problem(spec.dim, spec.dim, kappa, spec.noise, seed);
}

SweepResult kappa_sweep(const SweepSpec& spec) {
  spec.validate();
  struct Task {
    double kappa;
    std::uint64_t seed;
    std::string algorithm;
  };
  std::vector<Task> tasks;
  for (double kappa : spec.kappa_grid) {
    for (std::uint64_t seed : spec.seeds) {
      for (const auto& a : spec.algorithms) tasks.push_back({kappa, seed, a});
    }
  }
  std::sort(tasks.begin(), tasks.end(), [](const Task& a, const Task& b) {
    return std::tie(a.kappa, a.seed, a.algorithm) <
           std::tie(b.kappa, b.seed, b.algorithm);
  });

  SweepResult result;
  result.records.resize(tasks.size());
  parallel_for(static_cast<std::int64_t>(tasks.size()), spec.threads,
               [&](std::int64_t i) {
                 const Task& t = tasks[static_cast<std::size_t>(i)];
                 const ProblemPtr problem = sweep_problem(spec, t.kappa, t.seed);
                 RunConfig run;
                 run.seed = t.seed;
                 run.horizon = spec.max_k;
                 SweepRecord& rec = result.records[static_cast<std::size_t>(i)];
                 rec.kappa = t.kappa;
                 rec.seed = t.seed;
                 rec.algorithm = t.algorithm;
                 rec.complexity = complexity_to_epsilon(
                     *problem, parse_algorithm(t.algorithm), run, spec.epsilon);
                 rec.censored = !rec.complexity.has_value();
               });

  std::map<std::pair<double, std::string>, std::vector<const SweepRecord*>> groups;
  for (const auto& r : result.records) groups[{r.kappa, r.algorithm}].push_back(&r);
  for (const auto& [key, recs] : groups) {
    SweepCell cell;
    cell.kappa = key.first;
    cell.algorithm = key.second;
    cell.total = static_cast<std::int64_t>(recs.size());
    std::vector<double> values;
    for (const SweepRecord* r : recs) {
      if (r->complexity) values.push_back(static_cast<double>(*r->complexity));
    }
    cell.completed = static_cast<std::int64_t>(values.size());
    cell.resolved = 2 * cell.completed >= cell.total && !values.empty();
    if (cell.resolved) {
      std::sort(values.begin(), values.end());
      const std::size_t h = values.size() / 2;
      cell.median = values.size() % 2 ? values[h] : 0.5 * (values[h - 1] + values[h]);
    }
    result.cells.push_back(cell);
  }

  std::vector<std::string> names = spec.algorithms;
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    std::vector<double> ks, medians;
    for (const auto& cell : result.cells) {
      if (cell.algorithm == name && cell.median && *cell.median > 0) {
        ks.push_back(cell.kappa);
        medians.push_back(*cell.median);
      }
    }
    std::optional<RateFit> fit;
    if (ks.size() >= 2) fit = fit_loglog(ks, medians, 2);
    result.exponents.emplace_back(name, fit);
  }
  return result;
}

SweepResult compare_algorithms(const SweepSpec& spec) {
  require(spec.algorithms.size() >= 2, "comparison needs at least two algorithms");
  return kappa_sweep(spec);
}

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
  out << kSweepHeader << '\n';
  for (const auto& r : result.records) {
    out << format_double(r.kappa) << ',' << r.seed << ',' << r.algorithm << ','
        << (r.complexity ? std::to_string(*r.complexity) : std::string()) << ','
        << (r.censored ? 1 : 0) << '\n';
  }
}

void write_cells_csv(const SweepResult& result, std::ostream& out) {
  out << kCellHeader << '\n';
  for (const auto& c : result.cells) {
    out << format_double(c.kappa) << ',' << c.algorithm << ',' << c.completed
        << ',' << c.total << ','
        << (c.median ? format_double(*c.median) : std::string()) << ','
        << (c.resolved ? 1 : 0) << '\n';
  }
}

Json sweep_to_json(const SweepResult& result) {
  Json cells = Json::array();
  for (const auto& c : result.cells) {
    cells.push_back(Json{{"kappa", c.kappa},
                         {"algorithm", c.algorithm},
                         {"completed", c.completed},
                         {"total", c.total},
                         {"median", c.median ? Json(*c.median) : Json(nullptr)},
                         {"resolved", c.resolved}});
  }
  Json exps = Json::object();
  for (const auto& [name, fit] : result.exponents) {
    exps[name] = fit ? Json{{"slope", fit->slope},
                            {"intercept", fit->intercept},
                            {"r_squared", fit->r_squared},
                            {"points", fit->points}}
                     : Json(nullptr);
  }
  return Json{{"cells", cells}, {"kappa_exponent", exps}};
}

Json run_metadata(const BilevelOracle& problem, const RunConfig& run,
                  const IterationTrace& trace,
                  const std::optional<MultiLoopConfig>& multiloop,
                  std::optional<double> wall_time) {
  const double v0_norm = run.v0 ? run.v0->norm() : 0.0;
  const DerivedConstants derived = with_step_sizes(
      compute_derived_constants(problem.constants(), v0_norm),
      problem.constants(), trace.steps);
  Json config{{"seed", run.seed},
              {"horizon", run.horizon},
              {"stride", run.stride},
              {"steps", run.steps ? "explicit" : "auto"}};
  Json doc{{"algorithm", trace.algorithm},
           {"problem_family", problem.family()},
           {"problem_hash", problem_hash(problem)},
           {"assumption_violating", problem.assumption_violating()},
           {"config", config},
           {"constants", constants_to_json(problem.constants())},
           {"derived", derived_to_json(derived)},
           {"steps", steps_to_json(trace.steps)},
           {"rows", trace.rows.size()}};
  if (multiloop) {
    doc["multiloop"] = Json{{"inner_iters", multiloop->inner_iters},
                            {"solver_iters", multiloop->solver_iters},
                            {"warm_start", multiloop->warm_start}};
  }
  if (wall_time) doc["wall_time_s"] = *wall_time;
  return doc;
}

}  // namespace ssaid
