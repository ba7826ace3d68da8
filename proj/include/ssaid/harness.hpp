#pragma once

#include "ssaid/baselines.hpp"
#include "ssaid/problem_io.hpp"
#include "ssaid/ssaid.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ssaid {

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::int64_t k_min = 0;
  std::int64_t k_max = 0;
  std::int64_t points = 0;
};

/// Least squares of log(y) on log(x). Needs `min_points` distinct x values
/// and positive data.
RateFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y,
                   std::int64_t min_points = 3);

/// Slope of log(running average of grad_phi_sq) against log k over the
/// recorded rows with k in [k_min, k_max], k >= 1.
RateFit rate_fit(const IterationTrace& trace, std::int64_t k_min,
                 std::int64_t k_max);

/// Same fit on the running averages averaged across traces recorded at
/// identical k.
RateFit rate_fit_average(const std::vector<IterationTrace>& traces,
                         std::int64_t k_min, std::int64_t k_max);

/// "ssaid", "multiloop_log" (N = Q = ceil(kappa log K)), "multiloop_kappa"
/// (N = Q = ceil(kappa)), "multiloop_<n>"; multi-loop names take an
/// optional "_cold" suffix that disables warm starts.
struct AlgorithmSpec {
  std::string name;
  bool multiloop = false;
  bool log_preset = false;
  bool kappa_preset = false;
  MultiLoopConfig config;
};
AlgorithmSpec parse_algorithm(const std::string& name);
/// Multi-loop configuration of `algorithm` on `problem` with horizon K.
MultiLoopConfig resolve_multiloop(const AlgorithmSpec& algorithm,
                                  const BilevelOracle& problem,
                                  std::int64_t horizon);

/// Runs one algorithm from `run` until the running average of the exact
/// squared hypergradient norm is <= epsilon or `run.horizon` iterations
/// have been taken. Returns max(G_c, MV) at the hit, nullopt if censored.
/// Divergence counts as censored.
std::optional<std::int64_t> complexity_to_epsilon(const BilevelOracle& problem,
                                                  const AlgorithmSpec& algorithm,
                                                  const RunConfig& run,
                                                  double epsilon);

struct SweepSpec {
  std::vector<double> kappa_grid{2, 10, 50, 250};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double epsilon = 1.0;
  std::int64_t max_k = 100000;
  std::vector<std::string> algorithms{"ssaid"};
  Index dim = 5;
  NoiseParams noise{1.0, 0.0, 0.0};
  int threads = 1;

  void validate() const;
};

struct SweepRecord {
  double kappa = 0.0;
  std::uint64_t seed = 0;
  std::string algorithm;
  std::optional<std::int64_t> complexity;
  bool censored = false;
};

/// Median over completed seeds, kept only when at least half completed.
struct SweepCell {
  double kappa = 0.0;
  std::string algorithm;
  std::int64_t completed = 0;
  std::int64_t total = 0;
  std::optional<double> median;
  bool resolved = false;
};

struct SweepResult {
  std::vector<SweepRecord> records;  // sorted by (kappa, seed, algorithm)
  std::vector<SweepCell> cells;      // sorted by (kappa, algorithm)
  /// Log-log slope of resolved positive medians against kappa, per
  /// algorithm, when at least two such cells exist. Descriptive only.
  std::vector<std::pair<std::string, std::optional<RateFit>>> exponents;
};

/// Problem of one sweep cell: the quadratic family at (dim, kappa, seed).
ProblemPtr sweep_problem(const SweepSpec& spec, double kappa,
                         std::uint64_t seed);

SweepResult kappa_sweep(const SweepSpec& spec);
/// kappa_sweep over at least two algorithms.
SweepResult compare_algorithms(const SweepSpec& spec);

inline constexpr const char* kSweepHeader =
    "kappa,seed,algorithm,complexity,censored";
inline constexpr const char* kCellHeader =
    "kappa,algorithm,completed,total,median,resolved";

void write_sweep_csv(const SweepResult& result, std::ostream& out);
void write_cells_csv(const SweepResult& result, std::ostream& out);
Json sweep_to_json(const SweepResult& result);

/// Metadata document written next to every trace. `wall_time` is omitted
/// when unset so that repeated runs stay byte-identical.
Json run_metadata(const BilevelOracle& problem, const RunConfig& run,
                  const IterationTrace& trace,
                  const std::optional<MultiLoopConfig>& multiloop,
                  std::optional<double> wall_time);

}  // namespace ssaid
