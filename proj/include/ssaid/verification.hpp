#pragma once

#include "ssaid/problem_io.hpp"
#include "ssaid/ssaid.hpp"

#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace ssaid {

enum class LemmaId {
  GeomSum,
  LowerTracking,
  VBound,
  BiasDecoupling,
  EstimatorBiasRecursion,
  AdjointDrift,
  MeanSquareContraction,
  CoupledRecursion,
  HypergradBias,
  HypergradMSE,
  CumulativeBias,
};

std::string lemma_name(LemmaId id);
LemmaId lemma_from_name(const std::string& name);

/// One inequality lhs <= rhs evaluated at checkpoint k.
struct LemmaRow {
  std::int64_t k = 0;
  std::string quantity;  // which inequality of the lemma
  double lhs = 0.0;
  double lhs_se = 0.0;     // jackknife standard error of lhs
  double rhs = 0.0;
  double margin = 0.0;     // rhs - lhs
  double margin_se = 0.0;  // jackknife standard error of the margin
  bool violated = false;   // margin < -3 margin_se (beyond rounding)
};

struct LemmaReport {
  LemmaId id = LemmaId::GeomSum;
  std::vector<LemmaRow> rows;
  std::int64_t replications = 0;
  double violation_fraction = 0.0;
  double violation_budget = 0.01;
  bool pass = true;
  std::vector<std::string> notes;

  /// Recomputes violation_fraction and pass from the rows.
  void finalize();
};

struct MCConfig {
  std::int64_t replications = 2000;
  std::vector<std::int64_t> checkpoints{1, 5, 20, 100};
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct GeometricSum {
  double lhs = 0.0;
  double rhs = 0.0;
};

/// lhs = sum_{t<=T} sum_{l<=t} (1 - rho)^{t-l} s_l by brute force,
/// rhs = (1 / rho) sum_{t<=T} s_t.
GeometricSum check_geometric_sum(const std::vector<double>& sigma, double rho,
                                 std::int64_t horizon);

/// Brute-force check on `count` random nonnegative sequences.
LemmaReport geometric_sum_report(std::uint64_t seed, int count = 200);

/// |v_hat_k| <= |v0| + M / mu + 1e-9 on every recorded row. Deterministic.
LemmaReport check_v_bound(const IterationTrace& trace,
                          const ProblemConstants& constants, double v0_norm);

// The Monte-Carlo checks follow one base path of the run config and, at each
// checkpoint k, branch `replications` independent copies of iteration k from
// the shared history. Expectations are conditional on that history, and
// history quantities on the right-hand sides take their realized values.

LemmaReport check_lower_tracking(const BilevelOracle& problem,
                                 const RunConfig& run, const MCConfig& mc);

/// BiasDecoupling, EstimatorBiasRecursion, AdjointDrift, MeanSquareContraction.
std::vector<LemmaReport> check_bias_recursions(const BilevelOracle& problem,
                                               const RunConfig& run,
                                               const MCConfig& mc);

/// CoupledRecursion, HypergradBias, HypergradMSE.
std::vector<LemmaReport> check_coupled_recursion(const BilevelOracle& problem,
                                                 const RunConfig& run,
                                                 const MCConfig& mc);

/// Cumulative bias and mean-square error over horizons equal to the
/// checkpoints; branches at every iteration below the last checkpoint.
LemmaReport check_cumulative_bounds(const BilevelOracle& problem,
                                    const RunConfig& run, const MCConfig& mc);

/// Every report, sharing one base path and one set of branches.
/// `vbound_horizon` is the length of the run scanned by VBound.
std::vector<LemmaReport> verify_all(const BilevelOracle& problem,
                                    const RunConfig& run, const MCConfig& mc,
                                    std::int64_t vbound_horizon);

/// The report of one lemma; runs only the checks it needs.
LemmaReport verify_lemma(const BilevelOracle& problem, const RunConfig& run,
                         const MCConfig& mc, LemmaId id,
                         std::int64_t vbound_horizon);

Json report_to_json(const LemmaReport& report);

inline constexpr const char* kSummaryHeader =
    "lemma_id,checkpoint_k,lhs,lhs_se,rhs,margin,violated";

void write_summary_csv(const std::vector<LemmaReport>& reports,
                       std::ostream& out);

/// Value of stat at the column means of `samples` (one replication per row)
/// and its leave-one-out jackknife standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
};
Estimate jackknife(const Matrix& samples,
                   const std::function<double(const Vector&)>& stat);

}  // namespace ssaid
