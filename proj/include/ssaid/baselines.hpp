#pragma once

#include "ssaid/ssaid.hpp"

#include <optional>
#include <string>

namespace ssaid {

/// Multi-loop stochastic AID: N lower SGD steps and Q Richardson steps on
/// the adjoint system per outer step, then one upper step.
struct MultiLoopConfig {
  std::int64_t inner_iters = 1;   // N
  std::int64_t solver_iters = 1;  // Q
  std::optional<double> alpha;    // default 1/L
  std::optional<double> eta;      // default 1/L
  std::optional<double> beta;     // default: the single-loop rule
  bool warm_start = true;
};

/// N = Q = ceil(kappa log K), the usual multi-loop accuracy schedule.
MultiLoopConfig multiloop_log_preset(const BilevelOracle& problem,
                                     std::int64_t horizon);
/// N = Q = n.
MultiLoopConfig multiloop_fixed_preset(std::int64_t n);

std::string multiloop_name(const MultiLoopConfig& config);

/// Draws of inner step j of outer step k use sub-index j of the
/// single-loop streams, so N = Q = 1 with warm start replays the
/// single-loop method bit for bit.
SSAIDState multiloop_step(const SSAIDState& state, const BilevelOracle& problem,
                          const MultiLoopConfig& config, std::uint64_t seed);

IterationTrace run_multiloop(const BilevelOracle& problem,
                             const MultiLoopConfig& config,
                             const RunConfig& run);

}  // namespace ssaid
