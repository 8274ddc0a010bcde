#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace fedsim {

// Exact resource accounting, incremented at the call sites that spend the
// resource. "quad_accesses" counts combined gradient/curvature oracle calls
// inside quadratic subsolves; "samples_drawn" counts raw index draws (a
// two-sample access draws twice).
struct OracleLedger {
  std::uint64_t grad_calls = 0;
  std::uint64_t hvp_calls = 0;
  std::uint64_t quad_accesses = 0;
  std::uint64_t samples_drawn = 0;
  std::uint64_t rounds = 0;           // communication rounds consumed
  std::uint64_t subsolver_calls = 0;  // quadratic subsolver invocations
};

// One simulated optimization run. metric is recorded at every observable
// point (round boundaries for one-round-per-step methods, outer steps
// otherwise); rounds_at[i] is the communication budget spent when
// metric_trajectory[i] was observed. Index 0 is the starting point.
struct RunRecord {
  std::vector<double> metric_trajectory;
  std::vector<std::uint64_t> rounds_at;
  double best = std::numeric_limits<double>::infinity();
  double final_metric = std::numeric_limits<double>::infinity();
  OracleLedger ledger;
  bool diverged = false;
  std::string note;

  void observe(double m, std::uint64_t rounds) {
    metric_trajectory.push_back(m);
    rounds_at.push_back(rounds);
    if (m < best) best = m;
    final_metric = m;
  }
};

}  // namespace fedsim
