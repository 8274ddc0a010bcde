#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/vec.hpp"

namespace fedsim {

struct TrustSearchConfig {
  double r_bar = 0;       // target update radius
  double lambda_min = 0;  // smallest grid value
  int N = 1;              // grid size; grid is lambda_min * 1.5^(n-1), n = 1..N
  int C = 1;              // repeated solves per grid iteration (majority vote)
};

struct TrustSearchTrace {
  enum class Exit { Accepted, ZeroReturn, Fallback };
  Exit exit = Exit::ZeroReturn;
  int grid_iterations = 0;
  int subsolver_calls = 0;
  std::vector<double> lambda_path;
  double final_lambda = 0;
  bool projected = false;  // the returned vector was scaled down to norm 5 r_bar
};

inline std::vector<double> trust_lambda_grid(double lambda_min, int N) {
  std::vector<double> g(static_cast<std::size_t>(N));
  double v = lambda_min;
  for (int n = 0; n < N; ++n, v *= 1.5) g[static_cast<std::size_t>(n)] = v;
  return g;
}

// Longest possible run of grid iterations: halving an N-point grid (the
// strictly-above-median side keeps floor(s/2) points) empties after
// floor(log2 N) + 1 steps.
inline int worst_case_grid_iterations(int N) {
  int iters = 0;
  for (int s = N; s > 0; s /= 2) ++iters;
  return iters;
}

inline int worst_case_subsolver_calls(int N, int C) { return C * worst_case_grid_iterations(N) + 1; }

namespace detail {

inline std::vector<double> clip_to_radius(std::vector<double> u, double radius, bool* projected) {
  const double nrm = vec::norm2(u);
  if (nrm > radius && nrm > 0) {
    vec::scale(u, radius / nrm);
    if (projected) *projected = true;
  }
  return u;
}

}  // namespace detail

// Binary search over a geometric regularization grid for a solution of norm
// comparable to r_bar. Each grid iteration solves C times at the median
// lambda and votes on where the solution norm concentrates:
//   - majority in [3/2 r_bar, 7/2 r_bar]: accept; one more solve is returned
//     (clipped to norm 5 r_bar),
//   - majority <= 5/2 r_bar: the solution is small, recurse on smaller lambda,
//   - majority >  5/2 r_bar: too large, recurse on larger lambda,
//   - no majority: give up and return 0.
// An exhausted grid falls back to a solve at lambda_min, clipped the same
// way, so the returned norm never exceeds 5 r_bar.
template <class SubSolver>
std::vector<double> constrained_quadratic_search(std::size_t dim, const TrustSearchConfig& cfg,
                                                 SubSolver&& solve, TrustSearchTrace* trace = nullptr) {
  if (cfg.N < 1) throw ConfigError("grid size N must be >= 1");
  if (cfg.C < 1) throw ConfigError("vote count C must be >= 1");
  if (!(cfg.lambda_min > 0)) throw ConfigError("lambda_min must be > 0");
  if (!(cfg.r_bar > 0)) throw ConfigError("r_bar must be > 0");

  const std::vector<double> grid = trust_lambda_grid(cfg.lambda_min, cfg.N);
  std::size_t lo = 0, hi = grid.size();  // active subrange [lo, hi)

  TrustSearchTrace local;
  TrustSearchTrace& tr = trace ? *trace : local;
  tr = TrustSearchTrace{};

  const double band_lo = 1.5 * cfg.r_bar;
  const double band_hi = 3.5 * cfg.r_bar;
  const double split = 2.5 * cfg.r_bar;

  while (lo < hi) {
    ++tr.grid_iterations;
    const std::size_t mid = lo + (hi - lo - 1) / 2;  // lower median
    const double lambda = grid[mid];
    tr.lambda_path.push_back(lambda);

    int in_band = 0, below_split = 0, above_split = 0;
    for (int c = 0; c < cfg.C; ++c) {
      ++tr.subsolver_calls;
      const double nrm = vec::norm2(solve(lambda));
      if (nrm >= band_lo && nrm <= band_hi) ++in_band;
      if (nrm <= split) ++below_split;
      if (nrm > split) ++above_split;
    }

    if (2 * in_band > cfg.C) {
      ++tr.subsolver_calls;
      tr.exit = TrustSearchTrace::Exit::Accepted;
      tr.final_lambda = lambda;
      return detail::clip_to_radius(solve(lambda), 5.0 * cfg.r_bar, &tr.projected);
    }
    if (2 * below_split > cfg.C) {
      hi = mid;  // keep lambdas strictly below the median
    } else if (2 * above_split > cfg.C) {
      lo = mid + 1;  // keep lambdas strictly above
    } else {
      tr.exit = TrustSearchTrace::Exit::ZeroReturn;
      return std::vector<double>(dim, 0.0);
    }
  }

  ++tr.subsolver_calls;
  tr.exit = TrustSearchTrace::Exit::Fallback;
  tr.final_lambda = cfg.lambda_min;
  return detail::clip_to_radius(solve(cfg.lambda_min), 5.0 * cfg.r_bar, &tr.projected);
}

}  // namespace fedsim
