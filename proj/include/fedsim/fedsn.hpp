#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fedsim/dataio.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/glm.hpp"
#include "fedsim/quadratic.hpp"
#include "fedsim/record.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/trust_region.hpp"

namespace fedsim {

inline int ceil_log2(int n) {
  if (n <= 1) return 0;
  return static_cast<int>(std::bit_width(static_cast<unsigned>(n - 1)));
}

// Outer-iteration count scaling constant; grows with the local step count and
// the curvature-distortion level alpha * B.
inline double fedsn_zeta(int K, double alpha, double B) {
  const double inner = 80.0 + 32.0 * std::log(static_cast<double>(K)) + 24.0 * std::log1p(2.0 * alpha * B);
  return 4096.0 + 4.0 * inner * inner;
}

// Smallest admissible grid regularization; terms whose denominators require
// larger K are skipped (callers get a small-K warning separately).
inline double fedsn_lambda_min(double H, double rho, double sigma, int M, int K, double r_bar) {
  const double e = std::exp(1.0);
  const double sqrt_k = std::sqrt(static_cast<double>(K));
  const double sqrt_mk = std::sqrt(static_cast<double>(M) * static_cast<double>(K));
  const double log_grid = std::log(51200.0);
  double v = 2.0 * rho / sqrt_k;
  v = std::max(v, 32.0 * e * H * log_grid / static_cast<double>(K));
  v = std::max(v, 4.0 * rho * std::sqrt(2.0 * log_grid) / sqrt_k);
  v = std::max(v, 320.0 * std::sqrt(2.0) * rho / sqrt_mk);
  v = std::max(v, 320.0 * sigma / (r_bar * sqrt_mk));
  if (K > 2) v = std::max(v, 2.0 * e * H / static_cast<double>(K - 2));
  if (K > 16) v = std::max(v, 8.0 * e * H / static_cast<double>(K - 16));
  return v;
}

struct Hyperparams {
  double zeta = 0;
  long long T = 0;
  double r_bar = 0;
  double xi_bar = 1;
  double lambda_min = 0;
  int N = 1;
  int C = 1;
  long long required_rounds = 0;  // T * (C * ceil(log2 N) + 2)
  std::vector<std::string> warnings;
};

// Derives the full parameter set from (M, K, R) and the problem constants, in
// dependency order: zeta -> T -> r_bar -> xi_bar -> lambda_min -> N -> C.
// All logarithms are natural.
inline Hyperparams derive_hyperparams(int M, int K, long long R, const Constants& c) {
  if (M < 1 || K < 1 || R < 1) throw ConfigError("need M >= 1, K >= 1, R >= 1");
  if (!(c.H > 0) || !(c.B > 0)) throw ConfigError("constants H and B must be positive");
  Hyperparams hp;
  if (K < 175) hp.warnings.push_back("K = " + std::to_string(K) + " is below the analyzed regime (K >= 175)");

  hp.zeta = fedsn_zeta(K, c.alpha, c.B);
  const double ratio = static_cast<double>(R) / hp.zeta;
  const double log_ratio = std::log(ratio);
  const double t_real = std::floor(static_cast<double>(R) / (4.0 * hp.zeta) * log_ratio * log_ratio);
  if (t_real < 1.0) {
    hp.T = 1;
    hp.warnings.push_back("schedule gives T < 1 at R = " + std::to_string(R) + "; forcing T = 1");
  } else {
    hp.T = static_cast<long long>(t_real);
  }

  const double tk = static_cast<double>(hp.T) * static_cast<double>(K);
  const double radius_cap = (c.alpha > 0) ? 1.0 / (5.0 * c.alpha) : std::numeric_limits<double>::infinity();
  hp.r_bar = std::min(32.0 * c.B / static_cast<double>(hp.T) * std::log(tk), radius_cap);
  if (!(hp.r_bar > 0)) throw ConfigError("derived r_bar is not positive (T*K too small?)");
  hp.xi_bar = std::exp(c.alpha * hp.r_bar);

  hp.lambda_min = fedsn_lambda_min(c.H, c.rho, c.sigma, M, K, hp.r_bar);
  if (!(hp.lambda_min > 0)) throw ConfigError("derived lambda_min is not positive");

  const double reach = c.H * (c.B + 5.0 * static_cast<double>(hp.T) * hp.r_bar) / (3.0 * hp.lambda_min * hp.r_bar);
  const double n_real = std::ceil(1.0 + 2.5 * std::log(reach));
  if (n_real < 1.0) {
    hp.N = 1;
    hp.warnings.push_back("grid formula gives N < 1; clamping to N = 1");
  } else {
    hp.N = static_cast<int>(n_real);
  }

  const double e = std::exp(1.0);
  const double vote_arg = static_cast<double>(ceil_log2(hp.N)) *
                          (4.0 + e * c.H / hp.lambda_min +
                           80.0 * c.H * (c.B + 5.0 * static_cast<double>(hp.T) * hp.r_bar) /
                               (hp.lambda_min * hp.r_bar));
  const double c_real = std::ceil(8.0 * std::log(vote_arg));
  if (!(c_real >= 1.0)) {
    hp.C = 1;
    hp.warnings.push_back("vote formula gives C < 1; clamping to C = 1");
  } else {
    hp.C = static_cast<int>(c_real);
  }

  hp.required_rounds = hp.T * (static_cast<long long>(hp.C) * ceil_log2(hp.N) + 2);
  return hp;
}

// Iterates the budget requirement to a fixed point; in the forced-T regime the
// requirement does not depend on R, so one step suffices.
inline long long feasible_rounds_estimate(int M, int K, long long R_hint, const Constants& c) {
  long long r = std::max<long long>(R_hint, 1);
  for (int i = 0; i < 64; ++i) {
    const Hyperparams hp = derive_hyperparams(M, K, r, c);
    if (hp.required_rounds <= r) return r;
    r = hp.required_rounds;
  }
  return r;
}

struct FedsnOptions {
  OracleCase oracle_case = OracleCase::SameSample;
  SamplingMode sampling = SamplingMode::WithReplacement;
  int n_threads = 1;
  double divergence_limit = 1e12;
  bool exact_oracle = false;  // noise-free gradient access (reference mode)
  const GlmProblem* eval = nullptr;  // metric objective; defaults to the training objective
  bool truncate_on_divergence = false;
};

// Stochastic Newton outer loop: T trust-region-constrained quadratic solves,
// each spending one communication round per subsolver call. Momentum is not
// used on the inner chains here.
inline RunRecord fedsn(const GlmProblem& p, std::vector<double> x0, int M, int K, long long R,
                       const Constants& c, rng::Stream master, const FedsnOptions& opt = {},
                       Hyperparams* hp_out = nullptr) {
  const Hyperparams hp = derive_hyperparams(M, K, R, c);
  if (hp_out) *hp_out = hp;
  if (hp.required_rounds > R)
    throw ConfigError("round budget R = " + std::to_string(R) + " cannot cover T * (C ceil(log2 N) + 2) = " +
                      std::to_string(hp.required_rounds) + "; smallest workable budget is about " +
                      std::to_string(feasible_rounds_estimate(M, K, R, c)));

  const std::size_t dim = static_cast<std::size_t>(p.dim());
  std::vector<double> x = std::move(x0);
  if (x.empty()) x.assign(dim, 0.0);

  std::vector<IndexSampler> samplers;
  samplers.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m)
    samplers.emplace_back(opt.sampling, p.data().count(), master.derive(static_cast<std::uint64_t>(m)));

  const GlmProblem& evalp = opt.eval ? *opt.eval : p;
  RunRecord rec;
  for (const auto& w : hp.warnings) rec.note += (rec.note.empty() ? "" : "; ") + w;
  rec.observe(evalp.loss(x), 0);

  const TrustSearchConfig cfg{hp.r_bar, hp.lambda_min, hp.N, hp.C};

  // Every subsolver call costs one communication round. The search is cut off
  // mid-step the moment the budget runs out, so consumed rounds never exceed
  // R even in the corner where a step's worst case tops the per-step formula.
  struct BudgetStop {};
  auto charge_round = [&] {
    if (rec.ledger.rounds >= static_cast<std::uint64_t>(R)) throw BudgetStop{};
  };

  for (long long t = 0; t < hp.T; ++t) {
    std::vector<double> delta;
    try {
      if (opt.exact_oracle) {
        const ExactQuadOracle exact(p, x, hp.xi_bar, 0.0);
        auto solve = [&](double lambda) {
          charge_round();
          const Schedule sched = Schedule::table(lambda, K, c.H, c.rho, hp.xi_bar);
          rec.ledger.rounds += 1;
          rec.ledger.subsolver_calls += 1;
          rec.ledger.quad_accesses += static_cast<std::uint64_t>(M) * static_cast<std::uint64_t>(K);
          auto gamma = [&](int, std::span<const double> u, std::vector<double>& out) {
            exact(u, out);
            if (lambda != 0.0) vec::axpy(out, lambda, u);
          };
          return one_shot_weighted_average(dim, M, sched, 0.0, gamma, opt.n_threads, opt.divergence_limit);
        };
        delta = constrained_quadratic_search(dim, cfg, solve);
      } else {
        QuadSubproblem sub{&p, x, hp.xi_bar, 0.0, opt.oracle_case};
        auto solve = [&](double lambda) {
          charge_round();
          sub.lambda = lambda;
          const Schedule sched = Schedule::table(lambda, K, c.H, c.rho, hp.xi_bar);
          const SolveOptions sopt{0.0, opt.n_threads, opt.divergence_limit};
          return regularized_quadratic_solver(sub, M, sched, samplers, sopt, &rec.ledger);
        };
        delta = constrained_quadratic_search(dim, cfg, solve);
      }
      vec::add(x, delta);
    } catch (const BudgetStop&) {
      rec.note += (rec.note.empty() ? "" : "; ");
      rec.note += "stopped during outer step " + std::to_string(t) + ": communication budget exhausted";
      break;
    } catch (const DivergenceError& e) {
      if (!opt.truncate_on_divergence) throw;
      rec.diverged = true;
      rec.note += (rec.note.empty() ? "" : "; ");
      rec.note += e.what();
      break;
    }
    rec.observe(evalp.loss(x), rec.ledger.rounds);
  }
  return rec;
}

}  // namespace fedsim
