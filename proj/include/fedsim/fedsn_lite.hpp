#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fedsim/dataio.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/glm.hpp"
#include "fedsim/quadratic.hpp"
#include "fedsim/record.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct LiteOptions {
  double nu = 1.25;   // damping numerator
  double beta = 0.0;  // inner heavy-ball weight
  SamplingMode sampling = SamplingMode::WithReplacement;
  int n_threads = 1;
  double divergence_limit = 1e12;
  const GlmProblem* eval = nullptr;  // metric objective; defaults to the training objective
  bool truncate_on_divergence = false;
};

// Practical variant: each of R outer steps solves the unregularized local
// quadratic (uniform iterate averaging, constant step eta) in one round, then
// damps the update by nu / (1 + sqrt(s)) where s is a single-sample estimate
// of the curvature decrement delta^T H(x) delta, clamped at 0.
inline RunRecord fedsn_lite(const GlmProblem& p, std::vector<double> x0, int M, int K, long long R,
                            double eta, rng::Stream master, const LiteOptions& opt = {}) {
  if (M < 1 || K < 1 || R < 1) throw ConfigError("need M >= 1, K >= 1, R >= 1");
  if (!(opt.nu > 0)) throw ConfigError("nu must be > 0");
  const std::size_t dim = static_cast<std::size_t>(p.dim());
  std::vector<double> x = std::move(x0);
  if (x.empty()) x.assign(dim, 0.0);

  std::vector<IndexSampler> samplers;
  samplers.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m)
    samplers.emplace_back(opt.sampling, p.data().count(), master.derive(static_cast<std::uint64_t>(m)));
  // one extra oracle call per outer step, from its own substream
  IndexSampler decrement_sampler(opt.sampling, p.data().count(), master.derive(static_cast<std::uint64_t>(M)));

  const GlmProblem& evalp = opt.eval ? *opt.eval : p;
  RunRecord rec;
  rec.observe(evalp.loss(x), 0);

  const Schedule sched = Schedule::constant(eta, K);
  std::vector<double> hv(dim, 0.0);
  for (long long t = 0; t < R; ++t) {
    try {
      const QuadSubproblem sub{&p, x, 1.0, 0.0, OracleCase::SameSample};
      const SolveOptions sopt{opt.beta, opt.n_threads, opt.divergence_limit};
      const std::vector<double> delta =
          regularized_quadratic_solver(sub, M, sched, samplers, sopt, &rec.ledger);

      const std::size_t z = decrement_sampler.next();
      rec.ledger.hvp_calls += 1;
      rec.ledger.samples_drawn += 1;
      p.hvp_at(x, delta, z, hv);
      const double s = std::max(0.0, vec::dot(delta, hv));
      const double step = opt.nu / (1.0 + std::sqrt(s));
      vec::axpy(x, step, delta);
      rec.observe(evalp.loss(x), rec.ledger.rounds);
    } catch (const DivergenceError& e) {
      if (!opt.truncate_on_divergence) throw;
      rec.diverged = true;
      rec.note += (rec.note.empty() ? "" : "; ");
      rec.note += e.what();
      break;
    }
  }
  return rec;
}

}  // namespace fedsim
