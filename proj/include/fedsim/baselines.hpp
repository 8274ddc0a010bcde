#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fedsim/dataio.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/glm.hpp"
#include "fedsim/parallel.hpp"
#include "fedsim/record.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/vec.hpp"

namespace fedsim {

struct BaselineOptions {
  SamplingMode sampling = SamplingMode::WithReplacement;
  int n_threads = 1;
  double divergence_limit = 1e12;
  const GlmProblem* eval = nullptr;  // metric objective; defaults to the training objective
  bool truncate_on_divergence = false;  // keep the partial record instead of throwing
};

namespace detail {

inline std::vector<IndexSampler> machine_samplers(int M, std::size_t count, rng::Stream master,
                                                  SamplingMode mode) {
  std::vector<IndexSampler> s;
  s.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) s.emplace_back(mode, count, master.derive(static_cast<std::uint64_t>(m)));
  return s;
}

inline void check_finite_norm(const std::vector<double>& v, int machine, long step, double limit) {
  const double n = vec::norm2(v);
  if (!(n <= limit)) throw DivergenceError(machine, step, n);
}

}  // namespace detail

// --- local SGD ---------------------------------------------------------
// R rounds of K local steps per machine with optional heavy-ball momentum
// (reset at each round boundary), followed by iterate averaging.
inline RunRecord local_sgd(const GlmProblem& p, std::vector<double> x0, double eta, double beta, int M,
                           int K, long long R, rng::Stream master, const BaselineOptions& opt = {}) {
  if (M < 1 || K < 1 || R < 1) throw ConfigError("need M >= 1, K >= 1, R >= 1");
  if (eta < 0) throw ConfigError("eta must be >= 0");
  const std::size_t dim = static_cast<std::size_t>(p.dim());
  std::vector<double> x = std::move(x0);
  if (x.empty()) x.assign(dim, 0.0);

  auto samplers = detail::machine_samplers(M, p.data().count(), master, opt.sampling);
  const GlmProblem& evalp = opt.eval ? *opt.eval : p;
  RunRecord rec;
  rec.observe(evalp.loss(x), 0);

  std::vector<std::vector<double>> finals(static_cast<std::size_t>(M));
  for (long long r = 0; r < R; ++r) {
    try {
    detail::for_each_machine(M, opt.n_threads, [&](int m) {
      std::vector<double> u = x, u_prev = x, g;
      for (int k = 0; k < K; ++k) {
        p.gradient_at(u, samplers[static_cast<std::size_t>(m)].next(), g);
        if (beta != 0.0 && k > 0) {
          for (std::size_t i = 0; i < dim; ++i) {
            const double next = u[i] - eta * g[i] + beta * (u[i] - u_prev[i]);
            u_prev[i] = u[i];
            u[i] = next;
          }
        } else {
          for (std::size_t i = 0; i < dim; ++i) {
            u_prev[i] = u[i];
            u[i] -= eta * g[i];
          }
        }
        detail::check_finite_norm(u, m, r * K + k + 1, opt.divergence_limit);
      }
      finals[static_cast<std::size_t>(m)] = std::move(u);
    });
    std::fill(x.begin(), x.end(), 0.0);
    for (int m = 0; m < M; ++m) vec::add(x, finals[static_cast<std::size_t>(m)]);
    vec::scale(x, 1.0 / static_cast<double>(M));
    rec.ledger.grad_calls += static_cast<std::uint64_t>(M) * static_cast<std::uint64_t>(K);
    rec.ledger.samples_drawn += static_cast<std::uint64_t>(M) * static_cast<std::uint64_t>(K);
    rec.ledger.rounds += 1;
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

// --- minibatch SGD ------------------------------------------------------
// One step per round on a batch of M*K gradients at the shared iterate, with
// optional heavy-ball momentum across rounds.
inline RunRecord minibatch_sgd(const GlmProblem& p, std::vector<double> x0, double eta, double beta,
                               int M, int K, long long R, rng::Stream master,
                               const BaselineOptions& opt = {}) {
  if (M < 1 || K < 1 || R < 1) throw ConfigError("need M >= 1, K >= 1, R >= 1");
  if (eta < 0) throw ConfigError("eta must be >= 0");
  const std::size_t dim = static_cast<std::size_t>(p.dim());
  std::vector<double> x = std::move(x0);
  if (x.empty()) x.assign(dim, 0.0);
  std::vector<double> x_prev = x;

  auto samplers = detail::machine_samplers(M, p.data().count(), master, opt.sampling);
  const GlmProblem& evalp = opt.eval ? *opt.eval : p;
  RunRecord rec;
  rec.observe(evalp.loss(x), 0);

  std::vector<std::vector<double>> partial(static_cast<std::size_t>(M));
  for (long long r = 0; r < R; ++r) {
    try {
    detail::for_each_machine(M, opt.n_threads, [&](int m) {
      std::vector<double> acc(dim, 0.0), g;
      for (int k = 0; k < K; ++k) {
        p.gradient_at(x, samplers[static_cast<std::size_t>(m)].next(), g);
        vec::add(acc, g);
      }
      partial[static_cast<std::size_t>(m)] = std::move(acc);
    });
    std::vector<double> gbar(dim, 0.0);
    for (int m = 0; m < M; ++m) vec::add(gbar, partial[static_cast<std::size_t>(m)]);
    vec::scale(gbar, 1.0 / (static_cast<double>(M) * static_cast<double>(K)));

    if (beta != 0.0 && r > 0) {
      for (std::size_t i = 0; i < dim; ++i) {
        const double next = x[i] - eta * gbar[i] + beta * (x[i] - x_prev[i]);
        x_prev[i] = x[i];
        x[i] = next;
      }
    } else {
      for (std::size_t i = 0; i < dim; ++i) {
        x_prev[i] = x[i];
        x[i] -= eta * gbar[i];
      }
    }
    detail::check_finite_norm(x, 0, r + 1, opt.divergence_limit);
    rec.ledger.grad_calls += static_cast<std::uint64_t>(M) * static_cast<std::uint64_t>(K);
    rec.ledger.samples_drawn += static_cast<std::uint64_t>(M) * static_cast<std::uint64_t>(K);
    rec.ledger.rounds += 1;
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

// --- accelerated local SGD ----------------------------------------------
enum class FedAcVariant { I, II };

struct FedAcParams {
  double eta = 0;
  double gamma = 0;
  double alpha = 0;
  double beta = 0;
  double lambda_internal = 0;  // regularization added inside the oracle only
};

// Coupling coefficients from the step size, an estimate of the strong
// convexity, and the local step count.
inline FedAcParams fedac_params(FedAcVariant variant, double eta, double strong_convexity, int K) {
  if (!(eta > 0)) throw ConfigError("eta must be > 0");
  if (!(strong_convexity > 0))
    throw ConfigError("coupling formulas need a positive strong-convexity estimate; "
                      "set alpha/beta/gamma explicitly for the non-strongly-convex case");
  if (K < 1) throw ConfigError("K must be >= 1");
  FedAcParams p;
  p.eta = eta;
  const double lam = strong_convexity;
  p.gamma = std::max(std::sqrt(eta / (lam * static_cast<double>(K))), eta);
  if (variant == FedAcVariant::I) {
    p.alpha = 1.0 / (p.gamma * lam);
    p.beta = p.alpha + 1.0;
  } else {
    p.alpha = 1.5 / (p.gamma * lam) - 0.5;
    if (p.alpha == 1.0) throw ConfigError("variant II degenerate: alpha = 1");
    p.beta = (2.0 * p.alpha * p.alpha - 1.0) / (p.alpha - 1.0);
  }
  return p;
}

// K*R coupled steps; the (x, x_ag) pair is averaged across machines at every
// K-th step. The tracked metric is the problem objective at the averaged
// aggregate iterate (the internal regularization only shapes the oracle).
inline RunRecord fedac(const GlmProblem& p, std::vector<double> x0, const FedAcParams& prm, int M, int K,
                       long long R, rng::Stream master, const BaselineOptions& opt = {}) {
  if (M < 1 || K < 1 || R < 1) throw ConfigError("need M >= 1, K >= 1, R >= 1");
  if (prm.alpha == 0 || prm.beta == 0) throw ConfigError("alpha and beta must be nonzero");
  const std::size_t dim = static_cast<std::size_t>(p.dim());
  std::vector<double> x = std::move(x0);
  if (x.empty()) x.assign(dim, 0.0);
  std::vector<double> xag = x;

  auto samplers = detail::machine_samplers(M, p.data().count(), master, opt.sampling);
  const GlmProblem& evalp = opt.eval ? *opt.eval : p;
  RunRecord rec;
  rec.observe(evalp.loss(xag), 0);

  const double inv_beta = 1.0 / prm.beta;
  const double inv_alpha = 1.0 / prm.alpha;
  std::vector<std::vector<double>> vx(static_cast<std::size_t>(M)), vag(static_cast<std::size_t>(M));

  for (long long r = 0; r < R; ++r) {
    try {
    detail::for_each_machine(M, opt.n_threads, [&](int m) {
      std::vector<double> xm = x, xagm = xag, xmd(dim), g;
      for (int k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < dim; ++i) xmd[i] = inv_beta * xm[i] + (1.0 - inv_beta) * xagm[i];
        p.gradient_at(xmd, samplers[static_cast<std::size_t>(m)].next(), g);
        if (prm.lambda_internal != 0.0) vec::axpy(g, prm.lambda_internal, xmd);
        for (std::size_t i = 0; i < dim; ++i) {
          xagm[i] = xmd[i] - prm.eta * g[i];
          xm[i] = (1.0 - inv_alpha) * xm[i] + inv_alpha * xmd[i] - prm.gamma * g[i];
        }
        detail::check_finite_norm(xm, m, r * K + k + 1, opt.divergence_limit);
      }
      vx[static_cast<std::size_t>(m)] = std::move(xm);
      vag[static_cast<std::size_t>(m)] = std::move(xagm);
    });
    std::fill(x.begin(), x.end(), 0.0);
    std::fill(xag.begin(), xag.end(), 0.0);
    for (int m = 0; m < M; ++m) {
      vec::add(x, vx[static_cast<std::size_t>(m)]);
      vec::add(xag, vag[static_cast<std::size_t>(m)]);
    }
    vec::scale(x, 1.0 / static_cast<double>(M));
    vec::scale(xag, 1.0 / static_cast<double>(M));
    rec.ledger.grad_calls += static_cast<std::uint64_t>(M) * static_cast<std::uint64_t>(K);
    rec.ledger.samples_drawn += static_cast<std::uint64_t>(M) * static_cast<std::uint64_t>(K);
    rec.ledger.rounds += 1;
    rec.observe(evalp.loss(xag), rec.ledger.rounds);
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
