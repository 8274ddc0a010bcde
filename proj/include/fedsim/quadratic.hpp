#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "fedsim/errors.hpp"
#include "fedsim/glm.hpp"
#include "fedsim/parallel.hpp"
#include "fedsim/record.hpp"
#include "fedsim/vec.hpp"

namespace fedsim {

enum class OracleCase {
  DifferentSamples,  // gradient and curvature use independent draws
  SameSample,        // one draw feeds both
};

// Local model around a base point x:
//   Q_lambda(u) = 1/2 u^T (xi_bar H(x) + lambda I) u + grad F(x)^T u
// accessed only through single-sample oracles.
struct QuadSubproblem {
  const GlmProblem* problem = nullptr;
  std::vector<double> x;
  double xi_bar = 1.0;
  double lambda = 0.0;
  OracleCase oracle_case = OracleCase::SameSample;
};

// gamma(u) = xi_bar h(x,u;z') + lambda u + g(x;z); unbiased for grad Q_lambda(u).
inline void quad_gradient_access(const QuadSubproblem& sub, std::span<const double> u,
                                 IndexSampler& sampler, std::vector<double>& grad_scratch,
                                 std::vector<double>& out) {
  const std::size_t zg = sampler.next();
  const std::size_t zh = (sub.oracle_case == OracleCase::DifferentSamples) ? sampler.next() : zg;
  sub.problem->hvp_at(sub.x, u, zh, out);
  if (sub.xi_bar != 1.0) vec::scale(out, sub.xi_bar);
  if (sub.lambda != 0.0) vec::axpy(out, sub.lambda, u);
  sub.problem->gradient_at(sub.x, zg, grad_scratch);
  vec::add(out, grad_scratch);
}

// Deterministic route to the same quantity: grad Q_lambda(u) from the full
// gradient and exact Hessian, for reference solves and noise-free tests.
class ExactQuadOracle {
 public:
  ExactQuadOracle(const GlmProblem& p, std::span<const double> x, double xi_bar, double lambda)
      : A_(p.dense_hessian(x)), g0_(p.full_gradient(x)), xi_(xi_bar), lambda_(lambda) {}

  void operator()(std::span<const double> u, std::vector<double>& out) const {
    const auto d = static_cast<Eigen::Index>(u.size());
    Eigen::Map<const Eigen::VectorXd> uv(u.data(), d);
    Eigen::VectorXd r = xi_ * (A_ * uv);
    out.assign(u.size(), 0.0);
    for (Eigen::Index i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] = r(i) + lambda_ * u[i] + g0_[i];
  }

  double value(std::span<const double> u) const {
    const auto d = static_cast<Eigen::Index>(u.size());
    Eigen::Map<const Eigen::VectorXd> uv(u.data(), d);
    const double quad = 0.5 * (xi_ * uv.dot(A_ * uv) + lambda_ * uv.squaredNorm());
    return quad + vec::dot(g0_, u);
  }

  const std::vector<double>& base_gradient() const { return g0_; }

 private:
  Eigen::MatrixXd A_;
  std::vector<double> g0_;
  double xi_, lambda_;
};

// Step sizes and averaging weights for the K-step subsolver run. Two regimes
// split on K relative to the conditioning; a constant mode covers the
// unregularized variant (uniform weights, fixed step).
class Schedule {
 public:
  static Schedule table(double lambda, int K, double H, double rho, double xi_bar) {
    if (lambda <= 0) throw ConfigError("table schedule needs lambda > 0");
    if (K < 1) throw ConfigError("K must be >= 1");
    Schedule s;
    s.constant_ = false;
    s.K_ = K;
    s.lambda_ = lambda;
    const double cap = std::max(xi_bar * H + lambda, rho * rho / lambda);
    s.eta_lambda_ = 0.5 * std::min(1.0 / (xi_bar * H + lambda), lambda / (rho * rho));
    s.pivot_ = 2.0 / lambda * cap;
    s.small_k_ = (static_cast<double>(K) <= s.pivot_);
    s.a_ = 8.0 / lambda * cap;
    s.half_ = K / 2;
    s.decay_base_ = 1.0 - lambda * s.eta_lambda_ + s.eta_lambda_ * s.eta_lambda_ * rho * rho;
    return s;
  }

  static Schedule constant(double eta, int K) {
    if (eta <= 0) throw ConfigError("constant schedule needs eta > 0");
    if (K < 1) throw ConfigError("K must be >= 1");
    Schedule s;
    s.constant_ = true;
    s.K_ = K;
    s.eta_lambda_ = eta;
    return s;
  }

  int K() const { return K_; }
  bool is_constant() const { return constant_; }
  bool small_k() const { return small_k_; }
  double eta_lambda() const { return eta_lambda_; }
  double pivot() const { return pivot_; }
  double a() const { return a_; }

  double eta(int k) const {
    if (constant_ || small_k_ || k < half_) return eta_lambda_;
    return 4.0 / (lambda_ * (a_ + k - half_));
  }

  double w(int k) const {
    if (constant_) return 1.0 / static_cast<double>(K_);
    if (small_k_) return std::pow(decay_base_, -(k + 1));
    if (k < half_) return 0.0;
    return a_ + k - half_ - 1;
  }

  double weight_sum() const {
    double s = 0;
    for (int k = 0; k < K_; ++k) s += w(k);
    return s;
  }

 private:
  bool constant_ = true;
  bool small_k_ = false;
  int K_ = 1;
  int half_ = 0;
  double lambda_ = 0;
  double eta_lambda_ = 0;
  double pivot_ = 0;
  double a_ = 0;
  double decay_base_ = 1;
};

struct SolveOptions {
  double beta = 0.0;  // heavy-ball weight on the inner iterates
  int n_threads = 1;
  double divergence_limit = 1e12;
};

namespace detail {

// One machine's K momentum-SGD steps from u = 0, returning the weighted sum
// of iterates u_1..u_K with weights w_0..w_{K-1} (the starting point never
// contributes).
template <class GammaFn>
std::vector<double> weighted_sgd_single(int machine, std::size_t dim, const Schedule& sched, double beta,
                                        GammaFn&& gamma, double divergence_limit) {
  std::vector<double> u(dim, 0.0), u_prev(dim, 0.0), g(dim, 0.0), acc(dim, 0.0);
  const int K = sched.K();
  for (int k = 0; k < K; ++k) {
    gamma(machine, std::span<const double>(u), g);
    const double eta = sched.eta(k);
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
    const double nrm = vec::norm2(u);
    if (!(nrm <= divergence_limit)) throw DivergenceError(machine, k + 1, nrm);
    const double wk = sched.w(k);
    if (wk != 0.0) vec::axpy(acc, wk, u);
  }
  return acc;
}

}  // namespace detail

// Runs M independent K-step SGD chains and averages their weighted iterates;
// the single aggregation is the only cross-machine exchange. Machine results
// are reduced in ascending index order regardless of n_threads, so the output
// is a pure function of the inputs.
template <class GammaFn>
std::vector<double> one_shot_weighted_average(std::size_t dim, int M, const Schedule& sched, double beta,
                                              GammaFn&& gamma, int n_threads = 1,
                                              double divergence_limit = 1e12) {
  if (M < 1) throw ConfigError("M must be >= 1");
  const double wsum = sched.weight_sum();
  if (!(wsum > 0)) throw ConfigError("schedule weights sum to zero");

  std::vector<std::vector<double>> partial(static_cast<std::size_t>(M));
  detail::for_each_machine(M, n_threads, [&](int m) {
    partial[static_cast<std::size_t>(m)] =
        detail::weighted_sgd_single(m, dim, sched, beta, gamma, divergence_limit);
  });

  std::vector<double> out(dim, 0.0);
  for (int m = 0; m < M; ++m) vec::add(out, partial[static_cast<std::size_t>(m)]);
  vec::scale(out, 1.0 / (static_cast<double>(M) * wsum));
  return out;
}

// Stochastic solve of the local quadratic model in one communication round.
// samplers[m] belongs to machine m and persists across calls, so sample
// consumption is attributable per machine.
inline std::vector<double> regularized_quadratic_solver(const QuadSubproblem& sub, int M,
                                                        const Schedule& sched,
                                                        std::span<IndexSampler> samplers,
                                                        const SolveOptions& opt = {},
                                                        OracleLedger* ledger = nullptr) {
  if (static_cast<int>(samplers.size()) < M) throw ConfigError("need one sampler per machine");
  const std::size_t dim = static_cast<std::size_t>(sub.problem->dim());
  const int K = sched.K();
  if (ledger) {
    const std::uint64_t accesses = static_cast<std::uint64_t>(M) * static_cast<std::uint64_t>(K);
    ledger->quad_accesses += accesses;
    ledger->grad_calls += accesses;
    ledger->hvp_calls += accesses;
    ledger->samples_drawn += accesses * (sub.oracle_case == OracleCase::DifferentSamples ? 2 : 1);
    ledger->rounds += 1;
    ledger->subsolver_calls += 1;
  }
  struct Scratch {
    std::vector<double> g;
  };
  std::vector<Scratch> scratch(static_cast<std::size_t>(M));
  auto gamma = [&](int m, std::span<const double> u, std::vector<double>& out) {
    quad_gradient_access(sub, u, samplers[static_cast<std::size_t>(m)],
                         scratch[static_cast<std::size_t>(m)].g, out);
  };
  return one_shot_weighted_average(dim, M, sched, opt.beta, gamma, opt.n_threads, opt.divergence_limit);
}

struct ExactQuadSolution {
  std::vector<double> u;
  double r = 0;  // |u|
  bool floored = false;
};

// Dense minimizer of Q_lambda: (xi_bar H(x) + lambda I) u = -grad F(x).
// Singular systems (possible at lambda = 0) get a 1e-10 diagonal floor.
inline ExactQuadSolution exact_solve(const GlmProblem& p, std::span<const double> x, double xi_bar,
                                     double lambda) {
  const int d = p.dim();
  Eigen::MatrixXd A = p.dense_hessian(x);
  if (xi_bar != 1.0) A *= xi_bar;
  A.diagonal().array() += lambda;
  const std::vector<double> g = p.full_gradient(x);
  Eigen::Map<const Eigen::VectorXd> gv(g.data(), d);

  ExactQuadSolution sol;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  Eigen::VectorXd u;
  if (llt.info() == Eigen::Success) u = llt.solve(-gv);
  if (llt.info() != Eigen::Success || !u.allFinite()) {
    A.diagonal().array() += 1e-10;
    sol.floored = true;
    u = Eigen::LDLT<Eigen::MatrixXd>(A).solve(-gv);
    if (!u.allFinite()) throw Error("exact quadratic solve failed even with diagonal floor");
  }
  sol.u.assign(u.data(), u.data() + d);
  sol.r = vec::norm2(sol.u);
  return sol;
}

}  // namespace fedsim
